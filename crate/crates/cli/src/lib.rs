//! File formats shared between the `difftrim` binary and its integration
//! tests.

pub mod io;
