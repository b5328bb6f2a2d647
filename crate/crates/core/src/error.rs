use thiserror::Error;

/// Errors produced by loaders, validators and evaluators.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid network: {0}")]
    Network(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("inconsistent data for individual {individual} in period {period}: {reason}")]
    Inconsistent {
        individual: usize,
        period: usize,
        reason: String,
    },

    #[error("estimation failed: {0}")]
    EstimationFailed(String),

    #[error(
        "scenario budget exceeded: estimated {estimate} branches, budget {budget}; \
         use trimmed mode or raise the budget"
    )]
    BudgetExceeded { estimate: u128, budget: u128 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

pub type Result<T> = std::result::Result<T, Error>;
