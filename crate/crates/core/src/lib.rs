//! Maximum-likelihood estimation of information-diffusion parameters on
//! village networks.
//!
//! The observed data are participation decisions over a handful of
//! periods; the latent data are who knew what after each information
//! exchange. This crate enumerates latent information scenarios exactly,
//! approximates the enumeration by trimming the least ambiguous
//! individuals to their more likely status, locates the maximum of the
//! resulting likelihood surface by grid search, and quantifies the
//! approximation error the trimming introduces.
//!
//! Modules:
//! - [`model`]: domain types, densities, reception probabilities.
//! - [`scenario`]: exact and trimmed scenario-tree evaluation.
//! - [`estimate`]: sample surfaces, grid search, confidence sets.
//! - [`simulate`]: seeded data generation and the Monte Carlo harness.
//! - [`diagnostics`]: error curves, error bounds, and trimming audits.

pub mod bits;
pub mod diagnostics;
pub mod error;
pub mod estimate;
pub mod logsum;
pub mod model;
pub mod scenario;
pub mod simulate;

pub use bits::BitVec;
pub use diagnostics::{
    convexity_report, error_bound, error_curve, interpolated_error_estimate, ip_betweenness,
    mistake_audit, selection_check, slope_identity_check, BetweennessReport, ConvexityReport,
    Curvature, ErrorCurve, InterpolatedEstimate, SelectionReport, SlopeReport, SlopeStep,
    SubgraphAudit, Verdict,
};
pub use error::{Error, Result};
pub use logsum::log_sum_exp;
pub use estimate::{
    estimate_sequence, grid_search, lr_confidence_set, lr_cutoff, sample_log_likelihood,
    two_period_grid_search, two_period_log_likelihood, ConfidenceSet, EstimateRecord,
    EstimatorKind, Grid, LikelihoodSurface, SequenceResult,
};
pub use model::{
    classify, equivalence_curve, info_density, initial_outcome_density, outcome_density,
    reception_probabilities, trim_threshold, IndividualClass, InfoScenario, OutcomeMatrix,
    ParamPoint, PiiContribution, PiiState, ReceptionVector, SeedVector, Village, VillageNetwork,
};
pub use simulate::{
    draw_ip, erdos_renyi, extract_submatrix, replication_villages, run_monte_carlo,
    simulate_adoption, small_world, KeyedRng, MCConfig, MCOutput, ReplicationFailure,
    ReplicationResult, SummaryRow,
};
pub use scenario::{
    branch_decomposition, count_scenarios, count_scenarios_capped, eligible_piis,
    ensure_within_budget, evaluate_from, expand_exchange, max_pii_count, scenario_probability,
    trim_select, village_log_likelihood, BranchMass, ExchangeState, InfoScenarioRef, PiiEntry,
    TrimPlan, TrimSlot, VillageEval,
};
