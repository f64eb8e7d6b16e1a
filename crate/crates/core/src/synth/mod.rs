//! Synthetic respondents under known truth, and brute-force likelihoods used
//! as reference values for the estimators.
//!
//! Seeding: respondent `r` (0-based) draws from ChaCha8 streams of the global
//! seed. Stream `4r` drives task assignment and choice noise, `4r+1`
//! preference heterogeneity and `4r+2` covariates, so the output does not
//! depend on scheduling and heterogeneity settings never shift the noise.

mod oracle;
mod simulate;
mod truth;

pub use oracle::{brute_force_loglik, brute_force_loglik_with_grid, OracleData, MAX_ORACLE_OBSERVATIONS};
pub use simulate::{
    respondent_id, respondent_rng, simulate_sbdc, simulate_sce, simulate_sce_detailed, SimulatedSce, Stream,
};
pub use truth::{CovariateGenerator, CovariateMarginal, Marginal, ModelTruth, SbdcTruth, TruthSpec};
