//! Stated-preference toolkit: experimental design for paired choice tasks,
//! estimation of binary and multinomial discrete choice models, and the
//! valuation and welfare arithmetic built on top of the estimates.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] holds the shared domain types and the logit kernels.
//! * [`design`] enumerates, prunes and selects efficient choice designs.
//! * [`sbdc`] fits the random-intercept binary logit used for access valuation.
//! * [`clogit`], [`gmnl`] and [`wtp`] cover attribute valuation.
//! * [`latent`] is the latent-class logit with covariate-driven membership.
//! * [`welfare`] converts time valuations to social prices and welfare totals.
//! * [`synth`] simulates respondents under known truth and hosts the
//!   brute-force likelihood oracles used by the test suites.
//! * [`io`] and [`covariates`] define the CSV schemas and covariate encodings.

pub mod clogit;
pub mod covariates;
pub mod design;
mod error;
pub mod fit;
pub mod gmnl;
pub mod halton;
pub mod io;
pub mod latent;
pub mod model;
pub mod numeric;
pub mod optim;
pub mod quadrature;
pub mod sbdc;
pub mod synth;
pub mod welfare;
pub mod wtp;

pub use error::{Error, Result};
pub use fit::{FitResult, ParamEstimate};
pub use model::{
    AttributeProfile, ChoiceTask, Coefficients, Dataset, Observation, RespondentId, Scenario,
};
