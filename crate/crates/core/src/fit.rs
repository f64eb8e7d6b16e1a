//! Estimation output shared by the choice-model estimators.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::model::{Coefficients, Scenario, ATTRIBUTES};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEstimate {
    pub name: String,
    pub estimate: f64,
    /// Reported standard error (see `FitResult::se_type`).
    pub se: f64,
    pub se_classical: f64,
    /// Parameter held at its starting value during estimation.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fixed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Scenario>,
    pub params: Vec<ParamEstimate>,
    /// Covariance behind `se`, in `params` order.
    pub covariance: Vec<Vec<f64>>,
    pub covariance_classical: Vec<Vec<f64>>,
    pub se_type: String,
    pub log_likelihood: f64,
    pub n_obs: usize,
    pub n_respondents: usize,
    pub n_params: usize,
    pub aic: f64,
    pub bic: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn param(&self, name: &str) -> Option<&ParamEstimate> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn estimate(&self, name: &str) -> Result<f64> {
        self.param(name)
            .map(|p| p.estimate)
            .ok_or_else(|| Error::Config(format!("fit has no parameter `{name}`")))
    }

    pub fn index(&self, name: &str) -> Result<usize> {
        self.params
            .iter()
            .position(|p| p.name == name)
            .ok_or_else(|| Error::Config(format!("fit has no parameter `{name}`")))
    }

    pub fn covariance_entry(&self, a: &str, b: &str) -> Result<f64> {
        let (i, j) = (self.index(a)?, self.index(b)?);
        Ok(self.covariance[i][j])
    }

    /// Mean attribute coefficients (`wait`, `cost`, `unrel`).
    pub fn attribute_coefficients(&self) -> Result<Coefficients> {
        let mut c = Coefficients::new();
        for a in ATTRIBUTES {
            c.set(a, self.estimate(a)?);
        }
        Ok(c)
    }

    pub fn estimates(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.estimate).collect()
    }
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// AIC and BIC with the respondent count as the BIC sample size.
pub fn information_criteria(llf: f64, n_params: usize, n_respondents: usize) -> Result<(f64, f64)> {
    if n_respondents == 0 {
        return Err(Error::Input("information criteria need at least one respondent".into()));
    }
    let k = n_params as f64;
    let aic = -2.0 * llf + 2.0 * k;
    let bic = -2.0 * llf + k * (n_respondents as f64).ln();
    Ok((aic, bic))
}
