//! Willingness to pay: attribute coefficient over cost coefficient, with
//! delta-method standard errors.

use serde::{Deserialize, Serialize};

use crate::fit::FitResult;
use crate::model::{Coefficients, Scenario, COST, UNREL, WAIT};
use crate::{Error, Result};

/// Two-sided 95% normal critical value.
pub const Z_95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WtpEntry {
    pub attribute: String,
    pub unit: String,
    pub value: f64,
    /// `None` when the source carries no covariance.
    pub se: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WtpReport {
    pub model: String,
    pub scenario: Option<Scenario>,
    pub entries: Vec<WtpEntry>,
}

impl WtpReport {
    pub fn entry(&self, attribute: &str, unit: &str) -> Option<&WtpEntry> {
        self.entries
            .iter()
            .find(|e| e.attribute == attribute && e.unit == unit)
    }

    /// Waiting-time value in yuan per hour.
    pub fn wait_per_hour(&self) -> f64 {
        self.entry(WAIT, "yuan_per_hour").map_or(f64::NAN, |e| e.value)
    }

    /// Unreliability value in yuan per minute.
    pub fn unrel_per_minute(&self) -> f64 {
        self.entry(UNREL, "yuan_per_min").map_or(f64::NAN, |e| e.value)
    }
}

/// Ratio and delta-method variance of `b_a / b_c`.
pub fn ratio_with_variance(b_a: f64, b_c: f64, var_a: f64, var_c: f64, cov_ac: f64) -> (f64, f64) {
    let w = b_a / b_c;
    let ga = 1.0 / b_c;
    let gc = -b_a / (b_c * b_c);
    (w, ga * ga * var_a + gc * gc * var_c + 2.0 * ga * gc * cov_ac)
}

/// `cov` is the (wait, cost, unrel) block of the coefficient covariance.
pub fn wtp_from_coefficients(
    model: &str,
    scenario: Option<Scenario>,
    beta: &Coefficients,
    cov: Option<[[f64; 3]; 3]>,
) -> Result<WtpReport> {
    let [bw, bc, bu] = beta.attribute_array()?;
    if !(bc < 0.0) {
        return Err(Error::Domain(format!(
            "WTP is undefined: {COST} coefficient must be strictly negative, got {bc}"
        )));
    }
    let mut entries = Vec::new();
    let mut push = |attribute: &str, unit: &str, idx: usize, b: f64, factor: f64| -> Result<()> {
        let (w, var) = match cov {
            Some(c) => {
                let (w, v) = ratio_with_variance(b, bc, c[idx][idx], c[1][1], c[idx][1]);
                (w, Some(v))
            }
            None => (b / bc, None),
        };
        let value = w * factor;
        if !value.is_finite() {
            return Err(Error::Numeric(format!("non-finite WTP for {attribute}")));
        }
        let se = var.map(|v| v.max(0.0).sqrt() * factor);
        entries.push(WtpEntry {
            attribute: attribute.to_owned(),
            unit: unit.to_owned(),
            value,
            se,
            ci_low: se.map(|s| value - Z_95 * s),
            ci_high: se.map(|s| value + Z_95 * s),
        });
        Ok(())
    };
    push(WAIT, "yuan_per_min", 0, bw, 1.0)?;
    push(WAIT, "yuan_per_hour", 0, bw, 60.0)?;
    push(UNREL, "yuan_per_min", 2, bu, 1.0)?;
    Ok(WtpReport {
        model: model.to_owned(),
        scenario,
        entries,
    })
}

pub fn compute_wtp(fit: &FitResult) -> Result<WtpReport> {
    let beta = fit.attribute_coefficients()?;
    let names = [WAIT, COST, UNREL];
    let mut cov = [[0.0; 3]; 3];
    for (a, na) in names.iter().enumerate() {
        for (b, nb) in names.iter().enumerate() {
            cov[a][b] = fit.covariance_entry(na, nb)?;
        }
    }
    wtp_from_coefficients(&fit.model, fit.scenario, &beta, Some(cov))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn work_clogit_values() {
        let r = wtp_from_coefficients(
            "clogit",
            Some(Scenario::Work),
            &Coefficients::from_attributes(-0.034, -0.021, -0.102),
            None,
        )
        .unwrap();
        assert!((r.wait_per_hour() - 0.034 / 0.021 * 60.0).abs() < 1e-12);
        assert!((r.unrel_per_minute() - 0.102 / 0.021).abs() < 1e-12);
        assert!(r.entries.iter().all(|e| e.se.is_none()));
    }

    #[test]
    fn nonnegative_cost_is_domain_error() {
        for c in [0.0, 0.01] {
            let b = Coefficients::from_attributes(-0.03, c, -0.1);
            assert!(matches!(wtp_from_coefficients("clogit", None, &b, None), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn delta_method_reduces_without_cost_uncertainty() {
        let (w, v) = ratio_with_variance(-0.034, -0.021, 4e-6, 0.0, 0.0);
        assert!((w - 0.034 / 0.021).abs() < 1e-15);
        assert!((v - 4e-6 / (0.021 * 0.021)).abs() < 1e-15);
    }
}
