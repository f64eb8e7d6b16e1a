//! Conditional logit estimation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::fit::{information_criteria, matrix_rows, FitResult, ParamEstimate};
use crate::model::{
    panel_log_lik_score, task_information, task_log_prob_score, Dataset, Panel, ATTRIBUTES, COST,
};
use crate::numeric::{compensated_vec_sum, inf_norm, CompensatedSum};
use crate::optim::{newton, sandwich, spd_inverse, OptimConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClogitConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// Starting coefficients (wait, cost, unrel); zero when absent.
    #[serde(default)]
    pub start: Option<[f64; 3]>,
}

impl Default for ClogitConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 500,
            start: None,
        }
    }
}

/// Respondent-weighted log-likelihood, gradient and information of the
/// conditional logit. Weights default to 1; the latent-class M-step passes
/// posterior class probabilities.
pub(crate) fn weighted_objective(
    panels: &[Panel],
    weights: Option<&[f64]>,
    beta: &[f64; 3],
) -> (f64, [f64; 3], [[f64; 3]; 3]) {
    let mut ll = CompensatedSum::new();
    let mut grads: Vec<[f64; 3]> = Vec::with_capacity(panels.len());
    let mut info = [[0.0; 3]; 3];
    for (i, p) in panels.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        let (v, s) = panel_log_lik_score(p, beta);
        ll.add(w * v);
        grads.push([w * s[0], w * s[1], w * s[2]]);
        for t in &p.tasks {
            let ti = task_information(t, beta);
            for a in 0..3 {
                for b in 0..3 {
                    info[a][b] += w * ti[a][b];
                }
            }
        }
    }
    let g = compensated_vec_sum(3, grads.iter().map(|g| g.as_slice()));
    (ll.value(), [g[0], g[1], g[2]], info)
}

pub(crate) fn check_identification(panels: &[Panel]) -> Result<()> {
    let mut within = [[0.0f64; 3]; 3];
    let mut varies = [false; 3];
    for p in panels {
        for t in &p.tasks {
            let n = t.rows.len() as f64;
            let mut mean = [0.0; 3];
            for x in &t.rows {
                for k in 0..3 {
                    mean[k] += x[k] / n;
                }
            }
            for x in &t.rows {
                for a in 0..3 {
                    let da = x[a] - mean[a];
                    if da != 0.0 {
                        varies[a] = true;
                    }
                    for b in 0..3 {
                        within[a][b] += da * (x[b] - mean[b]);
                    }
                }
            }
        }
    }
    if let Some(k) = varies.iter().position(|v| !v) {
        return Err(Error::Identification(format!(
            "attribute `{}` is constant within every task",
            ATTRIBUTES[k]
        )));
    }
    let m = DMatrix::from_fn(3, 3, |a, b| within[a][b]);
    if m.cholesky().is_none() {
        return Err(Error::Identification(
            "within-task attribute differences are collinear".into(),
        ));
    }
    Ok(())
}

/// Flags complete separation: every chosen alternative predicted with
/// probability numerically equal to one.
pub(crate) fn check_separation(panels: &[Panel], beta: &[f64; 3]) -> Result<()> {
    let min_p = panels
        .iter()
        .flat_map(|p| p.tasks.iter())
        .map(|t| task_log_prob_score(t, beta).0.exp())
        .fold(1.0f64, f64::min);
    if min_p > 1.0 - 1e-7 {
        let k = (0..3)
            .max_by(|&a, &b| beta[a].abs().total_cmp(&beta[b].abs()))
            .unwrap_or(0);
        return Err(Error::Separation {
            covariate: ATTRIBUTES[k].to_owned(),
            detail: format!(
                "utilities predict every choice (min fitted probability {min_p:.3e}); coefficients diverge"
            ),
        });
    }
    Ok(())
}

pub fn fit_clogit(data: &Dataset, cfg: &ClogitConfig) -> Result<FitResult> {
    if data.is_empty() {
        return Err(Error::Input("empty dataset".into()));
    }
    data.validate()?;
    let panels = data.panels();
    check_identification(&panels)?;

    let start = cfg.start.unwrap_or([0.0; 3]);
    let objective = |x: &[f64]| -> Result<(f64, Vec<f64>, DMatrix<f64>)> {
        let b = [x[0], x[1], x[2]];
        let (ll, g, info) = weighted_objective(&panels, None, &b);
        if !ll.is_finite() {
            return Err(Error::Numeric("non-finite log-likelihood".into()));
        }
        let h = DMatrix::from_fn(3, 3, |a, c| info[a][c]);
        Ok((-ll, vec![-g[0], -g[1], -g[2]], h))
    };
    let optim = OptimConfig {
        tol: cfg.tol,
        max_iter: cfg.max_iter,
    };
    let out = newton(objective, &start, &optim)?;
    let beta = [out.x[0], out.x[1], out.x[2]];
    check_separation(&panels, &beta)?;
    let out = out.require_converged()?;

    let (ll, _, info) = weighted_objective(&panels, None, &beta);
    let info = DMatrix::from_fn(3, 3, |a, b| info[a][b]);
    let cov_classical = spd_inverse(&info, "conditional-logit information matrix")?;
    let scores: Vec<Vec<f64>> = panels
        .iter()
        .map(|p| panel_log_lik_score(p, &beta).1.to_vec())
        .collect();
    let cov_robust = sandwich(&cov_classical, &scores);

    let params = ATTRIBUTES
        .iter()
        .enumerate()
        .map(|(i, name)| ParamEstimate {
            name: (*name).to_owned(),
            estimate: beta[i],
            se: cov_robust[(i, i)].sqrt(),
            se_classical: cov_classical[(i, i)].sqrt(),
            fixed: false,
        })
        .collect();
    let n_respondents = panels.len();
    let (aic, bic) = information_criteria(ll, 3, n_respondents)?;
    let mut warnings = Vec::new();
    let mut converged = true;
    if beta[1] >= 0.0 {
        converged = false;
        warnings.push(format!("{COST} coefficient is non-negative; fit not accepted"));
    }
    Ok(FitResult {
        model: "clogit".into(),
        scenario: single_scenario(data),
        params,
        covariance: matrix_rows(&cov_robust),
        covariance_classical: matrix_rows(&cov_classical),
        se_type: "robust_cluster_respondent".into(),
        log_likelihood: ll,
        n_obs: data.len(),
        n_respondents,
        n_params: 3,
        aic,
        bic,
        iterations: out.iterations,
        gradient_norm: inf_norm(&out.gradient),
        converged,
        warnings,
    })
}

pub(crate) fn single_scenario(data: &Dataset) -> Option<crate::model::Scenario> {
    let first = data.observations.first()?.task.scenario;
    data.observations
        .iter()
        .all(|o| o.task.scenario == first)
        .then_some(first)
        .flatten()
}
