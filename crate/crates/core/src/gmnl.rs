//! Generalized multinomial logit with scale heterogeneity, by simulated
//! maximum likelihood.
//!
//! For respondent `r` and draw `d`, `beta_rd = sigma_rd * (mean + eta_d)`, with
//! `eta_d` normal on waiting time and unreliability (cost is fixed) and
//! `sigma_rd = exp(-tau²/2 + tau * zeta_d)`.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clogit::{check_identification, single_scenario};
use crate::fit::{information_criteria, matrix_rows, FitResult, ParamEstimate};
use crate::halton::{normal_draw_blocks, SequenceKind};
use crate::model::{task_log_prob_score, Coefficients, Dataset, Panel, ATTRIBUTES, COST, UNREL, WAIT};
use crate::numeric::{compensated_vec_sum, inf_norm, log_sum_exp, CompensatedSum};
use crate::optim::{bfgs, fd_hessian, sandwich, spd_inverse, OptimConfig};
use crate::{Error, Result};

pub const SD_WAIT: &str = "sd_wait";
pub const SD_UNREL: &str = "sd_unrel";
pub const TAU: &str = "tau";
/// Parameter order of the GMNL vector.
pub const GMNL_PARAMS: [&str; 6] = [WAIT, COST, UNREL, SD_WAIT, SD_UNREL, TAU];

pub const MIN_DRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrawConfig {
    pub n_draws: usize,
    pub sequence: SequenceKind,
    pub skip: u64,
    pub seed: u64,
}

impl Default for DrawConfig {
    fn default() -> Self {
        Self {
            n_draws: 500,
            sequence: SequenceKind::ScrambledHalton,
            skip: 100,
            seed: 20240601,
        }
    }
}

impl DrawConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_draws < MIN_DRAWS {
            return Err(Error::Config(format!(
                "n_draws must be at least {MIN_DRAWS}, got {}",
                self.n_draws
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmnlParameters {
    pub mean: Coefficients,
    pub sd_wait: f64,
    pub sd_unrel: f64,
    pub tau: f64,
    #[serde(default)]
    pub draw_config: DrawConfig,
}

impl GmnlParameters {
    pub fn new(mean: Coefficients, sd_wait: f64, sd_unrel: f64, tau: f64) -> Self {
        Self {
            mean,
            sd_wait,
            sd_unrel,
            tau,
            draw_config: DrawConfig::default(),
        }
    }

    pub fn with_draws(mut self, draw_config: DrawConfig) -> Self {
        self.draw_config = draw_config;
        self
    }

    pub fn to_vector(&self) -> Result<[f64; 6]> {
        let m = self.mean.attribute_array()?;
        Ok([m[0], m[1], m[2], self.sd_wait, self.sd_unrel, self.tau])
    }

    pub fn from_vector(v: &[f64; 6], draw_config: DrawConfig) -> Self {
        Self {
            mean: Coefficients::from_array([v[0], v[1], v[2]]),
            sd_wait: v[3],
            sd_unrel: v[4],
            tau: v[5],
            draw_config,
        }
    }

    /// Reads a GMNL fit back into parameters (magnitudes for sd and tau).
    pub fn from_fit(fit: &FitResult, draw_config: DrawConfig) -> Result<Self> {
        Ok(Self {
            mean: fit.attribute_coefficients()?,
            sd_wait: fit.estimate(SD_WAIT)?,
            sd_unrel: fit.estimate(SD_UNREL)?,
            tau: fit.estimate(TAU)?,
            draw_config,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmnlConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// Parameters held at their starting values (`tau`, `sd_wait`, `sd_unrel`).
    #[serde(default)]
    pub fixed: BTreeSet<String>,
}

impl Default for GmnlConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 500,
            fixed: BTreeSet::new(),
        }
    }
}

impl GmnlConfig {
    pub fn fixing(mut self, names: &[&str]) -> Self {
        self.fixed.extend(names.iter().map(|s| s.to_string()));
        self
    }
}

struct Simulator<'a> {
    panels: &'a [Panel],
    /// [respondent][draw][3]
    draws: Vec<f64>,
    n_draws: usize,
}

struct RespondentTerm {
    log_lik: f64,
    score: [f64; 6],
}

impl<'a> Simulator<'a> {
    fn new(panels: &'a [Panel], dc: &DrawConfig) -> Result<Self> {
        dc.validate()?;
        let draws = normal_draw_blocks(panels.len(), dc.n_draws, 3, dc.skip, dc.sequence, dc.seed)?;
        Ok(Self {
            panels,
            draws,
            n_draws: dc.n_draws,
        })
    }

    fn respondent(&self, r: usize, theta: &[f64; 6]) -> Result<RespondentTerm> {
        let panel = &self.panels[r];
        let nd = self.n_draws;
        let mut log_l = Vec::with_capacity(nd);
        let mut dlog = Vec::with_capacity(nd);
        let tau = theta[5];
        for d in 0..nd {
            let z = &self.draws[(r * nd + d) * 3..(r * nd + d) * 3 + 3];
            let sigma = (-0.5 * tau * tau + tau * z[2]).exp();
            let base = [theta[0] + theta[3] * z[0], theta[1], theta[2] + theta[4] * z[1]];
            let beta = [sigma * base[0], sigma * base[1], sigma * base[2]];
            let mut ll = 0.0;
            let mut s = [0.0; 3];
            for t in &panel.tasks {
                let (lp, g) = task_log_prob_score(t, &beta);
                ll += lp;
                for k in 0..3 {
                    s[k] += g[k];
                }
            }
            if !ll.is_finite() || !sigma.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite simulated likelihood at draw {d} of respondent {}",
                    panel.respondent_id
                )));
            }
            let dtau = -tau + z[2];
            let dot_bs = beta[0] * s[0] + beta[1] * s[1] + beta[2] * s[2];
            dlog.push([
                sigma * s[0],
                sigma * s[1],
                sigma * s[2],
                sigma * z[0] * s[0],
                sigma * z[1] * s[2],
                dot_bs * dtau,
            ]);
            log_l.push(ll);
        }
        let lse = log_sum_exp(&log_l);
        let mut score = [0.0; 6];
        for (ll, g) in log_l.iter().zip(&dlog) {
            let w = (ll - lse).exp();
            for k in 0..6 {
                score[k] += w * g[k];
            }
        }
        Ok(RespondentTerm {
            log_lik: lse - (nd as f64).ln(),
            score,
        })
    }

    fn evaluate(&self, theta: &[f64; 6]) -> Result<(f64, [f64; 6], Vec<[f64; 6]>)> {
        let terms: Vec<RespondentTerm> = (0..self.panels.len())
            .into_par_iter()
            .map(|r| self.respondent(r, theta))
            .collect::<Result<_>>()?;
        let mut ll = CompensatedSum::new();
        for t in &terms {
            ll.add(t.log_lik);
        }
        let g = compensated_vec_sum(6, terms.iter().map(|t| t.score.as_slice()));
        let g = [g[0], g[1], g[2], g[3], g[4], g[5]];
        Ok((ll.value(), g, terms.into_iter().map(|t| t.score).collect()))
    }
}

/// Simulated log-likelihood and gradient at `params`.
pub fn gmnl_log_likelihood(data: &Dataset, params: &GmnlParameters) -> Result<(f64, [f64; 6])> {
    if data.is_empty() {
        return Err(Error::Input("empty dataset".into()));
    }
    let panels = data.panels();
    let sim = Simulator::new(&panels, &params.draw_config)?;
    let (ll, g, _) = sim.evaluate(&params.to_vector()?)?;
    Ok((ll, g))
}

pub fn fit_gmnl(data: &Dataset, params0: &GmnlParameters, cfg: &GmnlConfig) -> Result<FitResult> {
    if data.is_empty() {
        return Err(Error::Input("empty dataset".into()));
    }
    data.validate()?;
    for name in &cfg.fixed {
        if !GMNL_PARAMS.contains(&name.as_str()) {
            return Err(Error::Config(format!(
                "unknown GMNL parameter `{name}`; expected one of {GMNL_PARAMS:?}"
            )));
        }
    }
    let panels = data.panels();
    check_identification(&panels)?;
    let sim = Simulator::new(&panels, &params0.draw_config)?;
    let full0 = params0.to_vector()?;
    let free: Vec<usize> = (0..6)
        .filter(|&i| !cfg.fixed.contains(GMNL_PARAMS[i]))
        .collect();
    if free.is_empty() {
        return Err(Error::Config("every GMNL parameter is fixed".into()));
    }
    let expand = |x: &[f64]| -> [f64; 6] {
        let mut t = full0;
        for (k, &i) in free.iter().enumerate() {
            t[i] = x[k];
        }
        t
    };
    let objective = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (ll, g, _) = sim.evaluate(&expand(x))?;
        Ok((-ll, free.iter().map(|&i| -g[i]).collect()))
    };
    let grad = |x: &[f64]| objective(x).map(|(_, g)| g);
    let x0: Vec<f64> = free.iter().map(|&i| full0[i]).collect();
    let optim = OptimConfig {
        tol: cfg.tol,
        max_iter: cfg.max_iter,
    };
    let out = bfgs(objective, &x0, None, &optim)?.require_converged()?;

    let theta = expand(&out.x);
    let (ll, _, scores) = sim.evaluate(&theta)?;
    let hess = fd_hessian(grad, &out.x)?;
    let cov_classical = spd_inverse(&hess, "simulated-likelihood Hessian")?;
    let free_scores: Vec<Vec<f64>> = scores
        .iter()
        .map(|s| free.iter().map(|&i| s[i]).collect())
        .collect();
    let mut cov_robust = sandwich(&cov_classical, &free_scores);
    let mut cov_classical = cov_classical;

    // Only magnitudes of sd and tau are identified; flip rows/columns of
    // negative estimates so the covariance matches the reported values.
    let mut reported = theta;
    for (k, &i) in free.iter().enumerate() {
        if i >= 3 && theta[i] < 0.0 {
            reported[i] = -theta[i];
            for m in [&mut cov_robust, &mut cov_classical] {
                for j in 0..free.len() {
                    m[(k, j)] = -m[(k, j)];
                    m[(j, k)] = -m[(j, k)];
                }
            }
        }
    }
    for i in 3..6 {
        reported[i] = reported[i].abs();
    }

    let params: Vec<ParamEstimate> = (0..6)
        .map(|i| match free.iter().position(|&f| f == i) {
            Some(k) => ParamEstimate {
                name: GMNL_PARAMS[i].to_owned(),
                estimate: reported[i],
                se: cov_robust[(k, k)].sqrt(),
                se_classical: cov_classical[(k, k)].sqrt(),
                fixed: false,
            },
            None => ParamEstimate {
                name: GMNL_PARAMS[i].to_owned(),
                estimate: reported[i],
                se: 0.0,
                se_classical: 0.0,
                fixed: true,
            },
        })
        .collect();
    let full_cov = |m: &DMatrix<f64>| -> DMatrix<f64> {
        let mut c = DMatrix::zeros(6, 6);
        for (a, &i) in free.iter().enumerate() {
            for (b, &j) in free.iter().enumerate() {
                c[(i, j)] = m[(a, b)];
            }
        }
        c
    };
    let n_respondents = panels.len();
    let (aic, bic) = information_criteria(ll, free.len(), n_respondents)?;
    let mut warnings = Vec::new();
    let mut converged = true;
    if theta[1] >= 0.0 {
        converged = false;
        warnings.push(format!("{COST} coefficient is non-negative; fit not accepted"));
    }
    debug_assert_eq!(ATTRIBUTES, [WAIT, COST, UNREL]);
    Ok(FitResult {
        model: "gmnl".into(),
        scenario: single_scenario(data),
        params,
        covariance: matrix_rows(&full_cov(&cov_robust)),
        covariance_classical: matrix_rows(&full_cov(&cov_classical)),
        se_type: "robust_cluster_respondent".into(),
        log_likelihood: ll,
        n_obs: data.len(),
        n_respondents,
        n_params: free.len(),
        aic,
        bic,
        iterations: out.iterations,
        gradient_norm: inf_norm(&out.gradient),
        converged,
        warnings,
    })
}
