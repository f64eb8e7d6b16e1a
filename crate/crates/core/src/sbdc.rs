//! Single binary discrete choice (accept compensation to forgo access) with a
//! normal random intercept, and the willingness-to-accept closed forms.
//!
//! The acceptance log-odds for respondent `i` facing compensation `C` is
//! `b0_i + bc ln C + bx'x_i`, with `b0_i ~ N(b0, sigma²)`. The marginal
//! likelihood integrates the intercept with Gauss-Hermite quadrature.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::covariates::{CovariateEncoding, CovariateRow};
use crate::fit::{information_criteria, matrix_rows, ParamEstimate};
use crate::model::RespondentId;
use crate::numeric::{compensated_vec_sum, inf_norm, log_logistic, log_sum_exp, logistic, CompensatedSum};
use crate::optim::{bfgs, fd_hessian, newton, spd_inverse, OptimConfig};
use crate::quadrature::standard_normal_rule;
use crate::{Error, Result};

/// Compensation levels (yuan) of the replication instrument.
pub const COMPENSATION_LEVELS: [f64; 7] = [100.0, 500.0, 1000.0, 1500.0, 2000.0, 2500.0, 3000.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbdcObservation {
    pub respondent_id: RespondentId,
    pub task_no: u32,
    pub compensation: f64,
    /// `true` = forgo the service for the stated compensation.
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SbdcDataset {
    pub observations: Vec<SbdcObservation>,
    pub covariates: BTreeMap<RespondentId, CovariateRow>,
}

impl SbdcDataset {
    pub fn new(
        observations: Vec<SbdcObservation>,
        covariates: BTreeMap<RespondentId, CovariateRow>,
    ) -> Result<Self> {
        let d = Self {
            observations,
            covariates,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        for o in &self.observations {
            if !(o.compensation.is_finite() && o.compensation > 0.0) {
                return Err(Error::Input(format!(
                    "respondent {}: compensation must be positive, got {}",
                    o.respondent_id, o.compensation
                )));
            }
            if !self.covariates.contains_key(&o.respondent_id) {
                return Err(Error::Input(format!(
                    "respondent {} has no covariate row",
                    o.respondent_id
                )));
            }
        }
        Ok(())
    }

    pub fn respondents(&self) -> Vec<RespondentId> {
        let mut v: Vec<_> = self.observations.iter().map(|o| o.respondent_id.clone()).collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn distinct_compensations(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.observations.iter().map(|o| o.compensation).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "covariates")]
pub enum SbdcSpec {
    #[default]
    Base,
    Extended(Vec<String>),
}

impl SbdcSpec {
    pub fn covariates(&self) -> &[String] {
        match self {
            SbdcSpec::Base => &[],
            SbdcSpec::Extended(c) => c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbdcConfig {
    pub quadrature_nodes: usize,
    pub tol: f64,
    pub max_iter: usize,
    #[serde(default)]
    pub encoding: CovariateEncoding,
}

impl Default for SbdcConfig {
    fn default() -> Self {
        Self {
            quadrature_nodes: 32,
            tol: 1e-8,
            max_iter: 500,
            encoding: CovariateEncoding::standard(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbdcFit {
    pub spec: SbdcSpec,
    pub beta0_mean: f64,
    pub beta_c: f64,
    /// Encoded covariate column -> coefficient.
    pub beta_x: Vec<(String, f64)>,
    pub sigma_intercept: f64,
    /// Order: constant, log_compensation, sigma_intercept, covariate columns.
    pub params: Vec<ParamEstimate>,
    pub covariance: Vec<Vec<f64>>,
    pub log_likelihood: f64,
    pub n_obs: usize,
    pub n_respondents: usize,
    pub aic: f64,
    pub bic: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
    pub encoding: CovariateEncoding,
}

impl SbdcFit {
    /// A fit assembled from known coefficients, for closed-form evaluation.
    pub fn from_coefficients(beta0_mean: f64, beta_c: f64) -> Self {
        Self {
            spec: SbdcSpec::Base,
            beta0_mean,
            beta_c,
            beta_x: Vec::new(),
            sigma_intercept: 0.0,
            params: Vec::new(),
            covariance: Vec::new(),
            log_likelihood: f64::NAN,
            n_obs: 0,
            n_respondents: 0,
            aic: f64::NAN,
            bic: f64::NAN,
            iterations: 0,
            gradient_norm: 0.0,
            converged: true,
            encoding: CovariateEncoding::standard(),
        }
    }

    pub fn with_covariates(mut self, covariates: Vec<String>, beta_x: Vec<(String, f64)>) -> Self {
        self.spec = SbdcSpec::Extended(covariates);
        self.beta_x = beta_x;
        self
    }

    fn covariate_index(&self, row: &CovariateRow) -> Result<f64> {
        let x = self.encoding.encode(self.spec.covariates(), row)?;
        Ok(self.beta_x.iter().zip(&x).map(|((_, b), x)| b * x).sum())
    }

    /// Acceptance probability at the mean intercept.
    pub fn acceptance_probability(&self, compensation: f64, covariate_index: f64) -> f64 {
        logistic(self.beta0_mean + self.beta_c * compensation.ln() + covariate_index)
    }

    /// Acceptance probability averaged over the random intercept.
    pub fn marginal_acceptance_probability(&self, compensation: f64, covariate_index: f64, nodes: usize) -> f64 {
        let (z, lw) = standard_normal_rule(nodes);
        let eta = self.beta0_mean + self.beta_c * compensation.ln() + covariate_index;
        z.iter()
            .zip(&lw)
            .map(|(z, lw)| lw.exp() * logistic(eta + self.sigma_intercept * z))
            .sum()
    }
}

struct Group {
    log_c: Vec<f64>,
    y: Vec<bool>,
    x: Vec<f64>,
}

struct Prepared {
    ids: Vec<RespondentId>,
    groups: Vec<Group>,
    columns: Vec<String>,
}

fn prepare(data: &SbdcDataset, spec: &SbdcSpec, encoding: &CovariateEncoding) -> Result<Prepared> {
    data.validate()?;
    if data.observations.is_empty() {
        return Err(Error::Input("empty SBDC dataset".into()));
    }
    if data.distinct_compensations().len() < 2 {
        return Err(Error::Input(
            "at least two distinct compensation levels are required".into(),
        ));
    }
    let names = spec.covariates().to_vec();
    let columns = encoding.columns(&names)?;
    let mut map: BTreeMap<&RespondentId, Group> = BTreeMap::new();
    for o in &data.observations {
        if !map.contains_key(&o.respondent_id) {
            let row = &data.covariates[&o.respondent_id];
            let x = encoding.encode(&names, row).map_err(|e| match e {
                Error::Input(m) => Error::Input(format!("respondent {}: {m}", o.respondent_id)),
                other => other,
            })?;
            map.insert(
                &o.respondent_id,
                Group {
                    log_c: Vec::new(),
                    y: Vec::new(),
                    x,
                },
            );
        }
        let g = map.get_mut(&o.respondent_id).expect("inserted");
        g.log_c.push(o.compensation.ln());
        g.y.push(o.accepted);
    }
    let (ids, groups): (Vec<_>, Vec<_>) = map.into_iter().map(|(k, v)| (k.clone(), v)).unzip();
    Ok(Prepared {
        ids,
        groups,
        columns,
    })
}

fn regressor_columns(p: &Prepared) -> Vec<String> {
    let mut cols = vec!["constant".to_string(), "log_compensation".to_string()];
    cols.extend(p.columns.iter().cloned());
    cols
}

/// Rows of `[1, ln C, x]` with outcomes.
fn flat_rows(p: &Prepared) -> Vec<(Vec<f64>, bool)> {
    p.groups
        .iter()
        .flat_map(|g| {
            g.log_c.iter().zip(&g.y).map(|(lc, y)| {
                let mut r = vec![1.0, *lc];
                r.extend_from_slice(&g.x);
                (r, *y)
            })
        })
        .collect()
}

fn check_separation_and_rank(p: &Prepared) -> Result<()> {
    let rows = flat_rows(p);
    let names = regressor_columns(p);
    let n_acc = rows.iter().filter(|(_, y)| *y).count();
    if n_acc == 0 || n_acc == rows.len() {
        return Err(Error::Separation {
            covariate: "constant".into(),
            detail: format!(
                "all {} responses are {}",
                rows.len(),
                if n_acc == 0 { "rejections" } else { "acceptances" }
            ),
        });
    }
    for (k, name) in names.iter().enumerate().skip(1) {
        let (mut lo1, mut hi1, mut lo0, mut hi0) =
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for (r, y) in &rows {
            if *y {
                lo1 = lo1.min(r[k]);
                hi1 = hi1.max(r[k]);
            } else {
                lo0 = lo0.min(r[k]);
                hi0 = hi0.max(r[k]);
            }
        }
        if hi0 < lo1 || hi1 < lo0 {
            return Err(Error::Separation {
                covariate: name.clone(),
                detail: "acceptances and rejections are perfectly split by this regressor".into(),
            });
        }
    }
    let k = names.len();
    let mut xtx = DMatrix::<f64>::zeros(k, k);
    for (r, _) in &rows {
        for a in 0..k {
            for b in 0..k {
                xtx[(a, b)] += r[a] * r[b];
            }
        }
    }
    // Column scaling so the test is about collinearity, not units.
    let d: Vec<f64> = (0..k).map(|i| xtx[(i, i)].sqrt().max(1e-300)).collect();
    let scaled = DMatrix::from_fn(k, k, |a, b| xtx[(a, b)] / (d[a] * d[b]));
    let eig = scaled.symmetric_eigen();
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < 1e-10 {
        let (idx, _) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty");
        let v = eig.eigenvectors.column(idx);
        let worst = (0..k).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap_or(0);
        return Err(Error::Rank(format!(
            "regressors are collinear (involving `{}`)",
            names[worst]
        )));
    }
    Ok(())
}

/// Plain (no random intercept) logit on the same regressors; the
/// degenerate-variance reference for the random-intercept fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlainLogitFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub log_likelihood: f64,
}

pub fn fit_plain_logit(data: &SbdcDataset, spec: &SbdcSpec, cfg: &SbdcConfig) -> Result<PlainLogitFit> {
    let p = prepare(data, spec, &cfg.encoding)?;
    check_separation_and_rank(&p)?;
    plain_logit(&p, cfg)
}

fn plain_logit(p: &Prepared, cfg: &SbdcConfig) -> Result<PlainLogitFit> {
    let rows = flat_rows(p);
    let k = rows[0].0.len();
    let obj = |b: &[f64]| -> Result<(f64, Vec<f64>, DMatrix<f64>)> {
        let mut ll = CompensatedSum::new();
        let mut g = vec![CompensatedSum::new(); k];
        let mut h = DMatrix::zeros(k, k);
        for (r, y) in &rows {
            let eta: f64 = r.iter().zip(b).map(|(x, b)| x * b).sum();
            ll.add(if *y { log_logistic(eta) } else { log_logistic(-eta) });
            let pr = logistic(eta);
            let resid = if *y { 1.0 - pr } else { -pr };
            for a in 0..k {
                g[a].add(resid * r[a]);
                for c in 0..k {
                    h[(a, c)] += pr * (1.0 - pr) * r[a] * r[c];
                }
            }
        }
        Ok((-ll.value(), g.iter().map(|v| -v.value()).collect(), h))
    };
    let optim = OptimConfig {
        tol: cfg.tol,
        max_iter: cfg.max_iter,
    };
    let out = newton(obj, &vec![0.0; k], &optim)?.require_converged()?;
    let (_, _, h) = obj(&out.x)?;
    let cov = spd_inverse(&h, "logit information matrix")?;
    Ok(PlainLogitFit {
        names: regressor_columns(p),
        standard_errors: (0..k).map(|i| cov[(i, i)].sqrt()).collect(),
        coefficients: out.x,
        log_likelihood: -out.value,
    })
}

struct Marginal<'a> {
    groups: &'a [Group],
    z: Vec<f64>,
    lw: Vec<f64>,
}

impl<'a> Marginal<'a> {
    fn new(groups: &'a [Group], nodes: usize) -> Self {
        let (z, lw) = standard_normal_rule(nodes);
        Self { groups, z, lw }
    }

    /// Per-respondent log marginal likelihood and score.
    /// theta = [b0, bc, s, bx...], sigma = |s|.
    fn group_terms(&self, g: &Group, theta: &[f64]) -> (f64, Vec<f64>) {
        let nk = self.z.len();
        let npar = theta.len();
        let xb: f64 = g.x.iter().zip(&theta[3..]).map(|(x, b)| x * b).sum();
        let mut log_f = vec![0.0; nk];
        for k in 0..nk {
            let shift = theta[0] + theta[2] * self.z[k] + xb;
            let mut s = self.lw[k];
            for (lc, y) in g.log_c.iter().zip(&g.y) {
                let eta = shift + theta[1] * lc;
                s += if *y { log_logistic(eta) } else { log_logistic(-eta) };
            }
            log_f[k] = s;
        }
        let lse = log_sum_exp(&log_f);
        let mut grad = vec![0.0; npar];
        for k in 0..nk {
            let w = (log_f[k] - lse).exp();
            if w == 0.0 {
                continue;
            }
            let shift = theta[0] + theta[2] * self.z[k] + xb;
            let mut r_sum = 0.0;
            let mut r_lc = 0.0;
            for (lc, y) in g.log_c.iter().zip(&g.y) {
                let p = logistic(shift + theta[1] * lc);
                let r = if *y { 1.0 - p } else { -p };
                r_sum += r;
                r_lc += r * lc;
            }
            grad[0] += w * r_sum;
            grad[1] += w * r_lc;
            grad[2] += w * r_sum * self.z[k];
            for (j, x) in g.x.iter().enumerate() {
                grad[3 + j] += w * r_sum * x;
            }
        }
        (lse, grad)
    }

    fn evaluate(&self, theta: &[f64]) -> (f64, Vec<f64>, Vec<Vec<f64>>) {
        let parts: Vec<(f64, Vec<f64>)> = self.groups.iter().map(|g| self.group_terms(g, theta)).collect();
        let mut ll = CompensatedSum::new();
        for (v, _) in &parts {
            ll.add(*v);
        }
        let g = compensated_vec_sum(theta.len(), parts.iter().map(|(_, g)| g.as_slice()));
        (ll.value(), g, parts.into_iter().map(|(_, g)| g).collect())
    }
}

/// Marginal log-likelihood of the random-intercept model at
/// `theta = [b0, bc, sigma, bx...]`.
pub fn marginal_log_likelihood(
    data: &SbdcDataset,
    spec: &SbdcSpec,
    theta: &[f64],
    nodes: usize,
    encoding: &CovariateEncoding,
) -> Result<(f64, Vec<f64>)> {
    let p = prepare(data, spec, encoding)?;
    if theta.len() != 3 + p.columns.len() {
        return Err(Error::Config(format!(
            "expected {} parameters, got {}",
            3 + p.columns.len(),
            theta.len()
        )));
    }
    let m = Marginal::new(&p.groups, nodes);
    let (ll, g, _) = m.evaluate(theta);
    Ok((ll, g))
}

pub fn fit_sbdc(data: &SbdcDataset, spec: &SbdcSpec, cfg: &SbdcConfig) -> Result<SbdcFit> {
    if cfg.quadrature_nodes == 0 {
        return Err(Error::Config("quadrature_nodes must be positive".into()));
    }
    let p = prepare(data, spec, &cfg.encoding)?;
    check_separation_and_rank(&p)?;
    let plain = plain_logit(&p, cfg)?;
    let m = Marginal::new(&p.groups, cfg.quadrature_nodes);

    let mut x0 = vec![plain.coefficients[0], plain.coefficients[1], 0.5];
    x0.extend_from_slice(&plain.coefficients[2..]);
    let objective = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (ll, g, _) = m.evaluate(x);
        if !ll.is_finite() {
            return Err(Error::Numeric("non-finite marginal likelihood".into()));
        }
        Ok((-ll, g.into_iter().map(|v| -v).collect()))
    };
    let grad = |x: &[f64]| objective(x).map(|(_, g)| g);
    let h0 = fd_hessian(grad, &x0)?;
    let inv_h0 = spd_inverse(&h0, "start Hessian").ok();
    let optim = OptimConfig {
        tol: cfg.tol,
        max_iter: cfg.max_iter,
    };
    let out = bfgs(objective, &x0, inv_h0, &optim)?.require_converged()?;

    let hess = fd_hessian(grad, &out.x)?;
    let cov = spd_inverse(&hess, "random-intercept Hessian")?;
    let mut theta = out.x.clone();
    // sigma enters only through |s|
    let sign = if theta[2] < 0.0 { -1.0 } else { 1.0 };
    theta[2] = theta[2].abs();
    let mut cov = cov;
    for j in 0..cov.ncols() {
        cov[(2, j)] *= sign;
        cov[(j, 2)] *= sign;
    }

    let mut names = vec![
        "constant".to_string(),
        "log_compensation".to_string(),
        "sigma_intercept".to_string(),
    ];
    names.extend(p.columns.iter().cloned());
    let params: Vec<ParamEstimate> = names
        .iter()
        .enumerate()
        .map(|(i, n)| ParamEstimate {
            name: n.clone(),
            estimate: theta[i],
            se: cov[(i, i)].sqrt(),
            se_classical: cov[(i, i)].sqrt(),
            fixed: false,
        })
        .collect();
    let ll = -out.value;
    let (aic, bic) = information_criteria(ll, theta.len(), p.ids.len())?;
    Ok(SbdcFit {
        spec: spec.clone(),
        beta0_mean: theta[0],
        beta_c: theta[1],
        beta_x: p.columns.iter().cloned().zip(theta[3..].iter().copied()).collect(),
        sigma_intercept: theta[2],
        params,
        covariance: matrix_rows(&cov),
        log_likelihood: ll,
        n_obs: data.observations.len(),
        n_respondents: p.ids.len(),
        aic,
        bic,
        iterations: out.iterations,
        gradient_norm: inf_norm(&out.gradient),
        converged: theta[1] > 0.0,
        encoding: cfg.encoding.clone(),
    })
}

/// Compensation at which acceptance probability is one half:
/// `exp(-b0 / bc)`.
pub fn wtac_median(fit: &SbdcFit) -> Result<f64> {
    if !(fit.beta_c > 0.0) {
        return Err(Error::Domain(format!(
            "log-compensation slope must be positive, got {}",
            fit.beta_c
        )));
    }
    Ok((-fit.beta0_mean / fit.beta_c).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantile {
    pub q: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WtacDistribution {
    pub per_respondent: Vec<(RespondentId, f64)>,
    pub median: f64,
    pub mean: f64,
    pub quantiles: Vec<Quantile>,
}

/// Linear-interpolation sample quantile of sorted values.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = q * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Individual indifference compensations
/// `C_i = exp(-(b0 + bx'x_i) / bc)` from an extended fit.
pub fn wtac_individual(fit: &SbdcFit, data: &SbdcDataset) -> Result<WtacDistribution> {
    if !matches!(fit.spec, SbdcSpec::Extended(_)) {
        return Err(Error::Input("individual WTAC requires an extended-specification fit".into()));
    }
    if !(fit.beta_c > 0.0) {
        return Err(Error::Domain(format!(
            "log-compensation slope must be positive, got {}",
            fit.beta_c
        )));
    }
    let ids = data.respondents();
    if ids.is_empty() {
        return Err(Error::Input("dataset has no respondents".into()));
    }
    let mut per = Vec::with_capacity(ids.len());
    for id in ids {
        let row = data
            .covariates
            .get(&id)
            .ok_or_else(|| Error::Input(format!("respondent {id} has no covariate row")))?;
        for name in fit.spec.covariates() {
            if !row.contains_key(name) {
                return Err(Error::Input(format!(
                    "respondent {id} is missing covariate `{name}`"
                )));
            }
        }
        let xb = fit.covariate_index(row).map_err(|e| match e {
            Error::Input(m) => Error::Input(format!("respondent {id}: {m}")),
            other => other,
        })?;
        per.push((id, (-(fit.beta0_mean + xb) / fit.beta_c).exp()));
    }
    let mut sorted: Vec<f64> = per.iter().map(|(_, c)| *c).collect();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
    let quantiles = [0.05, 0.25, 0.5, 0.75, 0.95]
        .iter()
        .map(|&q| Quantile {
            q,
            value: quantile_sorted(&sorted, q),
        })
        .collect();
    Ok(WtacDistribution {
        median: quantile_sorted(&sorted, 0.5),
        mean,
        quantiles,
        per_respondent: per,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariates::CovariateValue;

    #[test]
    fn median_wtac_closed_form() {
        let fit = SbdcFit::from_coefficients(-6.132, 0.961);
        let c = wtac_median(&fit).unwrap();
        assert!((c - (6.132f64 / 0.961).exp()).abs() < 1e-9);
        assert!((c - 588.0).abs() / 588.0 < 0.01, "{c}");
        assert!((fit.acceptance_probability(c, 0.0) - 0.5).abs() < 1e-10);
        assert!((fit.marginal_acceptance_probability(c, 0.0, 32) - 0.5).abs() < 1e-10);
        assert_eq!(wtac_median(&SbdcFit::from_coefficients(0.0, 1.0)).unwrap(), 1.0);
    }

    #[test]
    fn nonpositive_slope_is_domain_error() {
        assert!(matches!(
            wtac_median(&SbdcFit::from_coefficients(-1.0, 0.0)),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            wtac_median(&SbdcFit::from_coefficients(-1.0, -0.3)),
            Err(Error::Domain(_))
        ));
    }

    fn obs(r: &str, no: u32, c: f64, a: bool) -> SbdcObservation {
        SbdcObservation {
            respondent_id: r.into(),
            task_no: no,
            compensation: c,
            accepted: a,
        }
    }

    fn ds(observations: Vec<SbdcObservation>) -> SbdcDataset {
        let cov = observations
            .iter()
            .map(|o| (o.respondent_id.clone(), CovariateRow::new()))
            .collect();
        SbdcDataset::new(observations, cov).unwrap()
    }

    #[test]
    fn all_rejections_is_separation() {
        let d = ds(vec![obs("a", 1, 100.0, false), obs("a", 2, 500.0, false), obs("b", 1, 1000.0, false)]);
        let err = fit_sbdc(&d, &SbdcSpec::Base, &SbdcConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Separation { ref covariate, .. } if covariate == "constant"), "{err}");
    }

    #[test]
    fn threshold_split_names_log_compensation() {
        let d = ds(vec![
            obs("a", 1, 100.0, false),
            obs("a", 2, 2000.0, true),
            obs("b", 1, 500.0, false),
            obs("b", 2, 3000.0, true),
        ]);
        let err = fit_sbdc(&d, &SbdcSpec::Base, &SbdcConfig::default()).unwrap_err();
        assert!(
            matches!(err, Error::Separation { ref covariate, .. } if covariate == "log_compensation"),
            "{err}"
        );
    }

    #[test]
    fn single_compensation_level_rejected() {
        let d = ds(vec![obs("a", 1, 100.0, false), obs("b", 1, 100.0, true)]);
        assert!(matches!(
            fit_sbdc(&d, &SbdcSpec::Base, &SbdcConfig::default()),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn individual_wtac_zero_covariates_and_sign_rule() {
        let fit = SbdcFit::from_coefficients(-6.132, 0.961).with_covariates(
            vec!["age".into()],
            vec![("age".into(), 0.185)],
        );
        let mut cov = BTreeMap::new();
        let mut r0 = CovariateRow::new();
        r0.insert("age".into(), CovariateValue::Number(0.0));
        let mut r1 = CovariateRow::new();
        r1.insert("age".into(), CovariateValue::Number(1.0));
        cov.insert(RespondentId::from("a"), r0);
        cov.insert(RespondentId::from("b"), r1);
        let data = SbdcDataset::new(vec![obs("a", 1, 100.0, true), obs("b", 1, 500.0, false)], cov).unwrap();
        let dist = wtac_individual(&fit, &data).unwrap();
        let base = wtac_median(&SbdcFit::from_coefficients(-6.132, 0.961)).unwrap();
        assert!((dist.per_respondent[0].1 - base).abs() < 1e-9);
        // positive coefficient lowers the indifference compensation
        assert!(dist.per_respondent[1].1 < dist.per_respondent[0].1);
    }

    #[test]
    fn individual_wtac_missing_covariate_names_respondent() {
        let fit = SbdcFit::from_coefficients(-6.0, 1.0)
            .with_covariates(vec!["age".into()], vec![("age".into(), 0.1)]);
        let data = ds(vec![obs("r9", 1, 100.0, true)]);
        let err = wtac_individual(&fit, &data).unwrap_err().to_string();
        assert!(err.contains("r9") && err.contains("age"), "{err}");
    }
}
