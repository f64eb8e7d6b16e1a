//! Latent-class conditional logit with multinomial-logit class membership.
//!
//! Estimation runs EM from several random starts, then polishes the best
//! EM solution of each start with BFGS on the mixture log-likelihood.
//! Membership coefficients are expressed relative to the last class.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clogit::{check_identification, fit_clogit, weighted_objective, ClogitConfig};
use crate::covariates::CovariateEncoding;
pub use crate::fit::information_criteria;
use crate::fit::matrix_rows;
use crate::model::{panel_log_lik_score, Coefficients, Dataset, Panel, RespondentId, COST};
use crate::numeric::{compensated_sum, compensated_vec_sum, inf_norm, log_sum_exp, CompensatedSum};
use crate::optim::{bfgs, fd_hessian, newton, spd_inverse, OptimConfig};
use crate::{Error, Result};

/// Shares below this mark a collapsed class.
pub const DEGENERATE_SHARE: f64 = 1e-4;
/// Membership coefficients beyond this magnitude are flagged as unidentified.
pub const UNIDENTIFIED_GAMMA: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentClassConfig {
    pub n_starts: usize,
    /// Absolute EM stopping threshold on the log-likelihood change.
    pub em_tol: f64,
    pub max_em_iter: usize,
    pub polish_tol: f64,
    pub polish_max_iter: usize,
    pub seed: u64,
    #[serde(default)]
    pub encoding: CovariateEncoding,
}

impl Default for LatentClassConfig {
    fn default() -> Self {
        Self {
            n_starts: 20,
            em_tol: 1e-8,
            max_em_iter: 200,
            polish_tol: 1e-6,
            polish_max_iter: 500,
            seed: 20240601,
            encoding: CovariateEncoding::standard(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipEffect {
    pub column: String,
    pub estimate: f64,
    pub se: f64,
    pub unidentified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentClassFit {
    pub k: usize,
    pub class_betas: Vec<Coefficients>,
    /// Per class, standard errors in (wait, cost, unrel) order.
    pub class_se: Vec<[f64; 3]>,
    /// One block per non-reference class; the last class is the reference.
    pub gamma: Vec<Vec<MembershipEffect>>,
    pub membership_covariates: Vec<String>,
    pub membership_columns: Vec<String>,
    pub shares: Vec<f64>,
    pub llf: f64,
    pub n_params: usize,
    pub aic: f64,
    pub bic: f64,
    pub n_obs: usize,
    pub n_respondents: usize,
    pub covariance: Vec<Vec<f64>>,
    /// Log-likelihood after each EM iteration of the selected start.
    pub em_trace: Vec<f64>,
    pub start_llfs: Vec<f64>,
    pub best_start: usize,
    pub converged: bool,
    pub degenerate_classes: Vec<usize>,
    pub refit_recommended: bool,
    pub warnings: Vec<String>,
    pub encoding: CovariateEncoding,
}

impl LatentClassFit {
    /// Flat parameter vector: class betas, then membership blocks.
    fn theta(&self) -> Vec<f64> {
        let mut t = Vec::with_capacity(self.n_params);
        for b in &self.class_betas {
            t.extend_from_slice(&b.attribute_array().expect("attribute coefficients"));
        }
        for g in &self.gamma {
            t.extend(g.iter().map(|e| e.estimate));
        }
        t
    }
}

struct Prepared {
    panels: Vec<Panel>,
    z: Vec<Vec<f64>>,
    columns: Vec<String>,
}

fn prepare(data: &Dataset, covariates: &[String], encoding: &CovariateEncoding) -> Result<Prepared> {
    if data.is_empty() {
        return Err(Error::Input("empty dataset".into()));
    }
    data.validate()?;
    let panels = data.panels();
    check_identification(&panels)?;
    let mut columns = vec!["constant".to_string()];
    columns.extend(encoding.columns(covariates)?);
    let z = panels
        .iter()
        .map(|p| {
            let row = data.covariates.get(&p.respondent_id).ok_or_else(|| {
                Error::Input(format!("respondent {} has no covariate row", p.respondent_id))
            })?;
            let mut v = vec![1.0];
            v.extend(membership_row(encoding, covariates, row, &p.respondent_id)?);
            Ok(v)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Prepared { panels, z, columns })
}

fn membership_row(
    encoding: &CovariateEncoding,
    covariates: &[String],
    row: &crate::covariates::CovariateRow,
    id: &RespondentId,
) -> Result<Vec<f64>> {
    for c in covariates {
        if !row.contains_key(c) {
            return Err(Error::Input(format!("respondent {id} is missing covariate `{c}`")));
        }
    }
    encoding.encode(covariates, row).map_err(|e| match e {
        Error::Input(m) => Error::Input(format!("respondent {id}: {m}")),
        other => other,
    })
}

#[derive(Clone)]
struct Params {
    betas: Vec<[f64; 3]>,
    /// K-1 blocks of length Q+1.
    gammas: Vec<Vec<f64>>,
}

impl Params {
    fn k(&self) -> usize {
        self.betas.len()
    }

    fn flatten(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.betas.iter().flatten().copied().collect();
        for g in &self.gammas {
            v.extend_from_slice(g);
        }
        v
    }

    fn unflatten(v: &[f64], k: usize, q1: usize) -> Self {
        let betas = (0..k).map(|c| [v[3 * c], v[3 * c + 1], v[3 * c + 2]]).collect();
        let gammas = (0..k.saturating_sub(1))
            .map(|c| v[3 * k + c * q1..3 * k + (c + 1) * q1].to_vec())
            .collect();
        Self { betas, gammas }
    }
}

fn log_priors(z: &[f64], gammas: &[Vec<f64>]) -> Vec<f64> {
    let mut u: Vec<f64> = gammas
        .iter()
        .map(|g| g.iter().zip(z).map(|(a, b)| a * b).sum())
        .collect();
    u.push(0.0);
    let lse = log_sum_exp(&u);
    u.iter().map(|x| x - lse).collect()
}

struct RespondentE {
    ll: f64,
    post: Vec<f64>,
    prior: Vec<f64>,
    scores: Vec<[f64; 3]>,
}

fn e_step_one(panel: &Panel, z: &[f64], p: &Params) -> RespondentE {
    let lp = log_priors(z, &p.gammas);
    let mut joint = Vec::with_capacity(p.k());
    let mut scores = Vec::with_capacity(p.k());
    for (c, b) in p.betas.iter().enumerate() {
        let (l, s) = panel_log_lik_score(panel, b);
        joint.push(lp[c] + l);
        scores.push(s);
    }
    let ll = log_sum_exp(&joint);
    RespondentE {
        ll,
        post: joint.iter().map(|j| (j - ll).exp()).collect(),
        prior: lp.iter().map(|x| x.exp()).collect(),
        scores,
    }
}

fn e_step(prep: &Prepared, p: &Params) -> Result<(f64, Vec<RespondentE>)> {
    let terms: Vec<RespondentE> = prep
        .panels
        .par_iter()
        .zip(prep.z.par_iter())
        .map(|(panel, z)| e_step_one(panel, z, p))
        .collect();
    let mut ll = CompensatedSum::new();
    for t in &terms {
        ll.add(t.ll);
    }
    let ll = ll.value();
    if !ll.is_finite() {
        return Err(Error::Numeric("non-finite mixture log-likelihood".into()));
    }
    Ok((ll, terms))
}

/// Mixture log-likelihood and gradient in the flat layout.
fn full_objective(prep: &Prepared, p: &Params) -> Result<(f64, Vec<f64>)> {
    let (ll, terms) = e_step(prep, p)?;
    let k = p.k();
    let q1 = prep.columns.len();
    let n = 3 * k + (k - 1) * q1;
    let per: Vec<Vec<f64>> = terms
        .iter()
        .zip(&prep.z)
        .map(|(t, z)| respondent_gradient(t, z, k, q1, n))
        .collect();
    Ok((ll, compensated_vec_sum(n, per.iter().map(|v| v.as_slice()))))
}

fn respondent_gradient(t: &RespondentE, z: &[f64], k: usize, q1: usize, n: usize) -> Vec<f64> {
    let mut g = vec![0.0; n];
    for c in 0..k {
        for a in 0..3 {
            g[3 * c + a] = t.post[c] * t.scores[c][a];
        }
    }
    for c in 0..k - 1 {
        let r = t.post[c] - t.prior[c];
        for (j, zj) in z.iter().enumerate() {
            g[3 * k + c * q1 + j] = r * zj;
        }
    }
    g
}

fn m_step_beta(panels: &[Panel], weights: &[f64], beta: [f64; 3]) -> Result<[f64; 3]> {
    if weights.iter().sum::<f64>() < 1e-8 {
        return Ok(beta);
    }
    let obj = |x: &[f64]| -> Result<(f64, Vec<f64>, DMatrix<f64>)> {
        let (ll, g, info) = weighted_objective(panels, Some(weights), &[x[0], x[1], x[2]]);
        Ok((-ll, vec![-g[0], -g[1], -g[2]], DMatrix::from_fn(3, 3, |a, b| info[a][b])))
    };
    let cfg = OptimConfig {
        tol: 1e-10,
        max_iter: 50,
    };
    let out = newton(obj, &beta, &cfg)?;
    Ok([out.x[0], out.x[1], out.x[2]])
}

fn m_step_gamma(z: &[Vec<f64>], post: &[Vec<f64>], gammas: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let km1 = gammas.len();
    if km1 == 0 {
        return Ok(Vec::new());
    }
    let q1 = z[0].len();
    let n = km1 * q1;
    let obj = |x: &[f64]| -> Result<(f64, Vec<f64>, DMatrix<f64>)> {
        let gs: Vec<Vec<f64>> = (0..km1).map(|c| x[c * q1..(c + 1) * q1].to_vec()).collect();
        let mut val = CompensatedSum::new();
        let mut g = vec![0.0; n];
        let mut h = DMatrix::zeros(n, n);
        for (zi, hi) in z.iter().zip(post) {
            let lp = log_priors(zi, &gs);
            for (c, l) in lp.iter().enumerate() {
                val.add(-hi[c] * l);
            }
            let pi: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
            for c in 0..km1 {
                let r = hi[c] - pi[c];
                for j in 0..q1 {
                    g[c * q1 + j] -= r * zi[j];
                }
                for d in 0..km1 {
                    let w = if c == d { pi[c] * (1.0 - pi[c]) } else { -pi[c] * pi[d] };
                    for a in 0..q1 {
                        for b in 0..q1 {
                            h[(c * q1 + a, d * q1 + b)] += w * zi[a] * zi[b];
                        }
                    }
                }
            }
        }
        Ok((val.value(), g, h))
    };
    let x0: Vec<f64> = gammas.iter().flatten().copied().collect();
    let cfg = OptimConfig {
        tol: 1e-10,
        max_iter: 25,
    };
    let out = newton(obj, &x0, &cfg)?;
    Ok((0..km1).map(|c| out.x[c * q1..(c + 1) * q1].to_vec()).collect())
}

struct StartResult {
    params: Params,
    ll: f64,
    trace: Vec<f64>,
    converged: bool,
}

fn run_start(
    prep: &Prepared,
    init: Params,
    cfg: &LatentClassConfig,
) -> Result<StartResult> {
    let k = init.k();
    let q1 = prep.columns.len();
    let mut p = init;
    let (mut ll, mut terms) = e_step(prep, &p)?;
    let mut trace = vec![ll];
    for _ in 0..cfg.max_em_iter {
        let post: Vec<Vec<f64>> = terms.iter().map(|t| t.post.clone()).collect();
        let betas = (0..k)
            .map(|c| {
                let w: Vec<f64> = post.iter().map(|h| h[c]).collect();
                m_step_beta(&prep.panels, &w, p.betas[c])
            })
            .collect::<Result<Vec<_>>>()?;
        let gammas = m_step_gamma(&prep.z, &post, &p.gammas)?;
        let next = Params { betas, gammas };
        let (ll_new, terms_new) = e_step(prep, &next)?;
        if ll_new < ll - 1e-10 * (1.0 + ll.abs()) {
            return Err(Error::Internal(format!(
                "EM step decreased the log-likelihood from {ll} to {ll_new}"
            )));
        }
        p = next;
        terms = terms_new;
        let change = ll_new - ll;
        ll = ll_new;
        trace.push(ll);
        if change.abs() < cfg.em_tol {
            break;
        }
    }

    let objective = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (v, g) = full_objective(prep, &Params::unflatten(x, k, q1))?;
        Ok((-v, g.into_iter().map(|x| -x).collect()))
    };
    let polish_cfg = OptimConfig {
        tol: cfg.polish_tol,
        max_iter: cfg.polish_max_iter,
    };
    let out = bfgs(objective, &p.flatten(), None, &polish_cfg)?;
    let polished = Params::unflatten(&out.x, k, q1);
    let ll_polished = -out.value;
    if ll_polished >= ll {
        Ok(StartResult {
            params: polished,
            ll: ll_polished,
            trace,
            converged: out.converged,
        })
    } else {
        Ok(StartResult {
            params: p,
            ll,
            trace,
            converged: false,
        })
    }
}

fn initial_params(pooled: [f64; 3], k: usize, q1: usize, rng: &mut ChaCha8Rng) -> Params {
    let betas = (0..k)
        .map(|_| {
            let mut b = [0.0; 3];
            for a in 0..3 {
                let scale = pooled[a].abs().max(1e-3);
                b[a] = pooled[a] + scale * rng.random_range(-1.0..1.0);
            }
            b
        })
        .collect();
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
    let gammas = (0..k.saturating_sub(1))
        .map(|c| {
            let mut g = vec![0.0; q1];
            g[0] = (raw[c] / raw[k - 1]).ln();
            g
        })
        .collect();
    Params { betas, gammas }
}

/// Orders classes by descending |cost| and re-expresses membership relative
/// to the new last class.
fn canonicalize(p: &Params) -> Params {
    let k = p.k();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| p.betas[b][1].abs().total_cmp(&p.betas[a][1].abs()).then(a.cmp(&b)));
    let q1 = p.gammas.first().map_or(0, |g| g.len());
    let gamma_of = |c: usize| -> Vec<f64> {
        if c == k - 1 {
            vec![0.0; q1]
        } else {
            p.gammas[c].clone()
        }
    };
    let reference = gamma_of(order[k - 1]);
    Params {
        betas: order.iter().map(|&c| p.betas[c]).collect(),
        gammas: order[..k - 1]
            .iter()
            .map(|&c| gamma_of(c).iter().zip(&reference).map(|(a, b)| a - b).collect())
            .collect(),
    }
}

pub fn fit_latent_class(
    data: &Dataset,
    k: usize,
    membership_covariates: &[String],
    cfg: &LatentClassConfig,
) -> Result<LatentClassFit> {
    if k == 0 {
        return Err(Error::Config("class count must be at least 1".into()));
    }
    if cfg.n_starts == 0 {
        return Err(Error::Config("n_starts must be at least 1".into()));
    }
    let prep = prepare(data, membership_covariates, &cfg.encoding)?;
    let q1 = prep.columns.len();
    let pooled_fit = fit_clogit(data, &ClogitConfig::default())?;
    let pooled = pooled_fit.attribute_coefficients()?.attribute_array()?;

    let n_starts = if k == 1 { 1 } else { cfg.n_starts };
    let results: Vec<Result<StartResult>> = (0..n_starts)
        .into_par_iter()
        .map(|s| {
            let init = if k == 1 {
                Params {
                    betas: vec![pooled],
                    gammas: Vec::new(),
                }
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(s as u64);
                initial_params(pooled, k, q1, &mut rng)
            };
            run_start(&prep, init, cfg)
        })
        .collect();
    let mut start_llfs = Vec::with_capacity(n_starts);
    let mut best: Option<(usize, StartResult)> = None;
    let mut first_err = None;
    for (s, r) in results.into_iter().enumerate() {
        match r {
            Ok(r) => {
                start_llfs.push(r.ll);
                if best.as_ref().is_none_or(|(_, b)| r.ll > b.ll) {
                    best = Some((s, r));
                }
            }
            Err(e) => {
                start_llfs.push(f64::NAN);
                if let Error::Internal(_) = e {
                    return Err(e);
                }
                first_err.get_or_insert(e);
            }
        }
    }
    let (best_start, best) = match best {
        Some(b) => b,
        None => return Err(first_err.expect("at least one start")),
    };

    let params = canonicalize(&best.params);
    let theta = params.flatten();
    let mut warnings = Vec::new();
    let grad = |x: &[f64]| -> Result<Vec<f64>> {
        let (_, g) = full_objective(&prep, &Params::unflatten(x, k, q1))?;
        Ok(g.into_iter().map(|v| -v).collect())
    };
    let hess = fd_hessian(grad, &theta)?;
    let n_params = theta.len();
    let cov = match spd_inverse(&hess, "latent-class Hessian") {
        Ok(c) => c,
        Err(_) => {
            warnings.push("Hessian is singular; standard errors are not available".to_string());
            DMatrix::from_element(n_params, n_params, f64::NAN)
        }
    };
    let se = |i: usize| cov[(i, i)].sqrt();

    let (ll, terms) = e_step(&prep, &params)?;
    let n = terms.len() as f64;
    let shares: Vec<f64> = (0..k)
        .map(|c| compensated_sum(terms.iter().map(|t| t.prior[c])) / n)
        .collect();
    let degenerate_classes: Vec<usize> = (0..k).filter(|&c| shares[c] < DEGENERATE_SHARE).collect();
    for &c in &degenerate_classes {
        warnings.push(format!(
            "class {} collapsed (share {:.2e}); refit with a different start or fewer classes",
            c + 1,
            shares[c]
        ));
    }
    let gamma: Vec<Vec<MembershipEffect>> = (0..k - 1)
        .map(|c| {
            (0..q1)
                .map(|j| {
                    let i = 3 * k + c * q1 + j;
                    let estimate = theta[i];
                    MembershipEffect {
                        column: prep.columns[j].clone(),
                        estimate,
                        se: se(i),
                        unidentified: estimate.abs() > UNIDENTIFIED_GAMMA,
                    }
                })
                .collect()
        })
        .collect();
    for (c, block) in gamma.iter().enumerate() {
        for e in block.iter().filter(|e| e.unidentified) {
            warnings.push(format!(
                "membership coefficient {} for class {} is {:.3}; treated as unidentified",
                e.column,
                c + 1,
                e.estimate
            ));
        }
    }
    for (c, b) in params.betas.iter().enumerate() {
        if b[1] >= 0.0 {
            warnings.push(format!("class {} has a non-negative {COST} coefficient", c + 1));
        }
    }
    let (aic, bic) = information_criteria(ll, n_params, prep.panels.len())?;
    Ok(LatentClassFit {
        k,
        class_betas: params.betas.iter().map(|b| Coefficients::from_array(*b)).collect(),
        class_se: (0..k).map(|c| [se(3 * c), se(3 * c + 1), se(3 * c + 2)]).collect(),
        gamma,
        membership_covariates: membership_covariates.to_vec(),
        membership_columns: prep.columns.clone(),
        shares,
        llf: ll,
        n_params,
        aic,
        bic,
        n_obs: data.len(),
        n_respondents: prep.panels.len(),
        covariance: matrix_rows(&cov),
        em_trace: best.trace,
        start_llfs,
        best_start,
        converged: best.converged && inf_norm(&grad(&theta)?) < cfg.polish_tol * 10.0,
        refit_recommended: !degenerate_classes.is_empty(),
        degenerate_classes,
        warnings,
        encoding: cfg.encoding.clone(),
    })
}

/// Mixture log-likelihood and gradient at explicit parameters.
/// `gammas` holds one membership block per non-reference class, each of
/// length 1 + encoded covariate columns. Gradient layout: class betas, then
/// membership blocks.
pub fn mixture_log_likelihood(
    data: &Dataset,
    betas: &[Coefficients],
    gammas: &[Vec<f64>],
    membership_covariates: &[String],
    encoding: &CovariateEncoding,
) -> Result<(f64, Vec<f64>)> {
    if betas.is_empty() || gammas.len() + 1 != betas.len() {
        return Err(Error::Config(format!(
            "{} classes need {} membership blocks, got {}",
            betas.len(),
            betas.len().saturating_sub(1),
            gammas.len()
        )));
    }
    let prep = prepare(data, membership_covariates, encoding)?;
    if gammas.iter().any(|g| g.len() != prep.columns.len()) {
        return Err(Error::Config(format!(
            "membership blocks must have {} entries",
            prep.columns.len()
        )));
    }
    let p = Params {
        betas: betas.iter().map(|b| b.attribute_array()).collect::<Result<_>>()?,
        gammas: gammas.to_vec(),
    };
    full_objective(&prep, &p)
}

/// Constant-only membership blocks reproducing `shares` (last class is the
/// reference).
pub fn constant_membership(shares: &[f64]) -> Vec<Vec<f64>> {
    let last = shares[shares.len() - 1];
    shares[..shares.len() - 1]
        .iter()
        .map(|s| vec![(s / last).ln()])
        .collect()
}

/// Posterior class membership of one respondent.
pub fn posterior_class_probs(
    fit: &LatentClassFit,
    data: &Dataset,
    respondent: &RespondentId,
) -> Result<Vec<f64>> {
    let sub = Dataset {
        observations: data
            .observations
            .iter()
            .filter(|o| &o.respondent_id == respondent)
            .cloned()
            .collect(),
        covariates: data.covariates.clone(),
    };
    if sub.observations.is_empty() {
        return Err(Error::Input(format!("respondent {respondent} has no observations")));
    }
    let row = data
        .covariates
        .get(respondent)
        .ok_or_else(|| Error::Input(format!("respondent {respondent} has no covariate row")))?;
    let mut z = vec![1.0];
    z.extend(membership_row(&fit.encoding, &fit.membership_covariates, row, respondent)?);
    let panel = sub.panels().remove(0);
    let p = Params::unflatten(&fit.theta(), fit.k, fit.membership_columns.len());
    Ok(e_step_one(&panel, &z, &p).post)
}

/// Posterior table for every respondent, sorted by id.
pub fn posterior_table(fit: &LatentClassFit, data: &Dataset) -> Result<Vec<(RespondentId, Vec<f64>)>> {
    data.respondents()
        .into_iter()
        .map(|id| posterior_class_probs(fit, data, &id).map(|p| (id, p)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_a1_rows() {
        let (aic, bic) = information_criteria(-777.6628, 7, 525).unwrap();
        assert!((aic - 1569.326).abs() < 5e-4 && (bic - 1599.169).abs() < 5e-4);
        let (aic, bic) = information_criteria(-769.1633, 11, 525).unwrap();
        assert!((aic - 1560.327).abs() < 5e-4 && (bic - 1607.224).abs() < 5e-4);
        assert_eq!(information_criteria(0.0, 0, 525).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn canonical_order_and_reference() {
        let p = Params {
            betas: vec![[-0.02, -0.01, 0.0], [-0.02, -0.03, -0.6], [-0.01, -0.02, -0.1]],
            gammas: vec![vec![0.5, 1.0], vec![-0.2, 0.3]],
        };
        let c = canonicalize(&p);
        assert_eq!(c.betas[0][1], -0.03);
        assert_eq!(c.betas[2][1], -0.01);
        // old class 0 is now the reference: others are relative to it
        assert!((c.gammas[0][0] + 0.7).abs() < 1e-15 && (c.gammas[0][1] + 0.7).abs() < 1e-15);
        assert_eq!(c.gammas[1], vec![-0.5, -1.0]);
        // permuting labels first gives the same canonical form
        let swapped = Params {
            betas: vec![p.betas[2], p.betas[1], p.betas[0]],
            gammas: vec![vec![-0.5, -1.0], vec![-0.2 - 0.5, 0.3 - 1.0]],
        };
        let c2 = canonicalize(&swapped);
        assert_eq!(c.betas, c2.betas);
        for (a, b) in c.gammas.iter().flatten().zip(c2.gammas.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn priors_sum_to_one_reference_zero() {
        let lp = log_priors(&[1.0, 2.0], &[vec![0.3, -0.1]]);
        let s: f64 = lp.iter().map(|x| x.exp()).sum();
        assert!((s - 1.0).abs() < 1e-15);
    }
}
