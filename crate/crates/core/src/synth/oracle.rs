//! Deliberately literal likelihood evaluation: no log-sum-exp, no shared
//! kernels, and dense trapezoid grids instead of quadrature or draws.

use std::collections::BTreeMap;

use super::truth::{ModelTruth, SbdcTruth};
use crate::covariates::CovariateEncoding;
use crate::model::{Dataset, RespondentId};
use crate::sbdc::SbdcDataset;
use crate::{Error, Result};

pub const MAX_ORACLE_OBSERVATIONS: usize = 1000;

/// Integration range in standard-normal units.
const GRID_HALF_WIDTH: f64 = 8.0;

#[derive(Debug, Clone, Copy)]
pub enum OracleData<'a> {
    Sce(&'a Dataset),
    Sbdc(&'a SbdcDataset, &'a CovariateEncoding),
}

impl OracleData<'_> {
    fn len(&self) -> usize {
        match self {
            OracleData::Sce(d) => d.observations.len(),
            OracleData::Sbdc(d, _) => d.observations.len(),
        }
    }
}

/// Brute-force log-likelihood with 10,000 grid points for one-dimensional
/// integrals and 128 points per axis for the three-dimensional GMNL integral.
pub fn brute_force_loglik(data: OracleData<'_>, model: &ModelTruth) -> Result<f64> {
    let points = match model {
        ModelTruth::Gmnl { .. } => 128,
        _ => 10_000,
    };
    brute_force_loglik_with_grid(data, model, points)
}

pub fn brute_force_loglik_with_grid(data: OracleData<'_>, model: &ModelTruth, points: usize) -> Result<f64> {
    if data.len() > MAX_ORACLE_OBSERVATIONS {
        return Err(Error::Input(format!(
            "brute-force likelihood refuses {} observations (limit {})",
            data.len(),
            MAX_ORACLE_OBSERVATIONS
        )));
    }
    if points < 2 {
        return Err(Error::Config("grid needs at least two points".into()));
    }
    match (data, model) {
        (OracleData::Sce(d), ModelTruth::Clogit { beta }) => {
            let b = beta.attribute_array()?;
            let groups = sce_groups(d);
            Ok(groups.values().map(|tasks| panel_log_prob(tasks, &b)).sum())
        }
        (OracleData::Sce(d), ModelTruth::LatentClass { classes, shares }) => {
            let betas = classes
                .iter()
                .map(|c| c.attribute_array())
                .collect::<Result<Vec<_>>>()?;
            let groups = sce_groups(d);
            Ok(groups
                .values()
                .map(|tasks| {
                    let mut l = 0.0;
                    for (b, s) in betas.iter().zip(shares) {
                        l += s * panel_log_prob(tasks, b).exp();
                    }
                    l.ln()
                })
                .sum())
        }
        (OracleData::Sce(d), ModelTruth::Gmnl { params }) => {
            let m = params.mean.attribute_array()?;
            let grid = trapezoid_normal(points);
            let groups = sce_groups(d);
            let mut total = 0.0;
            for tasks in groups.values() {
                let mut l = 0.0;
                for (z1, w1) in &grid {
                    for (z2, w2) in &grid {
                        for (z3, w3) in &grid {
                            let sigma = (-0.5 * params.tau * params.tau + params.tau * z3).exp();
                            let b = [
                                sigma * (m[0] + params.sd_wait * z1),
                                sigma * m[1],
                                sigma * (m[2] + params.sd_unrel * z2),
                            ];
                            l += w1 * w2 * w3 * panel_log_prob(tasks, &b).exp();
                        }
                    }
                }
                total += l.ln();
            }
            Ok(total)
        }
        (OracleData::Sbdc(d, encoding), ModelTruth::Sbdc(t)) => sbdc_loglik(d, encoding, t, points),
        _ => Err(Error::Config("model family does not match the data type".into())),
    }
}

type Task = (Vec<[f64; 3]>, usize);

fn sce_groups(d: &Dataset) -> BTreeMap<RespondentId, Vec<Task>> {
    let mut g: BTreeMap<RespondentId, Vec<Task>> = BTreeMap::new();
    for o in &d.observations {
        g.entry(o.respondent_id.clone())
            .or_default()
            .push((o.task.attribute_rows(), o.chosen_index));
    }
    g
}

fn panel_log_prob(tasks: &[Task], b: &[f64; 3]) -> f64 {
    let mut ll = 0.0;
    for (rows, chosen) in tasks {
        let v = |x: &[f64; 3]| x[0] * b[0] + x[1] * b[1] + x[2] * b[2];
        // written relative to the chosen utility so scaled-up draws give 0, not inf/inf
        let vc = v(&rows[*chosen]);
        let denom: f64 = rows.iter().map(|x| (v(x) - vc).exp()).sum();
        ll += (1.0 / denom).ln();
    }
    ll
}

/// Nodes and trapezoid weights times the standard-normal density.
fn trapezoid_normal(points: usize) -> Vec<(f64, f64)> {
    let h = 2.0 * GRID_HALF_WIDTH / (points - 1) as f64;
    (0..points)
        .map(|i| {
            let z = -GRID_HALF_WIDTH + i as f64 * h;
            let end = if i == 0 || i == points - 1 { 0.5 } else { 1.0 };
            let phi = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
            (z, end * h * phi)
        })
        .collect()
}

fn sbdc_loglik(d: &SbdcDataset, encoding: &CovariateEncoding, t: &SbdcTruth, points: usize) -> Result<f64> {
    let grid = trapezoid_normal(points);
    let mut groups: BTreeMap<&RespondentId, Vec<(f64, bool)>> = BTreeMap::new();
    for o in &d.observations {
        groups
            .entry(&o.respondent_id)
            .or_default()
            .push((o.compensation, o.accepted));
    }
    let mut total = 0.0;
    for (id, obs) in groups {
        let row = d
            .covariates
            .get(id)
            .ok_or_else(|| Error::Input(format!("respondent {id} has no covariate row")))?;
        let x = encoding.encode(&t.covariates, row)?;
        let xb: f64 = x.iter().zip(&t.beta_x).map(|(a, b)| a * b).sum();
        let mut l = 0.0;
        for (z, w) in &grid {
            let mut prod = 1.0;
            for (c, y) in &obs {
                let eta = t.beta0_mean + t.sigma * z + t.beta_c * c.ln() + xb;
                let p = 1.0 / (1.0 + (-eta).exp());
                prod *= if *y { p } else { 1.0 - p };
            }
            l += w * prod;
        }
        total += l.ln();
    }
    Ok(total)
}
