use std::collections::BTreeMap;

use rand::distr::Open01;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::truth::{ModelTruth, TruthSpec};
use crate::covariates::CovariateRow;
use crate::design::Design;
use crate::model::{dot3, Dataset, Observation, RespondentId};
use crate::numeric::logistic;
use crate::sbdc::{SbdcDataset, SbdcObservation};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Choices = 0,
    Heterogeneity = 1,
    Covariates = 2,
}

pub fn respondent_rng(seed: u64, respondent: usize, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(4 * respondent as u64 + stream as u64);
    rng
}

/// `r00001`, `r00002`, ... (1-based).
pub fn respondent_id(respondent: usize) -> RespondentId {
    RespondentId::new(format!("r{:05}", respondent + 1))
}

fn gumbel<R: Rng>(rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    -(-u.ln()).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedSce {
    pub data: Dataset,
    /// True class of each respondent (latent-class truth only).
    pub true_class: BTreeMap<RespondentId, usize>,
}

/// Coefficients for one respondent-scenario. `u_class` is the respondent's
/// class-assignment uniform.
fn respondent_beta<R: Rng>(model: &ModelTruth, u_class: f64, rng: &mut R) -> Result<([f64; 3], Option<usize>)> {
    match model {
        ModelTruth::Clogit { beta } => Ok((beta.attribute_array()?, None)),
        ModelTruth::Gmnl { params } => {
            let m = params.mean.attribute_array()?;
            let z: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
            let sigma = (-0.5 * params.tau * params.tau + params.tau * z[2]).exp();
            Ok((
                [
                    sigma * (m[0] + params.sd_wait * z[0]),
                    sigma * m[1],
                    sigma * (m[2] + params.sd_unrel * z[1]),
                ],
                None,
            ))
        }
        ModelTruth::LatentClass { classes, shares } => {
            let mut acc = 0.0;
            let mut class = classes.len() - 1;
            for (k, s) in shares.iter().enumerate() {
                acc += s;
                if u_class < acc {
                    class = k;
                    break;
                }
            }
            Ok((classes[class].attribute_array()?, Some(class)))
        }
        ModelTruth::Sbdc(_) => Err(Error::Config(
            "an SBDC truth cannot generate paired choice tasks".into(),
        )),
    }
}

pub fn simulate_sce(
    design: &Design,
    truth: &TruthSpec,
    n_respondents: usize,
    tasks_per_scenario: usize,
    seed: u64,
) -> Result<Dataset> {
    simulate_sce_detailed(design, truth, n_respondents, tasks_per_scenario, seed).map(|s| s.data)
}

pub fn simulate_sce_detailed(
    design: &Design,
    truth: &TruthSpec,
    n_respondents: usize,
    tasks_per_scenario: usize,
    seed: u64,
) -> Result<SimulatedSce> {
    truth.validate()?;
    if design.tasks.is_empty() {
        return Err(Error::Input("design has no tasks".into()));
    }
    if tasks_per_scenario > design.tasks.len() {
        return Err(Error::Input(format!(
            "tasks_per_scenario ({tasks_per_scenario}) exceeds the design size ({})",
            design.tasks.len()
        )));
    }
    let scenarios = truth.scenario_list();
    let per: Vec<(RespondentId, CovariateRow, Vec<Observation>, Option<usize>)> = (0..n_respondents)
        .into_par_iter()
        .map(|r| {
            let id = respondent_id(r);
            let mut choice_rng = respondent_rng(seed, r, Stream::Choices);
            let mut het_rng = respondent_rng(seed, r, Stream::Heterogeneity);
            let mut cov_rng = respondent_rng(seed, r, Stream::Covariates);
            let cov = truth.covariates.draw(&mut cov_rng)?;
            let u_class: f64 = het_rng.random();
            let mut class = None;
            let mut obs = Vec::with_capacity(scenarios.len() * tasks_per_scenario);
            for s in &scenarios {
                let (beta, c) = respondent_beta(truth.model_for(*s), u_class, &mut het_rng)?;
                class = class.or(c);
                for idx in sample(&mut choice_rng, design.tasks.len(), tasks_per_scenario).into_iter() {
                    let task = design.tasks[idx].with_scenario(*s);
                    let mut best = 0;
                    let mut best_u = f64::NEG_INFINITY;
                    for (j, alt) in task.alternatives.iter().enumerate() {
                        let u = dot3(&alt.as_array(), &beta) + gumbel(&mut choice_rng);
                        if u > best_u {
                            best_u = u;
                            best = j;
                        }
                    }
                    obs.push(Observation {
                        respondent_id: id.clone(),
                        task_no: obs.len() as u32 + 1,
                        task,
                        chosen_index: best,
                    });
                }
            }
            Ok((id, cov, obs, class))
        })
        .collect::<Result<_>>()?;
    let mut observations = Vec::new();
    let mut covariates = BTreeMap::new();
    let mut true_class = BTreeMap::new();
    for (id, cov, obs, class) in per {
        observations.extend(obs);
        if let Some(c) = class {
            true_class.insert(id.clone(), c);
        }
        covariates.insert(id, cov);
    }
    Ok(SimulatedSce {
        data: Dataset::new(observations, covariates)?,
        true_class,
    })
}

pub fn simulate_sbdc(
    truth: &TruthSpec,
    compensation_levels: &[f64],
    draws_per_respondent: usize,
    n_respondents: usize,
    seed: u64,
) -> Result<SbdcDataset> {
    truth.validate()?;
    let ModelTruth::Sbdc(t) = &truth.model else {
        return Err(Error::Config("simulate_sbdc needs an SBDC truth".into()));
    };
    if compensation_levels.is_empty() {
        return Err(Error::Config("compensation_levels is empty".into()));
    }
    if compensation_levels.iter().any(|c| !(*c > 0.0)) {
        return Err(Error::Config("compensation levels must be positive".into()));
    }
    if draws_per_respondent > compensation_levels.len() {
        return Err(Error::Config(format!(
            "draws_per_respondent ({draws_per_respondent}) exceeds the number of levels ({})",
            compensation_levels.len()
        )));
    }
    let n_cols = truth.encoding.columns(&t.covariates)?.len();
    if n_cols != t.beta_x.len() {
        return Err(Error::Config(format!(
            "SBDC truth has {} covariate coefficients for {n_cols} encoded columns",
            t.beta_x.len()
        )));
    }
    let per: Vec<(RespondentId, CovariateRow, Vec<SbdcObservation>)> = (0..n_respondents)
        .into_par_iter()
        .map(|r| {
            let id = respondent_id(r);
            let mut choice_rng = respondent_rng(seed, r, Stream::Choices);
            let mut het_rng = respondent_rng(seed, r, Stream::Heterogeneity);
            let mut cov_rng = respondent_rng(seed, r, Stream::Covariates);
            let cov = truth.covariates.draw(&mut cov_rng)?;
            let x = truth.encoding.encode(&t.covariates, &cov)?;
            let xb: f64 = x.iter().zip(&t.beta_x).map(|(a, b)| a * b).sum();
            let z: f64 = het_rng.sample(StandardNormal);
            let b0 = t.beta0_mean + t.sigma * z;
            let obs = sample(&mut choice_rng, compensation_levels.len(), draws_per_respondent)
                .into_iter()
                .enumerate()
                .map(|(k, idx)| {
                    let c = compensation_levels[idx];
                    let p = logistic(b0 + t.beta_c * c.ln() + xb);
                    let u: f64 = choice_rng.random();
                    SbdcObservation {
                        respondent_id: id.clone(),
                        task_no: k as u32 + 1,
                        compensation: c,
                        accepted: u < p,
                    }
                })
                .collect();
            Ok((id, cov, obs))
        })
        .collect::<Result<_>>()?;
    let mut observations = Vec::new();
    let mut covariates = BTreeMap::new();
    for (id, cov, obs) in per {
        observations.extend(obs);
        covariates.insert(id, cov);
    }
    SbdcDataset::new(observations, covariates)
}
