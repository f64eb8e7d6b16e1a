//! Fixtures shared by the integration test targets.
#![allow(dead_code)]

use choicelab_core::design::{enumerate_pairs, filter_dominated, select_design, zero_prior, AttributeSpec, Design, SelectConfig};
use choicelab_core::gmnl::GmnlParameters;
use choicelab_core::synth::{ModelTruth, SbdcTruth, TruthSpec};
use choicelab_core::Coefficients;

pub const N_RESPONDENTS: usize = 525;
pub const TASKS: usize = 4;

pub fn candidates() -> Vec<choicelab_core::ChoiceTask> {
    let spec = AttributeSpec::replication();
    filter_dominated(&spec, &enumerate_pairs(&spec).unwrap())
}

/// 16-task zero-prior design used to simulate paired-choice data.
pub fn design16() -> Design {
    let spec = AttributeSpec::replication();
    let cfg = SelectConfig {
        restarts: 10,
        ..SelectConfig::default()
    };
    select_design(&candidates(), 16, &zero_prior(&spec), 7, &cfg).unwrap()
}

pub fn work_cl() -> Coefficients {
    Coefficients::from_attributes(-0.034, -0.021, -0.102)
}

pub fn work_gmnl() -> GmnlParameters {
    GmnlParameters::new(Coefficients::from_attributes(-0.091, -0.059, -0.760), 0.043, 0.659, 1.327)
}

pub fn lc_classes() -> (Vec<Coefficients>, Vec<f64>) {
    (
        vec![
            Coefficients::from_attributes(-0.025, -0.011, 0.0),
            Coefficients::from_attributes(-0.019, -0.021, -0.673),
        ],
        vec![0.351, 0.649],
    )
}

pub fn cl_truth(seed: u64) -> TruthSpec {
    TruthSpec::new(ModelTruth::Clogit { beta: work_cl() }, seed)
}

pub fn gmnl_truth(seed: u64) -> TruthSpec {
    TruthSpec::new(ModelTruth::Gmnl { params: work_gmnl() }, seed)
}

pub fn lc_truth(seed: u64) -> TruthSpec {
    let (classes, shares) = lc_classes();
    TruthSpec::new(ModelTruth::LatentClass { classes, shares }, seed)
}

pub fn sbdc_truth(seed: u64, sigma: f64) -> TruthSpec {
    TruthSpec::new(ModelTruth::Sbdc(SbdcTruth::base(-6.132, 0.961, sigma)), seed)
}

pub fn within(estimate: f64, truth: f64, se: f64, k: f64) -> bool {
    se.is_finite() && (estimate - truth).abs() <= k * se
}
