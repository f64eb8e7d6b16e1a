//! Shared domain types and the random-utility probability kernels.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::covariates::CovariateRow;
use crate::numeric::{compensated_vec_sum, log_sum_exp, CompensatedSum, PROB_FLOOR};
use crate::{Error, Result};

pub const WAIT: &str = "wait";
pub const COST: &str = "cost";
pub const UNREL: &str = "unrel";

/// Attribute names in regressor order.
pub const ATTRIBUTES: [&str; 3] = [WAIT, COST, UNREL];

pub const WAIT_LEVELS: [f64; 3] = [30.0, 60.0, 90.0];
pub const COST_LEVELS: [f64; 3] = [50.0, 100.0, 150.0];
pub const UNREL_LEVELS: [f64; 3] = [5.0, 10.0, 15.0];

/// One delivery-service alternative: waiting time (minutes), cost (yuan) and
/// the half-width of the arrival window (minutes).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributeProfile {
    pub wait: f64,
    pub cost: f64,
    pub unrel: f64,
}

impl AttributeProfile {
    pub fn new(wait: f64, cost: f64, unrel: f64) -> Result<Self> {
        let p = Self { wait, cost, unrel };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in ATTRIBUTES.iter().zip(self.as_array()) {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Input(format!(
                    "attribute `{name}` must be strictly positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.wait, self.cost, self.unrel]
    }

    pub fn from_array(x: [f64; 3]) -> Self {
        Self {
            wait: x[0],
            cost: x[1],
            unrel: x[2],
        }
    }

    /// Checks every value against the three-level replication grid.
    pub fn check_replication_grid(&self) -> Result<()> {
        let grids: [(&str, &[f64; 3], f64); 3] = [
            ("wait_min", &WAIT_LEVELS, self.wait),
            ("cost_yuan", &COST_LEVELS, self.cost),
            ("unrel_min", &UNREL_LEVELS, self.unrel),
        ];
        for (column, grid, v) in grids {
            if !grid.contains(&v) {
                return Err(Error::Input(format!(
                    "{column}={v} is outside the replication grid {{{}}}",
                    grid.map(|g| g.to_string()).join(", ")
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Work,
    Home,
}

impl Scenario {
    pub const ALL: [Scenario; 2] = [Scenario::Work, Scenario::Home];

    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::Work => "work",
            Scenario::Home => "home",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "work" => Ok(Scenario::Work),
            "home" => Ok(Scenario::Home),
            other => Err(Error::Input(format!(
                "unknown scenario `{other}` (expected work|home)"
            ))),
        }
    }
}

/// A choice scenario between J >= 2 distinct alternatives. Design-universe
/// tasks carry no scenario; tasks inside observations always do.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceTask {
    pub task_id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Scenario>,
    pub alternatives: Vec<AttributeProfile>,
}

impl ChoiceTask {
    pub fn new(
        task_id: u32,
        scenario: Option<Scenario>,
        alternatives: Vec<AttributeProfile>,
    ) -> Result<Self> {
        let task = Self {
            task_id,
            scenario,
            alternatives,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alternatives.len() < 2 {
            return Err(Error::Input(format!(
                "task {} has {} alternatives; at least 2 required",
                self.task_id,
                self.alternatives.len()
            )));
        }
        for (i, a) in self.alternatives.iter().enumerate() {
            a.validate()?;
            if self.alternatives[..i].contains(a) {
                return Err(Error::Input(format!(
                    "task {} contains duplicate alternatives",
                    self.task_id
                )));
            }
        }
        Ok(())
    }

    pub fn with_scenario(&self, scenario: Scenario) -> Self {
        Self {
            scenario: Some(scenario),
            ..self.clone()
        }
    }

    pub fn attribute_rows(&self) -> Vec<[f64; 3]> {
        self.alternatives.iter().map(|a| a.as_array()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RespondentId(pub String);

impl RespondentId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for RespondentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for RespondentId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub respondent_id: RespondentId,
    /// Position of this task in the respondent's sequence (1-based).
    pub task_no: u32,
    pub task: ChoiceTask,
    pub chosen_index: usize,
}

/// Long-format choice panel: respondents x tasks x alternatives.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub observations: Vec<Observation>,
    pub covariates: BTreeMap<RespondentId, CovariateRow>,
}

impl Dataset {
    pub fn new(
        observations: Vec<Observation>,
        covariates: BTreeMap<RespondentId, CovariateRow>,
    ) -> Result<Self> {
        let ds = Self {
            observations,
            covariates,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, o) in self.observations.iter().enumerate() {
            o.task.validate()?;
            if o.task.scenario.is_none() {
                return Err(Error::Input(format!(
                    "observation {i} (respondent {}) has no scenario tag",
                    o.respondent_id
                )));
            }
            if o.chosen_index >= o.task.alternatives.len() {
                return Err(Error::Input(format!(
                    "observation {i}: chosen index {} out of range for {} alternatives",
                    o.chosen_index,
                    o.task.alternatives.len()
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

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    /// Respondent ids that appear in observations, sorted.
    pub fn respondents(&self) -> Vec<RespondentId> {
        let mut ids: Vec<_> = self
            .observations
            .iter()
            .map(|o| o.respondent_id.clone())
            .collect();
        ids.sort();
        ids.dedup();
        ids
    }

    pub fn n_respondents(&self) -> usize {
        self.respondents().len()
    }

    pub fn filter_scenario(&self, scenario: Scenario) -> Dataset {
        let observations: Vec<_> = self
            .observations
            .iter()
            .filter(|o| o.task.scenario == Some(scenario))
            .cloned()
            .collect();
        let keep: std::collections::BTreeSet<_> =
            observations.iter().map(|o| &o.respondent_id).collect();
        let covariates = self
            .covariates
            .iter()
            .filter(|(k, _)| keep.contains(k))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Dataset {
            observations,
            covariates,
        }
    }

    /// Groups observations by respondent in sorted-id order, preserving the
    /// original order of each respondent's tasks.
    pub fn panels(&self) -> Vec<Panel> {
        let mut map: BTreeMap<&RespondentId, Vec<PanelTask>> = BTreeMap::new();
        for o in &self.observations {
            map.entry(&o.respondent_id).or_default().push(PanelTask {
                rows: o.task.attribute_rows(),
                chosen: o.chosen_index,
            });
        }
        map.into_iter()
            .map(|(id, tasks)| Panel {
                respondent_id: id.clone(),
                tasks,
            })
            .collect()
    }
}

/// Compact numeric view of one task as seen by the estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelTask {
    pub rows: Vec<[f64; 3]>,
    pub chosen: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub respondent_id: RespondentId,
    pub tasks: Vec<PanelTask>,
}

/// Named coefficient map.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Coefficients(pub BTreeMap<String, f64>);

impl Coefficients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_attributes(wait: f64, cost: f64, unrel: f64) -> Self {
        Self::from_array([wait, cost, unrel])
    }

    pub fn from_array(beta: [f64; 3]) -> Self {
        let mut c = Self::new();
        for (name, v) in ATTRIBUTES.iter().zip(beta) {
            c.set(name, v);
        }
        c
    }

    pub fn set(&mut self, name: &str, value: f64) {
        self.0.insert(name.to_owned(), value);
    }

    pub fn get(&self, name: &str) -> Result<f64> {
        self.0
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("missing coefficient `{name}`")))
    }

    pub fn attribute_array(&self) -> Result<[f64; 3]> {
        Ok([self.get(WAIT)?, self.get(COST)?, self.get(UNREL)?])
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(self.0.iter().map(|(k, v)| (k.clone(), v * s)).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.values().all(|v| v.is_finite())
    }
}

pub fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn utility(profile: &AttributeProfile, beta: &Coefficients) -> Result<f64> {
    Ok(dot3(&profile.as_array(), &beta.attribute_array()?))
}

/// Softmax over the alternatives' linear utilities.
pub fn choice_probabilities(task: &ChoiceTask, beta: &Coefficients) -> Result<Vec<f64>> {
    if task.alternatives.len() < 2 {
        return Err(Error::Input(format!(
            "task {} needs at least 2 alternatives",
            task.task_id
        )));
    }
    let b = beta.attribute_array()?;
    let utils: Vec<f64> = task
        .alternatives
        .iter()
        .map(|a| dot3(&a.as_array(), &b))
        .collect();
    probabilities_from_utilities(&utils)
}

pub fn probabilities_from_utilities(utils: &[f64]) -> Result<Vec<f64>> {
    if let Some(i) = utils.iter().position(|u| !u.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite utility {} for alternative {i}",
            utils[i]
        )));
    }
    let lse = log_sum_exp(utils);
    Ok(utils.iter().map(|u| (u - lse).exp()).collect())
}

/// Log-probability of the chosen alternative and its score
/// `x_chosen - sum_j p_j x_j` for a single task.
pub(crate) fn task_log_prob_score(task: &PanelTask, beta: &[f64; 3]) -> (f64, [f64; 3]) {
    let mut utils = [0.0f64; 8];
    let j = task.rows.len();
    let mut buf;
    let utils: &mut [f64] = if j <= 8 {
        &mut utils[..j]
    } else {
        buf = vec![0.0; j];
        &mut buf
    };
    for (u, x) in utils.iter_mut().zip(&task.rows) {
        *u = dot3(x, beta);
    }
    let max = utils.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut denom = 0.0;
    for u in utils.iter_mut() {
        *u = (*u - max).exp();
        denom += *u;
    }
    let chosen_u = dot3(&task.rows[task.chosen], beta);
    let logp = (chosen_u - max - denom.ln()).max(PROB_FLOOR.ln());
    let mut mean = [0.0; 3];
    for (e, x) in utils.iter().zip(&task.rows) {
        let p = e / denom;
        for k in 0..3 {
            mean[k] += p * x[k];
        }
    }
    let xc = &task.rows[task.chosen];
    (logp, [xc[0] - mean[0], xc[1] - mean[1], xc[2] - mean[2]])
}

/// Per-task contribution to the negative Hessian: `sum_j p_j (x_j - xbar)(x_j - xbar)'`.
pub(crate) fn task_information(task: &PanelTask, beta: &[f64; 3]) -> [[f64; 3]; 3] {
    let utils: Vec<f64> = task.rows.iter().map(|x| dot3(x, beta)).collect();
    let lse = log_sum_exp(&utils);
    let probs: Vec<f64> = utils.iter().map(|u| (u - lse).exp()).collect();
    let mut mean = [0.0; 3];
    for (p, x) in probs.iter().zip(&task.rows) {
        for k in 0..3 {
            mean[k] += p * x[k];
        }
    }
    let mut info = [[0.0; 3]; 3];
    for (p, x) in probs.iter().zip(&task.rows) {
        let d = [x[0] - mean[0], x[1] - mean[1], x[2] - mean[2]];
        for a in 0..3 {
            for b in 0..3 {
                info[a][b] += p * d[a] * d[b];
            }
        }
    }
    info
}

/// Per-respondent log-likelihood and score under a common coefficient vector.
pub(crate) fn panel_log_lik_score(panel: &Panel, beta: &[f64; 3]) -> (f64, [f64; 3]) {
    let mut ll = CompensatedSum::new();
    let mut score = [0.0; 3];
    for t in &panel.tasks {
        let (lp, s) = task_log_prob_score(t, beta);
        ll.add(lp);
        for k in 0..3 {
            score[k] += s[k];
        }
    }
    (ll.value(), score)
}

/// Conditional-logit log-likelihood with its analytic gradient.
pub fn log_likelihood(data: &Dataset, beta: &Coefficients) -> Result<(f64, Coefficients)> {
    if data.is_empty() {
        return Err(Error::Input("empty dataset".into()));
    }
    let b = beta.attribute_array()?;
    let panels = data.panels();
    let (value, grad) = panels_log_likelihood(&panels, &b);
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite log-likelihood".into()));
    }
    Ok((value, Coefficients::from_array(grad)))
}

pub(crate) fn panels_log_likelihood(panels: &[Panel], beta: &[f64; 3]) -> (f64, [f64; 3]) {
    let parts: Vec<(f64, [f64; 3])> = panels
        .iter()
        .map(|p| panel_log_lik_score(p, beta))
        .collect();
    let mut ll = CompensatedSum::new();
    for (v, _) in &parts {
        ll.add(*v);
    }
    let g = compensated_vec_sum(3, parts.iter().map(|(_, s)| s.as_slice()));
    (ll.value(), [g[0], g[1], g[2]])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn work_cl() -> Coefficients {
        Coefficients::from_attributes(-0.034, -0.021, -0.102)
    }

    fn task(a: [f64; 3], b: [f64; 3]) -> ChoiceTask {
        ChoiceTask::new(
            1,
            Some(Scenario::Work),
            vec![AttributeProfile::from_array(a), AttributeProfile::from_array(b)],
        )
        .unwrap()
    }

    #[test]
    fn utility_examples() {
        let p = AttributeProfile::new(30.0, 50.0, 5.0).unwrap();
        assert_eq!(utility(&p, &Coefficients::from_attributes(0.0, 0.0, 0.0)).unwrap(), 0.0);
        // -0.034*30 - 0.021*50 - 0.102*5 = -1.02 - 1.05 - 0.51
        assert!((utility(&p, &work_cl()).unwrap() + 2.58).abs() < 1e-12);
        let u1 = utility(&p, &work_cl()).unwrap();
        let u2 = utility(&p, &work_cl().scaled(2.0)).unwrap();
        assert!((u2 - 2.0 * u1).abs() < 1e-12);
    }

    #[test]
    fn missing_coefficient_is_config_error() {
        let mut c = Coefficients::new();
        c.set(WAIT, 1.0);
        let p = AttributeProfile::new(30.0, 50.0, 5.0).unwrap();
        assert!(matches!(utility(&p, &c), Err(Error::Config(_))));
    }

    #[test]
    fn probability_examples() {
        let base = ChoiceTask {
            task_id: 0,
            scenario: Some(Scenario::Work),
            alternatives: vec![AttributeProfile::new(30.0, 50.0, 5.0).unwrap(); 2],
        };
        let p = choice_probabilities(&base, &work_cl()).unwrap();
        assert!(p.iter().all(|v| (v - 0.5).abs() < 1e-15), "{p:?}");

        let t = task([30.0, 150.0, 5.0], [90.0, 50.0, 15.0]);
        let p = choice_probabilities(&t, &work_cl()).unwrap();
        // Hand: U_A = -1.02 - 3.15 - 0.51 = -4.68, U_B = -3.06 - 1.05 - 1.53 = -5.64
        let hand = 1.0 / (1.0 + (-0.96f64).exp());
        assert!((p[0] - hand).abs() < 1e-12);
        assert!((p[0] - 0.7231).abs() < 5e-5);
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_utility_is_numeric_error() {
        let t = task([30.0, 150.0, 5.0], [90.0, 50.0, 15.0]);
        let b = Coefficients::from_attributes(f64::INFINITY, 0.0, 0.0);
        assert!(matches!(choice_probabilities(&t, &b), Err(Error::Numeric(_))));
    }

    #[test]
    fn duplicate_alternatives_rejected() {
        let a = AttributeProfile::new(30.0, 50.0, 5.0).unwrap();
        assert!(ChoiceTask::new(1, None, vec![a, a]).is_err());
        assert!(ChoiceTask::new(1, None, vec![a]).is_err());
        assert!(AttributeProfile::new(0.0, 50.0, 5.0).is_err());
    }

    #[test]
    fn single_half_probability_observation() {
        let a = AttributeProfile::new(30.0, 50.0, 5.0).unwrap();
        let b = AttributeProfile::new(60.0, 50.0, 5.0).unwrap();
        let obs = Observation {
            respondent_id: "r1".into(),
            task_no: 1,
            task: ChoiceTask::new(1, Some(Scenario::Work), vec![a, b]).unwrap(),
            chosen_index: 1,
        };
        let mut cov = BTreeMap::new();
        cov.insert(RespondentId::from("r1"), CovariateRow::new());
        let ds = Dataset::new(vec![obs], cov).unwrap();
        let (ll, _) = log_likelihood(&ds, &Coefficients::from_attributes(0.0, -0.02, -0.1)).unwrap();
        assert!((ll - 0.5f64.ln()).abs() < 1e-15);
        assert!(matches!(
            log_likelihood(&Dataset::default(), &work_cl()),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn grid_check_names_column() {
        let p = AttributeProfile::new(30.0, 70.0, 5.0).unwrap();
        let err = p.check_replication_grid().unwrap_err().to_string();
        assert!(err.contains("cost_yuan=70"), "{err}");
        assert!(err.contains("50, 100, 150"), "{err}");
    }
}
