use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::covariates::{CovariateEncoding, CovariateRow, CovariateValue};
use crate::gmnl::GmnlParameters;
use crate::model::{Coefficients, Scenario};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbdcTruth {
    pub beta0_mean: f64,
    pub beta_c: f64,
    pub sigma: f64,
    /// Covariate names entering the acceptance index.
    #[serde(default)]
    pub covariates: Vec<String>,
    /// Coefficients on the encoded covariate columns, in column order.
    #[serde(default)]
    pub beta_x: Vec<f64>,
}

impl SbdcTruth {
    pub fn base(beta0_mean: f64, beta_c: f64, sigma: f64) -> Self {
        Self {
            beta0_mean,
            beta_c,
            sigma,
            covariates: Vec::new(),
            beta_x: Vec::new(),
        }
    }

    /// Parameter vector in the estimator's order `[b0, bc, sigma, bx...]`.
    pub fn theta(&self) -> Vec<f64> {
        let mut t = vec![self.beta0_mean, self.beta_c, self.sigma];
        t.extend_from_slice(&self.beta_x);
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum ModelTruth {
    Clogit { beta: Coefficients },
    Gmnl { params: GmnlParameters },
    LatentClass { classes: Vec<Coefficients>, shares: Vec<f64> },
    Sbdc(SbdcTruth),
}

impl ModelTruth {
    pub fn validate(&self) -> Result<()> {
        let finite = |c: &Coefficients, what: &str| -> Result<()> {
            c.attribute_array()?;
            if !c.is_finite() {
                return Err(Error::Config(format!("{what} coefficients must be finite")));
            }
            Ok(())
        };
        match self {
            ModelTruth::Clogit { beta } => finite(beta, "clogit"),
            ModelTruth::Gmnl { params } => {
                finite(&params.mean, "gmnl mean")?;
                if ![params.sd_wait, params.sd_unrel, params.tau].iter().all(|v| v.is_finite()) {
                    return Err(Error::Config("gmnl sd and tau must be finite".into()));
                }
                Ok(())
            }
            ModelTruth::LatentClass { classes, shares } => {
                if classes.is_empty() || classes.len() != shares.len() {
                    return Err(Error::Config(
                        "latent-class truth needs one share per class".into(),
                    ));
                }
                for c in classes {
                    finite(c, "class")?;
                }
                let total: f64 = shares.iter().sum();
                if shares.iter().any(|s| !(*s >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                    return Err(Error::Config(format!(
                        "class shares must be non-negative and sum to 1, got {shares:?}"
                    )));
                }
                Ok(())
            }
            ModelTruth::Sbdc(t) => {
                if !(t.beta0_mean.is_finite() && t.beta_c.is_finite() && t.sigma.is_finite() && t.sigma >= 0.0) {
                    return Err(Error::Config("SBDC truth must be finite with sigma >= 0".into()));
                }
                if t.beta_x.iter().any(|b| !b.is_finite()) {
                    return Err(Error::Config("SBDC covariate coefficients must be finite".into()));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Marginal {
    Categorical { categories: Vec<String>, weights: Vec<f64> },
    Uniform { low: f64, high: f64 },
    /// Pick a bracket by weight, then a uniform value inside it.
    Brackets { bounds: Vec<(f64, f64)>, weights: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateMarginal {
    pub name: String,
    #[serde(flatten)]
    pub dist: Marginal,
}

/// Independent draws per covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateGenerator {
    pub marginals: Vec<CovariateMarginal>,
}

impl Default for CovariateGenerator {
    fn default() -> Self {
        Self::sample_marginals()
    }
}

fn cat(name: &str, cats: &[&str], weights: &[f64]) -> CovariateMarginal {
    CovariateMarginal {
        name: name.to_owned(),
        dist: Marginal::Categorical {
            categories: cats.iter().map(|s| s.to_string()).collect(),
            weights: weights.to_vec(),
        },
    }
}

fn uniform(name: &str, low: f64, high: f64) -> CovariateMarginal {
    CovariateMarginal {
        name: name.to_owned(),
        dist: Marginal::Uniform { low, high },
    }
}

impl CovariateGenerator {
    /// Frequencies of the 525-respondent survey sample where they are known
    /// (demographics, income, household); the behavioural covariates use
    /// plausible made-up ranges.
    pub fn sample_marginals() -> Self {
        Self {
            marginals: vec![
                cat(
                    "income",
                    &["under_4000", "4000_8000", "8000_12000", "12000_16000", "16000_20000", "above_20000"],
                    &[20.0, 87.0, 192.0, 112.0, 74.0, 40.0],
                ),
                CovariateMarginal {
                    name: "age".into(),
                    dist: Marginal::Brackets {
                        bounds: vec![(18.0, 25.0), (25.0, 35.0), (35.0, 45.0), (45.0, 55.0), (55.0, 65.0), (65.0, 75.0)],
                        weights: vec![41.0, 286.0, 168.0, 25.0, 2.0, 3.0],
                    },
                },
                cat("gender", &["male", "female"], &[247.0, 278.0]),
                cat("hukou_type", &["agricultural", "urban"], &[135.0, 390.0]),
                cat("hukou_locality", &["local", "non_local"], &[376.0, 149.0]),
                cat(
                    "marital",
                    &["single", "married_with_spouse", "married_apart", "divorced_widowed"],
                    &[87.0, 425.0, 9.0, 4.0],
                ),
                cat(
                    "education",
                    &["primary", "middle", "high", "vocational", "associate", "bachelor", "master_plus"],
                    &[1.0, 3.0, 12.0, 10.0, 30.0, 401.0, 68.0],
                ),
                cat(
                    "employment",
                    &["public", "soe", "private", "foreign", "self_employed", "other"],
                    &[31.0, 100.0, 328.0, 38.0, 9.0, 19.0],
                ),
                cat("children", &["0", "1", "2", "3", "above_3"], &[110.0, 336.0, 65.0, 14.0, 0.0]),
                cat("elderly", &["0", "1", "2", "3", "above_3"], &[370.0, 69.0, 79.0, 7.0, 0.0]),
                cat("license", &["no", "yes"], &[0.3, 0.7]),
                cat("housework", &["no", "yes"], &[0.5, 0.5]),
                uniform("commute_cost", 0.0, 30.0),
                uniform("child_pickup_time", 0.0, 60.0),
                uniform("online_shopping_freq", 0.0, 10.0),
                uniform("food_delivery_freq", 0.0, 10.0),
                uniform("online_shopping_exp", 0.0, 10.0),
                uniform("food_delivery_exp", 0.0, 10.0),
                cat("car_primary", &["no", "yes"], &[0.7, 0.3]),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for m in &self.marginals {
            let bad = |msg: &str| Err(Error::Config(format!("covariate generator `{}`: {msg}", m.name)));
            match &m.dist {
                Marginal::Categorical { categories, weights } => {
                    if categories.len() != weights.len() || categories.is_empty() {
                        return bad("categories and weights must match and be non-empty");
                    }
                    if WeightedIndex::new(weights).is_err() {
                        return bad("weights must be non-negative with a positive sum");
                    }
                }
                Marginal::Uniform { low, high } => {
                    if !(low <= high) {
                        return bad("low must not exceed high");
                    }
                }
                Marginal::Brackets { bounds, weights } => {
                    if bounds.len() != weights.len() || WeightedIndex::new(weights).is_err() {
                        return bad("bounds and weights must match with positive total weight");
                    }
                }
            }
        }
        Ok(())
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> Result<CovariateRow> {
        let mut row = BTreeMap::new();
        for m in &self.marginals {
            let value = match &m.dist {
                Marginal::Categorical { categories, weights } => {
                    let idx = WeightedIndex::new(weights)
                        .map_err(|e| Error::Config(format!("`{}`: {e}", m.name)))?;
                    CovariateValue::Label(categories[idx.sample(rng)].clone())
                }
                Marginal::Uniform { low, high } => {
                    CovariateValue::Number(if low == high { *low } else { rng.random_range(*low..*high) })
                }
                Marginal::Brackets { bounds, weights } => {
                    let idx = WeightedIndex::new(weights)
                        .map_err(|e| Error::Config(format!("`{}`: {e}", m.name)))?;
                    let (lo, hi) = bounds[idx.sample(rng)];
                    CovariateValue::Number(rng.random_range(lo..hi).floor())
                }
            };
            row.insert(m.name.clone(), value);
        }
        Ok(row)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSpec {
    pub model: ModelTruth,
    /// Scenarios to simulate in order; empty means work only.
    #[serde(default)]
    pub scenarios: Vec<Scenario>,
    /// Per-scenario overrides of `model`.
    #[serde(default)]
    pub scenario_models: BTreeMap<Scenario, ModelTruth>,
    #[serde(default)]
    pub covariates: CovariateGenerator,
    #[serde(default)]
    pub encoding: CovariateEncoding,
    pub seed: u64,
}

impl TruthSpec {
    pub fn new(model: ModelTruth, seed: u64) -> Self {
        Self {
            model,
            scenarios: Vec::new(),
            scenario_models: BTreeMap::new(),
            covariates: CovariateGenerator::default(),
            encoding: CovariateEncoding::standard(),
            seed,
        }
    }

    pub fn with_scenarios(mut self, scenarios: &[Scenario]) -> Self {
        self.scenarios = scenarios.to_vec();
        self
    }

    pub fn with_scenario_model(mut self, s: Scenario, m: ModelTruth) -> Self {
        self.scenario_models.insert(s, m);
        self
    }

    pub fn scenario_list(&self) -> Vec<Scenario> {
        if self.scenarios.is_empty() {
            vec![Scenario::Work]
        } else {
            self.scenarios.clone()
        }
    }

    pub fn model_for(&self, s: Scenario) -> &ModelTruth {
        self.scenario_models.get(&s).unwrap_or(&self.model)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        for m in self.scenario_models.values() {
            m.validate()?;
        }
        self.covariates.validate()?;
        self.encoding.validate()
    }
}
