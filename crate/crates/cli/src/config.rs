//! Declarative pipeline configuration (TOML).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use choicelab_core::gmnl::DrawConfig;
use choicelab_core::io::IngestOptions;
use choicelab_core::model::Coefficients;
use choicelab_core::sbdc::COMPENSATION_LEVELS;
use choicelab_core::synth::{ModelTruth, SbdcTruth};
use choicelab_core::welfare::{WeightMode, DEFAULT_REFERENCE_INCOME};
use choicelab_core::Scenario;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const DEFAULT_SEED: u64 = 20240601;

/// Pipeline stages in dependency order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Design,
    Simulate,
    Ingest,
    Fit,
    Wtp,
    Wtac,
    Welfare,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Design => "design",
            Stage::Simulate => "simulate",
            Stage::Ingest => "ingest",
            Stage::Fit => "fit",
            Stage::Wtp => "wtp",
            Stage::Wtac => "wtac",
            Stage::Welfare => "welfare",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Sbdc,
    Clogit,
    Gmnl,
    Lclogit,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub design: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sbdc: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sce: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub groups: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignStage {
    pub n_tasks: usize,
    pub restarts: usize,
    pub max_sweeps: usize,
    pub balance_weight: f64,
    pub prior: Coefficients,
}

impl Default for DesignStage {
    fn default() -> Self {
        Self {
            n_tasks: 16,
            restarts: 50,
            max_sweeps: 1000,
            balance_weight: 0.0,
            prior: Coefficients::from_attributes(0.0, 0.0, 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateStage {
    pub respondents: usize,
    pub tasks_per_scenario: usize,
    pub sbdc_draws: usize,
    pub compensation_levels: Vec<f64>,
    pub scenarios: Vec<Scenario>,
    pub sce_truth: BTreeMap<Scenario, ModelTruth>,
    pub sbdc_truth: SbdcTruth,
}

impl Default for SimulateStage {
    fn default() -> Self {
        let mut sce_truth = BTreeMap::new();
        sce_truth.insert(
            Scenario::Work,
            ModelTruth::Clogit { beta: Coefficients::from_attributes(-0.034, -0.021, -0.102) },
        );
        sce_truth.insert(
            Scenario::Home,
            ModelTruth::Clogit { beta: Coefficients::from_attributes(-0.032, -0.061, -0.217) },
        );
        Self {
            respondents: 525,
            tasks_per_scenario: 4,
            sbdc_draws: 4,
            compensation_levels: COMPENSATION_LEVELS.to_vec(),
            scenarios: Scenario::ALL.to_vec(),
            sce_truth,
            sbdc_truth: SbdcTruth::base(-6.132, 0.961, 0.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SbdcStage {
    /// Non-empty adds an extended fit on these covariates.
    pub covariates: Vec<String>,
    pub quadrature_nodes: usize,
}

impl Default for SbdcStage {
    fn default() -> Self {
        Self { covariates: Vec::new(), quadrature_nodes: 32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmnlStage {
    pub draws: DrawConfig,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for GmnlStage {
    fn default() -> Self {
        Self { draws: DrawConfig::default(), tol: 1e-6, max_iter: 500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatentStage {
    pub classes: Vec<usize>,
    pub membership: Vec<String>,
    pub starts: usize,
    /// Fit one scenario only; absent pools both.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Scenario>,
}

impl Default for LatentStage {
    fn default() -> Self {
        Self { classes: vec![2], membership: Vec::new(), starts: 20, scenario: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitStage {
    pub models: Vec<ModelKind>,
    pub scenarios: Vec<Scenario>,
    pub sbdc: SbdcStage,
    pub gmnl: GmnlStage,
    pub lclogit: LatentStage,
}

impl Default for FitStage {
    fn default() -> Self {
        Self {
            models: vec![ModelKind::Sbdc, ModelKind::Clogit, ModelKind::Gmnl, ModelKind::Lclogit],
            scenarios: Scenario::ALL.to_vec(),
            sbdc: SbdcStage::default(),
            gmnl: GmnlStage::default(),
            lclogit: LatentStage::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WelfareStage {
    /// Fixed SVTT in yuan/hour; absent takes the conditional-logit waiting WTP.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub svtt: Option<f64>,
    pub svtt_scenario: Scenario,
    pub delta_t: f64,
    pub weight_mode: WeightMode,
    pub reference_income: f64,
}

impl Default for WelfareStage {
    fn default() -> Self {
        Self {
            svtt: None,
            svtt_scenario: Scenario::Work,
            delta_t: 1.0,
            weight_mode: WeightMode::Given,
            reference_income: DEFAULT_REFERENCE_INCOME,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub stages: Vec<Stage>,
    pub inputs: Inputs,
    pub design: DesignStage,
    pub simulate: SimulateStage,
    pub fit: FitStage,
    pub welfare: WelfareStage,
    pub ingest: IngestOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            output_dir: PathBuf::from("out"),
            stages: Vec::new(),
            inputs: Inputs::default(),
            design: DesignStage::default(),
            simulate: SimulateStage::default(),
            fit: FitStage::default(),
            welfare: WelfareStage::default(),
            ingest: IngestOptions::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(s: &str) -> anyhow::Result<Self> {
        toml::from_str(s).context("invalid pipeline config")
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Every setting after defaults are filled in.
    pub fn effective(&self) -> anyhow::Result<String> {
        toml::to_string(self).context("serializing effective config")
    }

    /// SHA-256 of the effective config, hex encoded.
    pub fn hash(&self) -> anyhow::Result<String> {
        Ok(hex::encode(Sha256::digest(self.effective()?.as_bytes())))
    }

    /// Relative paths are taken against `base`.
    pub fn resolve(&self, base: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_all_defaults() {
        let c = PipelineConfig::from_toml("").unwrap();
        assert_eq!(c, PipelineConfig::default());
        assert!(c.stages.is_empty());
    }

    #[test]
    fn effective_dump_round_trips() {
        let c = PipelineConfig::from_toml("stages = [\"fit\", \"design\"]\nseed = 3\n[welfare]\nsvtt = 96.6\n").unwrap();
        let dump = c.effective().unwrap();
        assert_eq!(PipelineConfig::from_toml(&dump).unwrap(), c);
        assert_eq!(c.hash().unwrap().len(), 64);
    }

    #[test]
    fn hash_tracks_content() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.seed += 1;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        assert_eq!(a.hash().unwrap(), a.clone().hash().unwrap());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::from_toml("sed = 1").is_err());
    }
}
