//! Report bundle: JSON, one CSV per table and a markdown rendering.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use choicelab_core::covariates::CovariateEncoding;
use choicelab_core::design::DesignAudit;
use choicelab_core::latent::LatentClassFit;
use choicelab_core::sbdc::{SbdcFit, WtacDistribution};
use choicelab_core::welfare::{SptTable, WelfareReport};
use choicelab_core::wtp::WtpReport;
use choicelab_core::FitResult;
use serde::{Deserialize, Serialize};

use crate::config::Stage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSummary {
    pub source: String,
    pub audit: DesignAudit,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub source: String,
    pub sbdc_rows: usize,
    pub sbdc_respondents: usize,
    pub sce_rows: usize,
    pub sce_respondents: usize,
    pub straight_liners: Vec<String>,
    pub excluded: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WtacSummary {
    /// Closed-form median per SBDC fit, in fit order.
    pub medians: Vec<(String, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub individual: Option<WtacDistribution>,
}

/// One row of the per-K comparison, from the constant-only membership fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitStatistic {
    pub k: usize,
    pub llf: f64,
    pub n_params: usize,
    pub aic: f64,
    pub bic: f64,
}

impl FitStatistic {
    pub fn of(f: &LatentClassFit) -> Self {
        Self { k: f.k, llf: f.llf, n_params: f.n_params, aic: f.aic, bic: f.bic }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentClassReport {
    pub fit_statistics: Vec<FitStatistic>,
    /// Lowest BIC among the compared class counts.
    pub selected_k: usize,
    /// The selected class count refitted with the membership covariates.
    pub selected: LatentClassFit,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config_hash: String,
    pub stages_run: Vec<Stage>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<Stage>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSummary>,
    pub sbdc: Vec<SbdcFit>,
    pub choice_fits: Vec<FitResult>,
    /// Constant-only membership fits, one per class count.
    pub latent: Vec<LatentClassFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latent_selected: Option<LatentClassReport>,
    pub wtp: Vec<WtpReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wtac: Option<WtacSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spt: Option<SptTable>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub welfare: Option<WelfareReport>,
    pub encoding: CovariateEncoding,
    pub warnings: Vec<String>,
}

/// A rendered table, shared by the CSV and markdown outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: &'static str,
    pub title: &'static str,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

fn num(x: f64, digits: usize) -> String {
    if x.is_finite() {
        format!("{x:.digits$}")
    } else {
        "NA".to_owned()
    }
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

fn scenario_label(s: Option<choicelab_core::Scenario>) -> String {
    s.map_or_else(|| "pooled".to_owned(), |s| s.as_str().to_owned())
}

impl Report {
    /// Every converged flag in the bundle.
    pub fn all_converged(&self) -> bool {
        self.sbdc.iter().all(|f| f.converged)
            && self.choice_fits.iter().all(|f| f.converged)
            && self.latent.iter().all(|f| f.converged)
            && self.latent_selected.as_ref().is_none_or(|r| r.selected.converged)
    }

    pub fn tables(&self) -> Vec<Table> {
        let mut out = Vec::new();
        if !self.sbdc.is_empty() {
            let mut rows = Vec::new();
            for f in &self.sbdc {
                let model = match &f.spec {
                    choicelab_core::sbdc::SbdcSpec::Base => "base",
                    choicelab_core::sbdc::SbdcSpec::Extended(_) => "extended",
                };
                for p in &f.params {
                    rows.push(vec![model.into(), p.name.clone(), num(p.estimate, 3), num(p.se, 3)]);
                }
                rows.push(vec![model.into(), "log_likelihood".into(), num(f.log_likelihood, 4), String::new()]);
                rows.push(vec![model.into(), "n_obs".into(), f.n_obs.to_string(), String::new()]);
            }
            out.push(Table {
                name: "access_valuation",
                title: "Valuation of access",
                headers: strings(&["model", "variable", "coefficient", "std_error"]),
                rows,
            });
        }
        if !self.choice_fits.is_empty() {
            let mut rows = Vec::new();
            for f in &self.choice_fits {
                for p in &f.params {
                    rows.push(vec![
                        scenario_label(f.scenario),
                        f.model.clone(),
                        p.name.clone(),
                        num(p.estimate, 3),
                        num(p.se, 3),
                    ]);
                }
                rows.push(vec![
                    scenario_label(f.scenario),
                    f.model.clone(),
                    "log_likelihood".into(),
                    num(f.log_likelihood, 4),
                    String::new(),
                ]);
            }
            out.push(Table {
                name: "attribute_coefficients",
                title: "Attribute coefficients",
                headers: strings(&["scenario", "model", "variable", "coefficient", "std_error"]),
                rows,
            });
        }
        if !self.wtp.is_empty() {
            let mut rows = Vec::new();
            for r in &self.wtp {
                for (attr, unit) in [("wait", "yuan_per_hour"), ("unrel", "yuan_per_min")] {
                    if let Some(e) = r.entry(attr, unit) {
                        rows.push(vec![
                            scenario_label(r.scenario),
                            r.model.clone(),
                            attr.into(),
                            unit.into(),
                            num(e.value, 2),
                            e.se.map_or_else(String::new, |s| num(s, 2)),
                        ]);
                    }
                }
            }
            out.push(Table {
                name: "wtp",
                title: "Willingness to pay",
                headers: strings(&["scenario", "model", "attribute", "unit", "value", "std_error"]),
                rows,
            });
        }
        if let Some(sel) = &self.latent_selected {
            let f = &sel.selected;
            let mut rows = Vec::new();
            let k = f.k.to_string();
            for (c, (b, se)) in f.class_betas.iter().zip(&f.class_se).enumerate() {
                let arr = b.attribute_array().unwrap_or([f64::NAN; 3]);
                for (i, name) in choicelab_core::model::ATTRIBUTES.iter().enumerate() {
                    rows.push(vec![k.clone(), format!("class{}", c + 1), name.to_string(), num(arr[i], 3), num(se[i], 3)]);
                }
            }
            for (c, block) in f.gamma.iter().enumerate() {
                for e in block {
                    let mut label = e.column.clone();
                    if e.unidentified {
                        label.push_str(" (unidentified)");
                    }
                    rows.push(vec![k.clone(), format!("membership{}", c + 1), label, num(e.estimate, 3), num(e.se, 3)]);
                }
            }
            for (c, s) in f.shares.iter().enumerate() {
                rows.push(vec![k.clone(), format!("class{}", c + 1), "share".into(), num(*s, 3), String::new()]);
            }
            out.push(Table {
                name: "latent_classes",
                title: "Latent classes",
                headers: strings(&["classes", "block", "variable", "coefficient", "std_error"]),
                rows,
            });
        }
        if !self.latent.is_empty() {
            out.push(Table {
                name: "latent_fit",
                title: "Latent class fit statistics",
                headers: strings(&["classes", "llf", "nparam", "bic", "aic"]),
                rows: self
                    .latent
                    .iter()
                    .map(|f| vec![f.k.to_string(), num(f.llf, 4), f.n_params.to_string(), num(f.bic, 3), num(f.aic, 3)])
                    .collect(),
            });
        }
        if let Some(t) = &self.spt {
            out.push(Table {
                name: "spt",
                title: "Social price of time",
                headers: strings(&["bracket", "income_yuan", "lambda_ratio", "spt_yuan_per_hour"]),
                rows: t
                    .rows
                    .iter()
                    .map(|r| vec![r.group.bracket.clone(), num(r.group.income, 0), num(r.lambda_ratio, 4), num(r.spt, 2)])
                    .collect(),
            });
        }
        if let Some(w) = &self.welfare {
            let mut rows: Vec<Vec<String>> = w
                .rows
                .iter()
                .map(|r| vec![r.bracket.clone(), r.size.to_string(), num(r.omega, 4), num(r.spt, 2), num(r.delta_w, 2)])
                .collect();
            rows.push(vec!["total".into(), String::new(), String::new(), String::new(), num(w.total_per_hour, 2)]);
            out.push(Table {
                name: "welfare",
                title: "Welfare change",
                headers: strings(&["bracket", "size", "omega", "spt_yuan_per_hour", "delta_w_yuan"]),
                rows,
            });
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("# choicelab report\n\n");
        let _ = writeln!(s, "config sha256: `{}`\n", self.config_hash);
        let stages: Vec<&str> = self.stages_run.iter().map(|s| s.as_str()).collect();
        let _ = writeln!(s, "stages: {}\n", stages.join(", "));
        if let Some(st) = self.failed_stage {
            let _ = writeln!(s, "**stage `{st}` failed; tables below are partial**\n");
        }
        if let Some(d) = &self.design {
            let _ = writeln!(
                s,
                "design: {} tasks from {}, d-error {:.6}, {} dominated\n",
                d.audit.n_tasks, d.source, d.audit.d_error, d.audit.dominance_violations
            );
        }
        if let Some(w) = &self.wtac {
            for (model, m) in &w.medians {
                let _ = writeln!(s, "median WTAC ({model}): {m:.2} yuan");
            }
            if let Some(d) = &w.individual {
                let _ = writeln!(s, "individual WTAC: median {:.2}, mean {:.2}", d.median, d.mean);
            }
            s.push('\n');
        }
        for t in self.tables() {
            let _ = writeln!(s, "## {}\n", t.title);
            let _ = writeln!(s, "| {} |", t.headers.join(" | "));
            let _ = writeln!(s, "|{}", "---|".repeat(t.headers.len()));
            for r in &t.rows {
                let _ = writeln!(s, "| {} |", r.join(" | "));
            }
            let _ = writeln!(s, "\nconfig: `{}`\n", self.config_hash);
        }
        if !self.warnings.is_empty() {
            s.push_str("## Warnings\n\n");
            for w in &self.warnings {
                let _ = writeln!(s, "- {w}");
            }
        }
        s
    }

    /// Writes `report{suffix}.json`, `report{suffix}.md` and one CSV per table.
    pub fn write(&self, dir: &Path, suffix: &str) -> anyhow::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut written = Vec::new();
        let json = dir.join(format!("report{suffix}.json"));
        std::fs::write(&json, serde_json::to_string_pretty(self)?)?;
        written.push(json);
        let md = dir.join(format!("report{suffix}.md"));
        std::fs::write(&md, self.to_markdown())?;
        written.push(md);
        for t in self.tables() {
            let path = dir.join(format!("{}{suffix}.csv", t.name));
            let mut w = csv::Writer::from_path(&path)?;
            let mut header = t.headers.clone();
            header.push("config_hash".into());
            w.write_record(&header)?;
            for r in &t.rows {
                let mut rec = r.clone();
                rec.push(self.config_hash.clone());
                w.write_record(&rec)?;
            }
            w.flush()?;
            written.push(path);
        }
        Ok(written)
    }
}
