//! Stage orchestration for `choicelab report`.

use std::collections::BTreeSet;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use choicelab_core::clogit::{fit_clogit, ClogitConfig};
use choicelab_core::design::{
    audit_design, enumerate_pairs, filter_dominated, select_design, AttributeSpec, Design, SelectConfig,
};
use choicelab_core::gmnl::{fit_gmnl, GmnlConfig, GmnlParameters};
use choicelab_core::io::{self, ingest_groups, ingest_sbdc, ingest_sce};
use choicelab_core::latent::{fit_latent_class, posterior_table, LatentClassConfig};
use choicelab_core::sbdc::{fit_sbdc, wtac_individual, wtac_median, SbdcConfig, SbdcDataset, SbdcSpec};
use choicelab_core::synth::{simulate_sbdc, simulate_sce, ModelTruth, TruthSpec};
use choicelab_core::welfare::{replication_groups, spt_table, welfare_change};
use choicelab_core::wtp::compute_wtp;
use choicelab_core::{Dataset, FitResult, Scenario};

use crate::config::{ModelKind, PipelineConfig, Stage};
use serde::Serialize;

use crate::report::{DataSummary, DesignSummary, FitStatistic, LatentClassReport, Report, WtacSummary};

/// A stage failure; completed work is kept in `partial`.
#[derive(Debug)]
pub struct StageFailure {
    pub stage: Stage,
    pub error: anyhow::Error,
    pub partial: Report,
    pub written: Vec<PathBuf>,
}

impl std::fmt::Display for StageFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "stage `{}` failed: {:#}", self.stage, self.error)
    }
}

impl std::error::Error for StageFailure {}

#[derive(Debug)]
pub struct PipelineOutcome {
    pub report: Report,
    pub converged: bool,
    pub written: Vec<PathBuf>,
}

/// Requested stages plus everything they depend on, in run order.
pub fn plan(cfg: &PipelineConfig) -> Vec<Stage> {
    let mut s: BTreeSet<Stage> = cfg.stages.iter().copied().collect();
    if s.contains(&Stage::Welfare) && cfg.welfare.svtt.is_none() {
        s.insert(Stage::Wtp);
    }
    if s.contains(&Stage::Wtp) || s.contains(&Stage::Wtac) {
        s.insert(Stage::Fit);
    }
    if s.contains(&Stage::Fit) && !s.contains(&Stage::Simulate) {
        s.insert(Stage::Ingest);
    }
    if s.contains(&Stage::Simulate) {
        s.insert(Stage::Design);
    }
    s.into_iter().collect()
}

/// Files written by the stages so far.
struct Artifacts {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Artifacts {
    fn create(&mut self, name: &str) -> anyhow::Result<std::fs::File> {
        std::fs::create_dir_all(&self.dir).with_context(|| format!("creating {}", self.dir.display()))?;
        let path = self.dir.join(name);
        let f = std::fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(path);
        Ok(f)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        let mut f = self.create(name)?;
        serde_json::to_writer_pretty(&mut f, value)?;
        writeln!(f)?;
        Ok(())
    }

    fn text(&mut self, name: &str, text: &str) -> anyhow::Result<()> {
        self.create(name)?.write_all(text.as_bytes())?;
        Ok(())
    }

    /// Renames everything written to `<stem>_partial.<ext>`.
    fn into_partial(self) -> Vec<PathBuf> {
        let mut out = Vec::new();
        for p in self.written {
            let stem = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let name = match p.extension() {
                Some(e) => format!("{stem}_partial.{}", e.to_string_lossy()),
                None => format!("{stem}_partial"),
            };
            let to = p.with_file_name(name);
            if std::fs::rename(&p, &to).is_ok() {
                out.push(to);
            }
        }
        out
    }
}

#[derive(Default)]
struct State {
    design: Option<Design>,
    sce: Option<Dataset>,
    sbdc: Option<SbdcDataset>,
}

/// Runs the configured stages with relative paths taken against `base`.
pub fn run_pipeline(cfg: &PipelineConfig, base: &Path) -> Result<PipelineOutcome, Box<StageFailure>> {
    let stages = plan(cfg);
    let out_dir = cfg.resolve(base, &cfg.output_dir);
    let mut report = Report {
        encoding: cfg.ingest.encoding.clone(),
        ..Report::default()
    };
    let mut art = Artifacts { dir: out_dir.clone(), written: Vec::new() };
    let fail = |stage: Stage, error: anyhow::Error, mut partial: Report, art: Artifacts| {
        partial.failed_stage = Some(stage);
        let mut written = art.into_partial();
        written.extend(partial.write(&out_dir, "_partial").unwrap_or_default());
        Box::new(StageFailure { stage, error, partial, written })
    };
    report.config_hash = match cfg.hash() {
        Ok(h) => h,
        Err(e) => return Err(fail(Stage::Design, e, report, art)),
    };
    if stages.is_empty() {
        return Ok(PipelineOutcome { report, converged: true, written: Vec::new() });
    }
    let mut state = State::default();
    for stage in stages {
        let res = match stage {
            Stage::Design => run_design(cfg, base, &mut state, &mut report, &mut art),
            Stage::Simulate => run_simulate(cfg, &mut state, &mut report, &mut art),
            Stage::Ingest => run_ingest(cfg, base, &mut state, &mut report),
            Stage::Fit => run_fit(cfg, &state, &mut report, &mut art),
            Stage::Wtp => run_wtp(&mut report, &mut art),
            Stage::Wtac => run_wtac(&state, &mut report, &mut art),
            Stage::Welfare => run_welfare(cfg, base, &mut report, &mut art),
        };
        if let Err(e) = res {
            return Err(fail(stage, e, report, art));
        }
        report.stages_run.push(stage);
    }
    match report.write(&out_dir, "") {
        Ok(w) => art.written.extend(w),
        Err(e) => return Err(fail(Stage::Welfare, e.context("writing report"), report, art)),
    }
    Ok(PipelineOutcome { converged: report.all_converged(), report, written: art.written })
}

fn run_design(cfg: &PipelineConfig, base: &Path, st: &mut State, report: &mut Report, art: &mut Artifacts) -> anyhow::Result<()> {
    let (design, source) = match &cfg.inputs.design {
        Some(p) => {
            let path = cfg.resolve(base, p);
            (Design::load(&path).with_context(|| format!("loading {}", path.display()))?, path.display().to_string())
        }
        None => {
            let spec = AttributeSpec::replication();
            let cands = filter_dominated(&spec, &enumerate_pairs(&spec)?);
            let sel = SelectConfig {
                spec,
                restarts: cfg.design.restarts,
                max_sweeps: cfg.design.max_sweeps,
                balance_weight: cfg.design.balance_weight,
            };
            (select_design(&cands, cfg.design.n_tasks, &cfg.design.prior, cfg.seed, &sel)?, "generated".to_owned())
        }
    };
    report.design = Some(DesignSummary { source, audit: audit_design(&design)? });
    art.text("design.json", &(design.to_json()? + "\n"))?;
    st.design = Some(design);
    Ok(())
}

fn run_simulate(cfg: &PipelineConfig, st: &mut State, report: &mut Report, art: &mut Artifacts) -> anyhow::Result<()> {
    let sim = &cfg.simulate;
    let design = st.design.as_ref().ok_or_else(|| anyhow!("no design available"))?;
    let first = sim.scenarios.first().copied().unwrap_or(Scenario::Work);
    let base_model = sim
        .sce_truth
        .get(&first)
        .cloned()
        .ok_or_else(|| anyhow!("no truth configured for scenario {}", first.as_str()))?;
    let mut truth = TruthSpec::new(base_model, cfg.seed).with_scenarios(&sim.scenarios);
    truth.encoding = cfg.ingest.encoding.clone();
    for (s, m) in &sim.sce_truth {
        truth = truth.with_scenario_model(*s, m.clone());
    }
    let sce = simulate_sce(design, &truth, sim.respondents, sim.tasks_per_scenario, cfg.seed)?;
    let mut sbdc_truth = truth.clone();
    sbdc_truth.model = ModelTruth::Sbdc(sim.sbdc_truth.clone());
    sbdc_truth.scenario_models.clear();
    let sbdc = simulate_sbdc(&sbdc_truth, &sim.compensation_levels, sim.sbdc_draws, sim.respondents, cfg.seed)?;

    let names: Vec<String> = truth.covariates.marginals.iter().map(|m| m.name.clone()).collect();
    io::write_sbdc(&sbdc, &names, None, art.create("responses_sbdc.csv")?)?;
    io::write_sce(&sce, art.create("responses_sce.csv")?)?;
    #[derive(Serialize)]
    struct Truths<'a> {
        sce: &'a TruthSpec,
        sbdc: &'a TruthSpec,
    }
    art.json("truth.json", &Truths { sce: &truth, sbdc: &sbdc_truth })?;

    report.data = Some(DataSummary {
        source: "simulated".into(),
        sbdc_rows: sbdc.observations.len(),
        sbdc_respondents: sbdc.respondents().len(),
        sce_rows: sce.len(),
        sce_respondents: sce.n_respondents(),
        ..DataSummary::default()
    });
    st.sce = Some(sce);
    st.sbdc = Some(sbdc);
    Ok(())
}

fn run_ingest(cfg: &PipelineConfig, base: &Path, st: &mut State, report: &mut Report) -> anyhow::Result<()> {
    if cfg.inputs.sbdc.is_none() && cfg.inputs.sce.is_none() {
        bail!("no input files configured (inputs.sbdc / inputs.sce)");
    }
    let mut summary = DataSummary { source: "files".into(), ..DataSummary::default() };
    if let Some(p) = &cfg.inputs.sbdc {
        let path = cfg.resolve(base, p);
        let ing = ingest_sbdc(&path, &cfg.ingest).with_context(|| format!("ingesting {}", path.display()))?;
        summary.sbdc_rows = ing.data.observations.len();
        summary.sbdc_respondents = ing.data.respondents().len();
        summary.excluded.extend(ing.excluded_fast.iter().map(|r| r.to_string()));
        st.sbdc = Some(ing.data);
    }
    if let Some(p) = &cfg.inputs.sce {
        let path = cfg.resolve(base, p);
        let covs = st.sbdc.as_ref().map(|d| &d.covariates);
        let ing = ingest_sce(&path, &cfg.ingest, covs).with_context(|| format!("ingesting {}", path.display()))?;
        summary.sce_rows = ing.data.len();
        summary.sce_respondents = ing.data.n_respondents();
        summary.straight_liners = ing.straight_liners.iter().map(|r| r.to_string()).collect();
        summary.excluded.extend(ing.excluded.iter().map(|r| r.to_string()));
        st.sce = Some(ing.data);
    }
    report.data = Some(summary);
    Ok(())
}

fn sce_data(st: &State) -> anyhow::Result<&Dataset> {
    st.sce.as_ref().ok_or_else(|| anyhow!("paired-choice data required but none loaded"))
}

fn run_fit(cfg: &PipelineConfig, st: &State, report: &mut Report, art: &mut Artifacts) -> anyhow::Result<()> {
    let f = &cfg.fit;
    let models: BTreeSet<ModelKind> = f.models.iter().copied().collect();
    if models.contains(&ModelKind::Sbdc) {
        let data = st.sbdc.as_ref().ok_or_else(|| anyhow!("SBDC data required but none loaded"))?;
        let sc = SbdcConfig {
            quadrature_nodes: f.sbdc.quadrature_nodes,
            encoding: cfg.ingest.encoding.clone(),
            ..SbdcConfig::default()
        };
        let base_fit = fit_sbdc(data, &SbdcSpec::Base, &sc).context("SBDC base")?;
        art.json("fit_sbdc_base.json", &base_fit)?;
        report.sbdc.push(base_fit);
        if !f.sbdc.covariates.is_empty() {
            let spec = SbdcSpec::Extended(f.sbdc.covariates.clone());
            let ext = fit_sbdc(data, &spec, &sc).context("SBDC extended")?;
            art.json("fit_sbdc_extended.json", &ext)?;
            report.sbdc.push(ext);
        }
    }
    if models.contains(&ModelKind::Clogit) || models.contains(&ModelKind::Gmnl) {
        let data = sce_data(st)?;
        for &s in &f.scenarios {
            let sub = data.filter_scenario(s);
            if sub.is_empty() {
                report.warnings.push(format!("no {} observations; scenario skipped", s.as_str()));
                continue;
            }
            let mut cl = fit_clogit(&sub, &ClogitConfig::default()).with_context(|| format!("clogit {}", s.as_str()))?;
            cl.scenario = Some(s);
            if models.contains(&ModelKind::Gmnl) {
                let start = GmnlParameters::new(cl.attribute_coefficients()?, 0.01, 0.1, 0.5).with_draws(f.gmnl.draws);
                let gc = GmnlConfig { tol: f.gmnl.tol, max_iter: f.gmnl.max_iter, ..GmnlConfig::default() };
                let mut g = fit_gmnl(&sub, &start, &gc).with_context(|| format!("gmnl {}", s.as_str()))?;
                g.scenario = Some(s);
                if models.contains(&ModelKind::Clogit) {
                    art.json(&format!("fit_clogit_{}.json", s.as_str()), &cl)?;
                    report.choice_fits.push(cl);
                }
                art.json(&format!("fit_gmnl_{}.json", s.as_str()), &g)?;
                report.choice_fits.push(g);
            } else {
                art.json(&format!("fit_clogit_{}.json", s.as_str()), &cl)?;
                report.choice_fits.push(cl);
            }
        }
    }
    if models.contains(&ModelKind::Lclogit) {
        let data = sce_data(st)?;
        let sub = match f.lclogit.scenario {
            Some(s) => data.filter_scenario(s),
            None => data.clone(),
        };
        let lc = LatentClassConfig {
            n_starts: f.lclogit.starts,
            seed: cfg.seed,
            encoding: cfg.ingest.encoding.clone(),
            ..LatentClassConfig::default()
        };
        if f.lclogit.classes.is_empty() {
            bail!("no latent class counts configured");
        }
        // compare class counts on constant-only membership, then refit the winner with covariates
        for &k in &f.lclogit.classes {
            let fit = fit_latent_class(&sub, k, &[], &lc).with_context(|| format!("lclogit K={k}"))?;
            report.warnings.extend(fit.warnings.iter().map(|w| format!("lclogit K={k}: {w}")));
            art.json(&format!("fit_lclogit_k{k}.json"), &fit)?;
            report.latent.push(fit);
        }
        let best = report
            .latent
            .iter()
            .min_by(|a, b| a.bic.total_cmp(&b.bic))
            .expect("at least one class count");
        let selected_k = best.k;
        let selected = if f.lclogit.membership.is_empty() {
            best.clone()
        } else {
            let fit = fit_latent_class(&sub, selected_k, &f.lclogit.membership, &lc)
                .with_context(|| format!("lclogit K={selected_k} with membership covariates"))?;
            report.warnings.extend(fit.warnings.iter().map(|w| format!("lclogit K={selected_k} membership: {w}")));
            fit
        };
        let mut w = csv::Writer::from_writer(art.create("latent_class_posteriors.csv")?);
        let mut header = vec!["respondent_id".to_owned()];
        header.extend((1..=selected_k).map(|c| format!("class{c}")));
        header.push("assigned".into());
        w.write_record(&header)?;
        for (id, p) in posterior_table(&selected, &sub)? {
            let assigned = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap_or(0) + 1;
            let mut rec = vec![id.to_string()];
            rec.extend(p.iter().map(|x| x.to_string()));
            rec.push(assigned.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        let lr = LatentClassReport {
            fit_statistics: report.latent.iter().map(FitStatistic::of).collect(),
            selected_k,
            selected,
        };
        art.json("latent_class_report.json", &lr)?;
        report.latent_selected = Some(lr);
    }
    for fit in &report.choice_fits {
        report.warnings.extend(fit.warnings.iter().map(|w| format!("{}: {w}", fit.model)));
    }
    Ok(())
}

fn run_wtp(report: &mut Report, art: &mut Artifacts) -> anyhow::Result<()> {
    if report.choice_fits.is_empty() {
        bail!("no clogit or gmnl fit to derive WTP from");
    }
    report.wtp = report.choice_fits.iter().map(compute_wtp).collect::<Result<_, _>>()?;
    art.json("wtp_report.json", &report.wtp)?;
    Ok(())
}

fn run_wtac(st: &State, report: &mut Report, art: &mut Artifacts) -> anyhow::Result<()> {
    if report.sbdc.is_empty() {
        bail!("no SBDC fit to derive WTAC from");
    }
    let mut medians = Vec::new();
    let mut individual = None;
    for f in &report.sbdc {
        match &f.spec {
            SbdcSpec::Base => medians.push(("base".to_owned(), wtac_median(f)?)),
            SbdcSpec::Extended(_) => {
                let data = st.sbdc.as_ref().ok_or_else(|| anyhow!("SBDC data required"))?;
                individual = Some(wtac_individual(f, data)?);
            }
        }
    }
    let summary = WtacSummary { medians, individual };
    #[derive(Serialize)]
    struct WtacReport<'a> {
        fits: &'a [choicelab_core::sbdc::SbdcFit],
        #[serde(flatten)]
        wtac: &'a WtacSummary,
    }
    art.json("wtac_report.json", &WtacReport { fits: &report.sbdc, wtac: &summary })?;
    report.wtac = Some(summary);
    Ok(())
}

fn svtt_from(report: &Report, scenario: Scenario) -> anyhow::Result<f64> {
    report
        .wtp
        .iter()
        .find(|w| w.model == "clogit" && w.scenario == Some(scenario))
        .map(|w| w.wait_per_hour())
        .ok_or_else(|| anyhow!("no clogit WTP for scenario {} to use as SVTT", scenario.as_str()))
}

fn run_welfare(cfg: &PipelineConfig, base: &Path, report: &mut Report, art: &mut Artifacts) -> anyhow::Result<()> {
    let w = &cfg.welfare;
    let svtt = match w.svtt {
        Some(v) => v,
        None => svtt_from(report, w.svtt_scenario)?,
    };
    let groups = match &cfg.inputs.groups {
        Some(p) => ingest_groups(&cfg.resolve(base, p))?,
        None => replication_groups(),
    };
    let table = spt_table(svtt, &groups, w.reference_income)?;
    let change = welfare_change(&table, w.delta_t, w.weight_mode)?;
    #[derive(Serialize)]
    struct WelfareOut<'a> {
        spt: &'a choicelab_core::welfare::SptTable,
        welfare: &'a choicelab_core::welfare::WelfareReport,
    }
    art.json("welfare_report.json", &WelfareOut { spt: &table, welfare: &change })?;
    art.text("welfare_report.md", &change.to_markdown())?;
    report.welfare = Some(change);
    report.spt = Some(table);
    Ok(())
}

/// Fits saved by the `fit` verbs, for `wtp`.
pub fn load_fit(path: &Path) -> anyhow::Result<FitResult> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing fit {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_adds_dependencies_in_order() {
        let cfg = PipelineConfig { stages: vec![Stage::Welfare, Stage::Simulate], ..PipelineConfig::default() };
        assert_eq!(
            plan(&cfg),
            vec![Stage::Design, Stage::Simulate, Stage::Fit, Stage::Wtp, Stage::Welfare]
        );
        let cfg = PipelineConfig { stages: vec![Stage::Wtp], ..PipelineConfig::default() };
        assert_eq!(plan(&cfg), vec![Stage::Ingest, Stage::Fit, Stage::Wtp]);
    }

    #[test]
    fn fixed_svtt_welfare_needs_nothing_else() {
        let mut cfg = PipelineConfig { stages: vec![Stage::Welfare], ..PipelineConfig::default() };
        cfg.welfare.svtt = Some(96.6);
        assert_eq!(plan(&cfg), vec![Stage::Welfare]);
    }
}
