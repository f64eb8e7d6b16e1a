use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use choicelab_cli::config::{PipelineConfig, DEFAULT_SEED};
use choicelab_cli::pipeline::{load_fit, run_pipeline};
use choicelab_cli::server::{serve, AppState};
use choicelab_core::clogit::{fit_clogit, ClogitConfig};
use choicelab_core::design::{audit_design, enumerate_pairs, filter_dominated, select_design, AttributeSpec, Design, SelectConfig};
use choicelab_core::gmnl::{fit_gmnl, DrawConfig, GmnlConfig, GmnlParameters};
use choicelab_core::io::{ingest_groups, ingest_sbdc, ingest_sce, write_sbdc, write_sce, IngestOptions};
use choicelab_core::latent::{fit_latent_class, LatentClassConfig};
use choicelab_core::sbdc::{fit_sbdc, wtac_individual, wtac_median, SbdcConfig, SbdcFit, SbdcSpec, COMPENSATION_LEVELS};
use choicelab_core::synth::{simulate_sbdc, simulate_sce, ModelTruth, SbdcTruth, TruthSpec};
use choicelab_core::welfare::{replication_groups, spt_table, welfare_change, WeightMode, DEFAULT_REFERENCE_INCOME};
use choicelab_core::wtp::compute_wtp;
use choicelab_core::{Coefficients, Scenario};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "choicelab", version, about = "Choice experiment design, estimation and welfare pipeline")]
struct Cli {
    /// Base directory for relative paths and the service store.
    #[arg(long, global = true, env = "CHOICELAB_DATA_DIR")]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or audit a paired-choice design.
    #[command(subcommand)]
    Design(DesignCmd),
    /// Write synthetic responses in the ingest schemas.
    #[command(subcommand)]
    Simulate(SimulateCmd),
    /// Estimate a model; the fit is written as JSON.
    #[command(subcommand)]
    Fit(FitCmd),
    /// Willingness to pay from a saved clogit or gmnl fit.
    Wtp {
        fit: PathBuf,
        #[command(flatten)]
        out: Out,
    },
    /// Median (and optionally per-respondent) WTAC from a saved SBDC fit.
    Wtac {
        fit: PathBuf,
        /// SBDC responses, needed for the per-respondent distribution.
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        out: Out,
    },
    /// Social price of time and welfare change.
    Welfare {
        #[arg(long)]
        svtt: f64,
        #[arg(long)]
        groups: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        delta_t: f64,
        #[arg(long, value_enum, default_value_t = Weights::Given)]
        weight_mode: Weights,
        #[arg(long, default_value_t = DEFAULT_REFERENCE_INCOME)]
        reference_income: f64,
        #[arg(long)]
        markdown: bool,
        #[command(flatten)]
        out: Out,
    },
    /// Run the configured pipeline and write the report bundle.
    Report {
        #[arg(long)]
        config: PathBuf,
        /// Print the effective config and exit.
        #[arg(long)]
        dump_config: bool,
    },
    /// Serve the collection API.
    Serve {
        #[arg(long)]
        design: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
}

#[derive(Subcommand)]
enum DesignCmd {
    /// Select an efficient design from the dominance-filtered candidates.
    Generate {
        #[arg(long, default_value_t = 16)]
        n_tasks: usize,
        #[arg(long, default_value_t = 50)]
        restarts: usize,
        /// Prior coefficients `wait,cost,unrel`.
        #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.0, 0.0, 0.0])]
        prior: Vec<f64>,
        #[arg(long, default_value_t = 0.0)]
        balance_weight: f64,
        #[command(flatten)]
        out: Out,
    },
    Audit {
        design: PathBuf,
        #[command(flatten)]
        out: Out,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Clogit,
    Gmnl,
    Lclogit,
}

#[derive(Clone, Copy, ValueEnum)]
enum Weights {
    Given,
    IncomeInverse,
}

#[derive(Subcommand)]
enum SimulateCmd {
    Sce {
        #[arg(long)]
        design: PathBuf,
        /// Built-in work-scenario truth when no `--truth` file is given.
        #[arg(long, value_enum, default_value_t = Family::Clogit)]
        model: Family,
        /// JSON or TOML model truth.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, default_value_t = 525)]
        respondents: usize,
        #[arg(long, default_value_t = 4)]
        tasks: usize,
        #[arg(long, value_delimiter = ',', default_value = "work")]
        scenarios: Vec<Scenario>,
        #[arg(long)]
        out: PathBuf,
    },
    Sbdc {
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        sigma: f64,
        #[arg(long, default_value_t = 525)]
        respondents: usize,
        #[arg(long, default_value_t = 4)]
        draws: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Ingest {
    /// Exclude flagged straight-liners.
    #[arg(long)]
    strict: bool,
    #[arg(long, default_value_t = 120.0)]
    min_completion_sec: f64,
    /// Skip the survey-grid check on attribute levels and compensations.
    #[arg(long)]
    no_replication: bool,
}

impl Ingest {
    fn options(&self) -> IngestOptions {
        IngestOptions {
            replication: !self.no_replication,
            min_completion_sec: self.min_completion_sec,
            strict: self.strict,
            ..IngestOptions::default()
        }
    }
}

#[derive(Subcommand)]
enum FitCmd {
    Sbdc {
        data: PathBuf,
        #[arg(long, value_delimiter = ',')]
        covariates: Vec<String>,
        #[arg(long, default_value_t = 32)]
        nodes: usize,
        #[command(flatten)]
        ingest: Ingest,
        #[command(flatten)]
        out: Out,
    },
    Clogit {
        data: PathBuf,
        #[arg(long)]
        scenario: Option<Scenario>,
        #[command(flatten)]
        ingest: Ingest,
        #[command(flatten)]
        out: Out,
    },
    Gmnl {
        data: PathBuf,
        #[arg(long)]
        scenario: Option<Scenario>,
        #[arg(long, default_value_t = 500)]
        draws: usize,
        #[command(flatten)]
        ingest: Ingest,
        #[command(flatten)]
        out: Out,
    },
    Lclogit {
        data: PathBuf,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        /// Membership covariates, read from the `--sbdc` file.
        #[arg(long, value_delimiter = ',')]
        membership: Vec<String>,
        #[arg(long)]
        sbdc: Option<PathBuf>,
        #[arg(long)]
        scenario: Option<Scenario>,
        #[arg(long, default_value_t = 20)]
        starts: usize,
        #[command(flatten)]
        ingest: Ingest,
        #[command(flatten)]
        out: Out,
    },
}

#[derive(Args)]
struct Out {
    /// Write JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Ctx {
    base: PathBuf,
    seed: u64,
}

impl Ctx {
    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    fn emit<T: Serialize>(&self, out: &Out, value: &T) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(value)? + "\n";
        match &out.out {
            Some(p) => {
                let p = self.path(p);
                std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?;
            }
            None => std::io::stdout().write_all(text.as_bytes())?,
        }
        Ok(())
    }
}

fn load_truth(path: &Path) -> anyhow::Result<ModelTruth> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    } else {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

fn preset(family: Family) -> ModelTruth {
    let cl = Coefficients::from_attributes(-0.034, -0.021, -0.102);
    match family {
        Family::Clogit => ModelTruth::Clogit { beta: cl },
        Family::Gmnl => ModelTruth::Gmnl {
            params: GmnlParameters::new(Coefficients::from_attributes(-0.091, -0.059, -0.760), 0.043, 0.659, 1.327),
        },
        Family::Lclogit => ModelTruth::LatentClass {
            classes: vec![
                Coefficients::from_attributes(-0.025, -0.011, 0.009),
                Coefficients::from_attributes(-0.019, -0.021, -0.673),
            ],
            shares: vec![0.351, 0.649],
        },
    }
}

/// Estimation errors that count as non-convergence for the exit status.
fn did_not_converge(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        matches!(
            c.downcast_ref::<choicelab_core::Error>(),
            Some(choicelab_core::Error::NonConvergence { .. } | choicelab_core::Error::Separation { .. })
        )
    })
}

/// Exit status 2 marks a fit that ran but did not converge.
fn status(converged: bool) -> ExitCode {
    if converged {
        ExitCode::SUCCESS
    } else {
        eprintln!("warning: estimation did not converge");
        ExitCode::from(2)
    }
}

fn load_sce(ctx: &Ctx, data: &Path, ingest: &Ingest, covs: Option<&Path>) -> anyhow::Result<choicelab_core::Dataset> {
    let opts = ingest.options();
    let cov = match covs {
        Some(p) => Some(ingest_sbdc(&ctx.path(p), &opts)?.data.covariates),
        None => None,
    };
    let ing = ingest_sce(&ctx.path(data), &opts, cov.as_ref())?;
    if !ing.straight_liners.is_empty() {
        eprintln!("straight-lining respondents: {}", ing.straight_liners.len());
    }
    Ok(ing.data)
}

fn scenario_subset(data: choicelab_core::Dataset, s: Option<Scenario>) -> choicelab_core::Dataset {
    match s {
        Some(s) => data.filter_scenario(s),
        None => data,
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let ctx = Ctx { base: cli.data_dir.clone().unwrap_or_else(|| PathBuf::from(".")), seed: cli.seed };
    match cli.cmd {
        Command::Design(DesignCmd::Generate { n_tasks, restarts, prior, balance_weight, out }) => {
            let spec = AttributeSpec::replication();
            let cands = filter_dominated(&spec, &enumerate_pairs(&spec)?);
            let prior = Coefficients::from_attributes(prior[0], prior[1], prior[2]);
            let cfg = SelectConfig { restarts, balance_weight, ..SelectConfig::default() };
            let design = select_design(&cands, n_tasks, &prior, ctx.seed, &cfg)?;
            match &out.out {
                Some(p) => design.save(&ctx.path(p))?,
                None => println!("{}", design.to_json()?),
            }
        }
        Command::Design(DesignCmd::Audit { design, out }) => {
            let d = Design::load(&ctx.path(&design))?;
            ctx.emit(&out, &audit_design(&d)?)?;
        }
        Command::Simulate(SimulateCmd::Sce { design, model, truth, respondents, tasks, scenarios, out }) => {
            let d = Design::load(&ctx.path(&design))?;
            let m = match truth {
                Some(p) => load_truth(&ctx.path(&p))?,
                None => preset(model),
            };
            let spec = TruthSpec::new(m, ctx.seed).with_scenarios(&scenarios);
            let data = simulate_sce(&d, &spec, respondents, tasks, ctx.seed)?;
            write_sce(&data, std::fs::File::create(ctx.path(&out))?)?;
        }
        Command::Simulate(SimulateCmd::Sbdc { truth, sigma, respondents, draws, out }) => {
            let m = match truth {
                Some(p) => load_truth(&ctx.path(&p))?,
                None => ModelTruth::Sbdc(SbdcTruth::base(-6.132, 0.961, sigma)),
            };
            let spec = TruthSpec::new(m, ctx.seed);
            let data = simulate_sbdc(&spec, &COMPENSATION_LEVELS, draws, respondents, ctx.seed)?;
            let names: Vec<String> = spec.covariates.marginals.iter().map(|m| m.name.clone()).collect();
            write_sbdc(&data, &names, None, std::fs::File::create(ctx.path(&out))?)?;
        }
        Command::Fit(FitCmd::Sbdc { data, covariates, nodes, ingest, out }) => {
            let ing = ingest_sbdc(&ctx.path(&data), &ingest.options())?;
            let spec = if covariates.is_empty() { SbdcSpec::Base } else { SbdcSpec::Extended(covariates) };
            let fit = fit_sbdc(&ing.data, &spec, &SbdcConfig { quadrature_nodes: nodes, ..SbdcConfig::default() })?;
            ctx.emit(&out, &fit)?;
            return Ok(status(fit.converged));
        }
        Command::Fit(FitCmd::Clogit { data, scenario, ingest, out }) => {
            let d = scenario_subset(load_sce(&ctx, &data, &ingest, None)?, scenario);
            let mut fit = fit_clogit(&d, &ClogitConfig::default())?;
            fit.scenario = scenario;
            ctx.emit(&out, &fit)?;
            return Ok(status(fit.converged));
        }
        Command::Fit(FitCmd::Gmnl { data, scenario, draws, ingest, out }) => {
            let d = scenario_subset(load_sce(&ctx, &data, &ingest, None)?, scenario);
            let cl = fit_clogit(&d, &ClogitConfig::default())?;
            let draws = DrawConfig { n_draws: draws, seed: ctx.seed, ..DrawConfig::default() };
            let start = GmnlParameters::new(cl.attribute_coefficients()?, 0.01, 0.1, 0.5).with_draws(draws);
            let mut fit = fit_gmnl(&d, &start, &GmnlConfig::default())?;
            fit.scenario = scenario;
            ctx.emit(&out, &fit)?;
            return Ok(status(fit.converged));
        }
        Command::Fit(FitCmd::Lclogit { data, classes, membership, sbdc, scenario, starts, ingest, out }) => {
            if !membership.is_empty() && sbdc.is_none() {
                bail!("membership covariates need --sbdc to supply respondent covariates");
            }
            let d = scenario_subset(load_sce(&ctx, &data, &ingest, sbdc.as_deref())?, scenario);
            let cfg = LatentClassConfig { n_starts: starts, seed: ctx.seed, ..LatentClassConfig::default() };
            let fit = fit_latent_class(&d, classes, &membership, &cfg)?;
            for w in &fit.warnings {
                eprintln!("warning: {w}");
            }
            ctx.emit(&out, &fit)?;
            return Ok(status(fit.converged));
        }
        Command::Wtp { fit, out } => {
            let f = load_fit(&ctx.path(&fit))?;
            ctx.emit(&out, &compute_wtp(&f)?)?;
        }
        Command::Wtac { fit, data, out } => {
            let p = ctx.path(&fit);
            let f: SbdcFit = serde_json::from_str(&std::fs::read_to_string(&p)?).with_context(|| format!("parsing {}", p.display()))?;
            #[derive(Serialize)]
            struct Wtac {
                median: f64,
                #[serde(skip_serializing_if = "Option::is_none")]
                individual: Option<choicelab_core::sbdc::WtacDistribution>,
            }
            let individual = match data {
                Some(d) => Some(wtac_individual(&f, &ingest_sbdc(&ctx.path(&d), &IngestOptions::default())?.data)?),
                None => None,
            };
            let median = match &f.spec {
                SbdcSpec::Base => wtac_median(&f)?,
                SbdcSpec::Extended(_) => match &individual {
                    Some(d) => d.median,
                    None => bail!("an extended fit needs --data for the per-respondent WTAC"),
                },
            };
            ctx.emit(&out, &Wtac { median, individual })?;
        }
        Command::Welfare { svtt, groups, delta_t, weight_mode, reference_income, markdown, out } => {
            let g = match groups {
                Some(p) => ingest_groups(&ctx.path(&p))?,
                None => replication_groups(),
            };
            let mode = match weight_mode {
                Weights::Given => WeightMode::Given,
                Weights::IncomeInverse => WeightMode::IncomeInverse,
            };
            let report = welfare_change(&spt_table(svtt, &g, reference_income)?, delta_t, mode)?;
            if markdown {
                print!("{}", report.to_markdown());
            } else {
                ctx.emit(&out, &report)?;
            }
        }
        Command::Report { config, dump_config } => {
            let path = ctx.path(&config);
            let mut cfg = PipelineConfig::load(&path)?;
            if cli.seed != DEFAULT_SEED {
                cfg.seed = cli.seed;
            }
            if dump_config {
                print!("{}", cfg.effective()?);
                return Ok(ExitCode::SUCCESS);
            }
            eprintln!("config sha256 {}", cfg.hash()?);
            match run_pipeline(&cfg, &ctx.base) {
                Ok(outcome) => {
                    for p in &outcome.written {
                        eprintln!("wrote {}", p.display());
                    }
                    if outcome.written.is_empty() {
                        eprintln!("no stages requested");
                    }
                    return Ok(status(outcome.converged));
                }
                Err(f) => {
                    for p in &f.written {
                        eprintln!("wrote {}", p.display());
                    }
                    if did_not_converge(&f.error) {
                        eprintln!("error: {f}");
                        return Ok(ExitCode::from(2));
                    }
                    return Err(anyhow::Error::new(*f));
                }
            }
        }
        Command::Serve { design, addr } => {
            let d = Design::load(&ctx.path(&design))?;
            let state = AppState::open(d, ctx.seed, &ctx.base)?;
            tokio::runtime::Runtime::new()?.block_on(serve(state, &addr))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if did_not_converge(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
