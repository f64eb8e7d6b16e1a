//! The `choicelab` binary end to end.

use std::path::Path;
use std::process::{Command, Output};

use choicelab_cli::config::{PipelineConfig, Stage};
use choicelab_cli::pipeline::{run_pipeline, PipelineOutcome};
use choicelab_core::wtp::WtpReport;
use choicelab_core::Scenario;

fn choicelab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_choicelab"))
        .arg("--data-dir")
        .arg(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

#[test]
fn missing_input_fails_in_ingest() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "cfg.toml",
        "stages = [\"fit\"]\n[inputs]\nsce = \"nowhere.csv\"\n[fit]\nmodels = [\"clogit\"]\n",
    );
    let o = choicelab(dir.path(), &["report", "--config", "cfg.toml"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("stage `ingest` failed"), "{err}");
    assert!(err.contains("nowhere.csv"), "{err}");
    let partial: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/report_partial.json")).unwrap()).unwrap();
    assert_eq!(partial["failed_stage"], "ingest");
}

#[test]
fn empty_stage_list_is_a_no_op() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "cfg.toml", "stages = []\n");
    let o = choicelab(dir.path(), &["report", "--config", "cfg.toml"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "cfg.toml", "stages = []\nsede = 3\n");
    let o = choicelab(dir.path(), &["report", "--config", "cfg.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("sede"));
}

#[test]
fn dumped_config_reloads_to_the_same_hash() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "cfg.toml", "stages = [\"welfare\"]\n[welfare]\nsvtt = 96.6\n");
    let o = choicelab(dir.path(), &["report", "--config", "cfg.toml", "--dump-config"]);
    assert!(o.status.success());
    write(dir.path(), "dumped.toml", &String::from_utf8(o.stdout).unwrap());
    let a = PipelineConfig::load(&dir.path().join("cfg.toml")).unwrap();
    let b = PipelineConfig::load(&dir.path().join("dumped.toml")).unwrap();
    assert_eq!(a.hash().unwrap(), b.hash().unwrap());
}

fn run(dir: &Path, toml: &str) -> PipelineOutcome {
    let cfg = PipelineConfig::from_toml(toml).unwrap();
    run_pipeline(&cfg, dir).unwrap()
}

#[test]
fn simulated_pipeline_recovers_wtp() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        "stages = [\"simulate\", \"wtp\"]\n[design]\nrestarts = 5\n[fit]\nmodels = [\"clogit\"]\nscenarios = [\"work\"]\n",
    );
    assert!(out.converged);
    let wtp: Vec<WtpReport> =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/wtp_report.json")).unwrap()).unwrap();
    let work = wtp.iter().find(|w| w.scenario == Some(Scenario::Work)).unwrap();
    let e = work.entry("wait", "yuan_per_hour").unwrap();
    let truth = 0.034 / 0.021 * 60.0;
    assert!((e.value - truth).abs() <= 3.0 * e.se.unwrap(), "{} +- {:?}", e.value, e.se);
    for name in ["design.json", "truth.json", "responses_sce.csv", "fit_clogit_work.json", "report.md"] {
        assert!(dir.path().join("out").join(name).exists(), "{name}");
    }
}

#[test]
fn every_table_carries_the_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let toml = "stages = [\"welfare\"]\n[welfare]\nsvtt = 96.6\n";
    let out = run(dir.path(), toml);
    let hash = PipelineConfig::from_toml(toml).unwrap().hash().unwrap();
    assert_eq!(out.report.config_hash, hash);
    for p in out.written.iter().filter(|p| p.extension().is_some_and(|e| e == "csv")) {
        let text = std::fs::read_to_string(p).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().ends_with(",config_hash"));
        assert!(lines.all(|l| l.ends_with(&hash)), "{}", p.display());
    }
    let md = std::fs::read_to_string(dir.path().join("out/report.md")).unwrap();
    assert!(md.contains(&hash));
    let total = out.report.welfare.unwrap().total_per_hour;
    assert!((total - 60490.92).abs() < 0.01, "{total}");
}

#[test]
fn failed_stage_keeps_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig::from_toml(
        "stages = [\"simulate\", \"fit\"]\n[simulate]\nrespondents = 100\n[design]\nrestarts = 2\n\
         [fit]\nmodels = [\"clogit\", \"lclogit\"]\nscenarios = [\"work\"]\n[fit.lclogit]\nclasses = []\n",
    )
    .unwrap();
    let err = run_pipeline(&cfg, dir.path()).unwrap_err();
    assert_eq!(err.stage, Stage::Fit);
    assert_eq!(err.partial.stages_run, vec![Stage::Design, Stage::Simulate]);
    let out = dir.path().join("out");
    for name in ["responses_sce_partial.csv", "fit_clogit_work_partial.json", "report_partial.json", "report_partial.md"] {
        assert!(out.join(name).exists(), "{name}");
    }
    assert!(!out.join("responses_sce.csv").exists());
    assert!(err.written.iter().all(|p| p.exists()));
}

#[test]
fn verbs_chain_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ok = |o: Output| assert!(o.status.success(), "{}", stderr(&o));
    ok(choicelab(d, &["design", "generate", "--restarts", "3", "--out", "design.json"]));
    ok(choicelab(d, &["design", "audit", "design.json"]));
    ok(choicelab(d, &["simulate", "sce", "--design", "design.json", "--out", "sce.csv"]));
    ok(choicelab(d, &["simulate", "sbdc", "--out", "sbdc.csv"]));
    ok(choicelab(d, &["fit", "clogit", "sce.csv", "--out", "cl.json"]));
    ok(choicelab(d, &["wtp", "cl.json", "--out", "wtp.json"]));
    ok(choicelab(d, &["fit", "sbdc", "sbdc.csv", "--out", "sb.json"]));
    let o = choicelab(d, &["wtac", "sb.json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let median = v["median"].as_f64().unwrap();
    assert!(median > 300.0 && median < 1200.0, "{median}");
    let o = choicelab(d, &["welfare", "--svtt", "96.6", "--markdown"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains('|'));
}

#[test]
fn unconverged_fit_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(choicelab(d, &["design", "generate", "--restarts", "2", "--out", "design.json"]).status.success());
    assert!(choicelab(d, &["simulate", "sce", "--design", "design.json", "--respondents", "100", "--out", "sce.csv"])
        .status
        .success());
    write(
        d,
        "cfg.toml",
        "stages = [\"fit\"]\n[inputs]\nsce = \"sce.csv\"\n[fit]\nmodels = [\"gmnl\"]\nscenarios = [\"work\"]\n[fit.gmnl]\nmax_iter = 1\n",
    );
    let o = choicelab(d, &["report", "--config", "cfg.toml"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}
