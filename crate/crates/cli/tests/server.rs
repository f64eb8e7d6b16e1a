//! Collection service driven through the router, as the survey client would.

use std::collections::BTreeMap;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use choicelab_cli::server::{plan_session, router, AppState, CreateSession, SessionPlan, Store, SBDC_PER_SESSION, SCE_PER_SCENARIO};
use choicelab_core::clogit::{fit_clogit, ClogitConfig};
use choicelab_core::design::{enumerate_pairs, filter_dominated, select_design, zero_prior, AttributeSpec, Design, SelectConfig};
use choicelab_core::io::{read_sbdc, read_sce, write_sce, IngestOptions};
use choicelab_core::model::utility;
use choicelab_core::sbdc::{fit_sbdc, SbdcConfig, SbdcSpec, COMPENSATION_LEVELS};
use choicelab_core::{Coefficients, Scenario};
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

const SEED: u64 = 20240601;

fn design() -> Design {
    let spec = AttributeSpec::replication();
    let cands = filter_dominated(&spec, &enumerate_pairs(&spec).unwrap());
    let cfg = SelectConfig { restarts: 2, ..SelectConfig::default() };
    select_design(&cands, 16, &zero_prior(&spec), 3, &cfg).unwrap()
}

fn app(dir: &std::path::Path) -> Router {
    router(AppState::open(design(), SEED, dir).unwrap())
}

async fn call(app: &Router, method: &str, uri: &str, body: &str) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_owned()))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn json_call(app: &Router, method: &str, uri: &str, body: Value) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, &body.to_string()).await;
    (s, serde_json::from_slice(&b).unwrap())
}

async fn new_session(app: &Router, body: Value) -> SessionPlan {
    let (s, b) = call(app, "POST", "/api/sessions", &body.to_string()).await;
    assert_eq!(s, StatusCode::OK, "{}", String::from_utf8_lossy(&b));
    serde_json::from_slice(&b).unwrap()
}

/// Answers every task of `plan` the way a logit respondent would.
async fn complete(app: &Router, plan: &SessionPlan, rng: &mut ChaCha8Rng) {
    let beta = Coefficients::from_attributes(-0.034, -0.021, -0.102);
    let uri = format!("/api/sessions/{}/answers", plan.session_id);
    for t in &plan.sbdc {
        let v = -6.132 + 0.961 * t.compensation_yuan.ln();
        let accepted = rng.random::<f64>() < 1.0 / (1.0 + (-v).exp());
        let body = json!({"answer_id": format!("b{}", t.task_no), "kind": "sbdc", "task_no": t.task_no, "accepted": accepted, "dwell_ms": 2000});
        let (s, _) = json_call(app, "POST", &uri, body).await;
        assert_eq!(s, StatusCode::OK);
    }
    for t in &plan.sce {
        let u: Vec<f64> = t.task.alternatives.iter().map(|a| utility(a, &beta).unwrap().exp()).collect();
        let chosen = usize::from(rng.random::<f64>() * (u[0] + u[1]) >= u[0]);
        let body = json!({"answer_id": format!("c{}", t.task_no), "kind": "sce", "task_no": t.task_no, "chosen": chosen, "dwell_ms": 3000});
        let (s, _) = json_call(app, "POST", &uri, body).await;
        assert_eq!(s, StatusCode::OK);
    }
}

async fn export(app: &Router, schema: &str) -> Vec<u8> {
    let (s, b) = call(app, "GET", &format!("/api/export?schema={schema}"), "").await;
    assert_eq!(s, StatusCode::OK);
    b
}

fn rows_for(csv: &[u8], id: &str) -> Vec<String> {
    String::from_utf8_lossy(csv).lines().filter(|l| l.starts_with(&format!("{id},"))).map(str::to_owned).collect()
}

#[tokio::test]
async fn health_reports_design_size() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (s, v) = json_call(&app, "GET", "/api/health", Value::Null).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["design_tasks"], 16);
    assert_eq!(v["sessions"], 0);
}

#[tokio::test]
async fn completed_session_exports_all_tasks() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let plan = new_session(&app, json!({"covariates": {"age": "34", "gender": "female"}})).await;
    assert!(plan.eligible);
    assert_eq!(plan.sbdc.len(), SBDC_PER_SESSION);
    assert_eq!(plan.sce.len(), 2 * SCE_PER_SCENARIO);
    for (i, s) in Scenario::ALL.iter().enumerate() {
        let block = &plan.sce[i * SCE_PER_SCENARIO..(i + 1) * SCE_PER_SCENARIO];
        assert!(block.iter().all(|t| t.task.scenario == Some(*s)));
    }
    complete(&app, &plan, &mut ChaCha8Rng::seed_from_u64(1)).await;

    let sbdc = export(&app, "sbdc").await;
    let sce = export(&app, "sce").await;
    assert_eq!(rows_for(&sbdc, &plan.session_id).len(), 4);
    let sce_tasks: std::collections::BTreeSet<String> = rows_for(&sce, &plan.session_id)
        .iter()
        .map(|r| r.split(',').take(3).collect::<Vec<_>>().join(","))
        .collect();
    assert_eq!(sce_tasks.len(), 8);
    assert!(String::from_utf8_lossy(&sbdc).starts_with("respondent_id,task_no,compensation_yuan,accepted,age,gender\n"));
    assert!(String::from_utf8_lossy(&sce).starts_with("respondent_id,scenario,task_no,alt_index,wait_min,cost_yuan,unrel_min,chosen\n"));

    // the plan served back matches the one handed out
    let (s, b) = call(&app, "GET", &format!("/api/sessions/{}", plan.session_id), "").await;
    assert_eq!(s, StatusCode::OK);
    let again: SessionPlan = serde_json::from_slice(&b).unwrap();
    assert_eq!(again, plan);
}

#[tokio::test]
async fn screened_out_respondents_get_no_tasks() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let plan = new_session(&app, json!({"screening": {"resident": false, "delivery_user": true}})).await;
    assert!(!plan.eligible);
    assert!(plan.sbdc.is_empty() && plan.sce.is_empty());
    let uri = format!("/api/sessions/{}/answers", plan.session_id);
    let (s, _) = json_call(&app, "POST", &uri, json!({"answer_id": "x", "kind": "sbdc", "task_no": 1, "accepted": true})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(rows_for(&export(&app, "sbdc").await, &plan.session_id).len(), 0);
}

#[tokio::test]
async fn retried_answers_are_stored_once() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let plan = new_session(&app, json!({})).await;
    let uri = format!("/api/sessions/{}/answers", plan.session_id);
    let body = json!({"answer_id": "a-1", "kind": "sbdc", "task_no": 1, "accepted": true, "dwell_ms": 900});
    let (s, v) = json_call(&app, "POST", &uri, body.clone()).await;
    assert_eq!((s, v["status"].as_str()), (StatusCode::OK, Some("stored")));
    let log_len = std::fs::read_to_string(dir.path().join("answers.jsonl")).unwrap().lines().count();
    // the client lost the acknowledgement and resends
    for _ in 0..3 {
        let (s, v) = json_call(&app, "POST", &uri, body.clone()).await;
        assert_eq!((s, v["status"].as_str()), (StatusCode::OK, Some("duplicate")));
    }
    assert_eq!(std::fs::read_to_string(dir.path().join("answers.jsonl")).unwrap().lines().count(), log_len);
    assert_eq!(rows_for(&export(&app, "sbdc").await, &plan.session_id).len(), 1);

    // a different answer for the same task is a conflict, not an overwrite
    let other = json!({"answer_id": "a-2", "kind": "sbdc", "task_no": 1, "accepted": false});
    assert_eq!(json_call(&app, "POST", &uri, other).await.0, StatusCode::CONFLICT);
}

#[tokio::test]
async fn invalid_requests_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let plan = new_session(&app, json!({})).await;
    let uri = format!("/api/sessions/{}/answers", plan.session_id);
    let cases = [
        (json!({"answer_id": "u", "kind": "sce", "task_no": 99, "chosen": 0}), StatusCode::UNPROCESSABLE_ENTITY),
        (json!({"answer_id": "u", "kind": "sbdc", "task_no": 9, "accepted": true}), StatusCode::UNPROCESSABLE_ENTITY),
        (json!({"answer_id": "u", "kind": "sce", "task_no": 1, "chosen": 2}), StatusCode::UNPROCESSABLE_ENTITY),
        (json!({"answer_id": "u", "kind": "sce", "task_no": 1, "accepted": true}), StatusCode::BAD_REQUEST),
        (json!({"answer_id": "u", "kind": "sbdc", "task_no": 1, "chosen": 1}), StatusCode::BAD_REQUEST),
        (json!({"answer_id": "", "kind": "sbdc", "task_no": 1, "accepted": true}), StatusCode::BAD_REQUEST),
        (json!({"answer_id": "u", "kind": "sbdc", "task_no": 1, "accepted": true, "extra": 1}), StatusCode::BAD_REQUEST),
        (json!({"answer_id": "u", "kind": "other", "task_no": 1}), StatusCode::BAD_REQUEST),
    ];
    for (body, code) in cases {
        let (s, v) = json_call(&app, "POST", &uri, body.clone()).await;
        assert_eq!(s, code, "{body}");
        assert!(v["error"].is_string());
    }
    assert_eq!(call(&app, "POST", &uri, "{not json").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&app, "POST", "/api/sessions", "[1, 2]").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(
        json_call(&app, "POST", "/api/sessions/s999999/answers", json!({"answer_id": "u", "kind": "sbdc", "task_no": 1, "accepted": true})).await.0,
        StatusCode::NOT_FOUND
    );
    assert_eq!(call(&app, "GET", "/api/sessions/s999999", "").await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "GET", "/api/export?schema=groups", "").await.0, StatusCode::BAD_REQUEST);
    // nothing above reached the log
    assert_eq!(std::fs::read_to_string(dir.path().join("answers.jsonl")).unwrap(), "");
}

#[tokio::test]
async fn store_replays_after_restart() {
    let dir = tempfile::tempdir().unwrap();
    let (sbdc, sce) = {
        let app = app(dir.path());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let plan = new_session(&app, json!({"covariates": {"age": "41"}})).await;
            complete(&app, &plan, &mut rng).await;
        }
        (export(&app, "sbdc").await, export(&app, "sce").await)
    };
    let app = app(dir.path());
    assert_eq!(export(&app, "sbdc").await, sbdc);
    assert_eq!(export(&app, "sce").await, sce);
    assert_eq!(export(&app, "sce").await, sce);
    let next = new_session(&app, json!({})).await;
    assert_eq!(next.session_id, "s000006");
    let store = Store::open(dir.path()).unwrap();
    assert_eq!(store.n_sessions(), 6);
}

#[tokio::test]
async fn collected_responses_ingest_and_fit() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..300 {
        let age = 20 + i % 40;
        let plan = new_session(&app, json!({"covariates": {"age": age.to_string()}})).await;
        complete(&app, &plan, &mut rng).await;
    }
    let sbdc = export(&app, "sbdc").await;
    let sce = export(&app, "sce").await;
    let opts = IngestOptions::default();
    let b = read_sbdc(&sbdc[..], &opts).unwrap();
    assert_eq!(b.data.observations.len(), 300 * SBDC_PER_SESSION);
    let c = read_sce(&sce[..], &opts, Some(&b.data.covariates)).unwrap();
    assert_eq!(c.data.len(), 300 * 2 * SCE_PER_SCENARIO);

    // ingesting and re-writing the export reproduces it byte for byte
    let mut again = Vec::new();
    write_sce(&c.data, &mut again).unwrap();
    assert_eq!(again, sce);

    let fit = fit_clogit(&c.data.filter_scenario(Scenario::Work), &ClogitConfig::default()).unwrap();
    assert!(fit.converged);
    let s = fit_sbdc(&b.data, &SbdcSpec::Extended(vec!["age".into()]), &SbdcConfig::default()).unwrap();
    assert!(s.beta_c > 0.0);
}

#[test]
fn assignment_is_uniform() {
    let d = design();
    let n = 10_000u64;
    let req = CreateSession::default();
    let mut levels: BTreeMap<u64, usize> = BTreeMap::new();
    let mut tasks: BTreeMap<(Scenario, u32), usize> = BTreeMap::new();
    for i in 0..n {
        let p = plan_session(&d, SEED, i, &req);
        for t in &p.sbdc {
            *levels.entry(t.compensation_yuan.to_bits()).or_default() += 1;
        }
        for t in &p.sce {
            *tasks.entry((t.task.scenario.unwrap(), t.task.task_id)).or_default() += 1;
        }
    }
    let check = |count: usize, p: f64| {
        let mean = n as f64 * p;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((count as f64 - mean).abs() <= 3.0 * sd, "{count} vs {mean} +- {sd}");
    };
    assert_eq!(levels.len(), COMPENSATION_LEVELS.len());
    for &c in levels.values() {
        check(c, SBDC_PER_SESSION as f64 / COMPENSATION_LEVELS.len() as f64);
    }
    assert_eq!(tasks.len(), 2 * d.tasks.len());
    for &c in tasks.values() {
        check(c, SCE_PER_SCENARIO as f64 / d.tasks.len() as f64);
    }
    // plans are a pure function of seed and index
    assert_eq!(plan_session(&d, SEED, 17, &req).sce, plan_session(&d, SEED, 17, &req).sce);
}
