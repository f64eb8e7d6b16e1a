//! HTTP collection service backing the survey UI.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use choicelab_core::covariates::{CovariateRow, CovariateValue};
use choicelab_core::design::Design;
use choicelab_core::io::{write_sbdc, write_sce};
use choicelab_core::sbdc::{SbdcDataset, SbdcObservation, COMPENSATION_LEVELS};
use choicelab_core::{ChoiceTask, Dataset, Observation, RespondentId, Scenario};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub const SBDC_PER_SESSION: usize = 4;
pub const SCE_PER_SCENARIO: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Sbdc,
    Sce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Screening {
    pub resident: bool,
    pub delivery_user: bool,
}

impl Default for Screening {
    fn default() -> Self {
        Self { resident: true, delivery_user: true }
    }
}

impl Screening {
    pub fn eligible(&self) -> bool {
        self.resident && self.delivery_user
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    #[serde(default)]
    pub screening: Screening,
    /// Raw covariate answers, exported as SBDC covariate columns.
    #[serde(default)]
    pub covariates: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedSbdc {
    pub task_no: u32,
    pub compensation_yuan: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedSce {
    pub task_no: u32,
    pub task: ChoiceTask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionPlan {
    pub session_id: String,
    /// Position in creation order; selects the session's random substream.
    pub index: u64,
    pub screening: Screening,
    pub eligible: bool,
    pub sbdc: Vec<PlannedSbdc>,
    pub sce: Vec<PlannedSce>,
    pub covariates: BTreeMap<String, String>,
    pub created_at_ms: u64,
}

impl SessionPlan {
    fn scenario_of(&self, task_no: u32) -> Option<&PlannedSce> {
        self.sce.iter().find(|t| t.task_no == task_no)
    }
}

/// Deterministic plan for session `index` under `seed`.
pub fn plan_session(design: &Design, seed: u64, index: u64, req: &CreateSession) -> SessionPlan {
    let eligible = req.screening.eligible();
    let mut sbdc = Vec::new();
    let mut sce = Vec::new();
    if eligible {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let mut levels = COMPENSATION_LEVELS.to_vec();
        levels.shuffle(&mut rng);
        sbdc = levels[..SBDC_PER_SESSION]
            .iter()
            .enumerate()
            .map(|(i, &c)| PlannedSbdc { task_no: i as u32 + 1, compensation_yuan: c })
            .collect();
        let mut no = 1;
        for s in Scenario::ALL {
            let mut pool: Vec<&ChoiceTask> = design.tasks.iter().collect();
            pool.shuffle(&mut rng);
            for t in pool.into_iter().take(SCE_PER_SCENARIO) {
                sce.push(PlannedSce { task_no: no, task: t.with_scenario(s) });
                no += 1;
            }
        }
    }
    SessionPlan {
        session_id: format!("s{:06}", index + 1),
        index,
        screening: req.screening.clone(),
        eligible,
        sbdc,
        sce,
        covariates: req.covariates.clone(),
        created_at_ms: now_ms(),
    }
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerBody {
    pub answer_id: String,
    pub kind: TaskKind,
    pub task_no: u32,
    #[serde(default)]
    pub accepted: Option<bool>,
    #[serde(default)]
    pub chosen: Option<usize>,
    #[serde(default)]
    pub dwell_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredAnswer {
    pub session_id: String,
    pub answer_id: String,
    pub kind: TaskKind,
    pub task_no: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accepted: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chosen: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dwell_ms: Option<u64>,
    pub received_at_ms: u64,
}

/// Append-only store: `sessions.jsonl` and `answers.jsonl` in the data directory.
pub struct Store {
    sessions: Vec<SessionPlan>,
    by_id: HashMap<String, usize>,
    answers: BTreeMap<u64, BTreeMap<(TaskKind, u32), StoredAnswer>>,
    answer_ids: BTreeSet<(String, String)>,
    session_log: File,
    answer_log: File,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<Vec<T>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), i + 1))?);
    }
    Ok(out)
}

fn append(f: &mut File, value: &impl Serialize) -> anyhow::Result<()> {
    let mut line = serde_json::to_string(value)?;
    line.push('\n');
    f.write_all(line.as_bytes())?;
    f.flush()?;
    Ok(())
}

impl Store {
    pub fn open(dir: &Path) -> anyhow::Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let sp = dir.join("sessions.jsonl");
        let ap = dir.join("answers.jsonl");
        let sessions: Vec<SessionPlan> = read_jsonl(&sp)?;
        let stored: Vec<StoredAnswer> = read_jsonl(&ap)?;
        let by_id = sessions.iter().enumerate().map(|(i, s)| (s.session_id.clone(), i)).collect();
        let mut store = Self {
            sessions,
            by_id,
            answers: BTreeMap::new(),
            answer_ids: BTreeSet::new(),
            session_log: OpenOptions::new().create(true).append(true).open(&sp)?,
            answer_log: OpenOptions::new().create(true).append(true).open(&ap)?,
        };
        for a in stored {
            store.index_answer(a);
        }
        Ok(store)
    }

    fn index_answer(&mut self, a: StoredAnswer) {
        let Some(&i) = self.by_id.get(&a.session_id) else { return };
        self.answer_ids.insert((a.session_id.clone(), a.answer_id.clone()));
        self.answers.entry(self.sessions[i].index).or_default().insert((a.kind, a.task_no), a);
    }

    pub fn n_sessions(&self) -> usize {
        self.sessions.len()
    }

    pub fn session(&self, id: &str) -> Option<&SessionPlan> {
        self.by_id.get(id).map(|&i| &self.sessions[i])
    }

    pub fn create(&mut self, design: &Design, seed: u64, req: &CreateSession) -> anyhow::Result<SessionPlan> {
        let plan = plan_session(design, seed, self.sessions.len() as u64, req);
        append(&mut self.session_log, &plan)?;
        self.by_id.insert(plan.session_id.clone(), self.sessions.len());
        self.sessions.push(plan.clone());
        Ok(plan)
    }

    pub fn export_sbdc(&self) -> anyhow::Result<Vec<u8>> {
        let mut observations = Vec::new();
        let mut covariates = BTreeMap::new();
        let mut names = BTreeSet::new();
        for s in &self.sessions {
            let Some(ans) = self.answers.get(&s.index) else { continue };
            let rid = RespondentId::new(&s.session_id);
            let mut any = false;
            for t in &s.sbdc {
                if let Some(a) = ans.get(&(TaskKind::Sbdc, t.task_no)) {
                    observations.push(SbdcObservation {
                        respondent_id: rid.clone(),
                        task_no: t.task_no,
                        compensation: t.compensation_yuan,
                        accepted: a.accepted.unwrap_or(false),
                    });
                    any = true;
                }
            }
            if any {
                let row: CovariateRow = s
                    .covariates
                    .iter()
                    .map(|(k, v)| {
                        let value = v.parse::<f64>().map_or_else(|_| CovariateValue::Label(v.clone()), CovariateValue::Number);
                        (k.clone(), value)
                    })
                    .collect();
                names.extend(s.covariates.keys().cloned());
                covariates.insert(rid, row);
            }
        }
        let data = SbdcDataset { observations, covariates };
        let names: Vec<String> = names.into_iter().collect();
        let mut buf = Vec::new();
        write_sbdc(&data, &names, None, &mut buf)?;
        Ok(buf)
    }

    pub fn export_sce(&self) -> anyhow::Result<Vec<u8>> {
        let mut observations = Vec::new();
        for s in &self.sessions {
            let Some(ans) = self.answers.get(&s.index) else { continue };
            for t in &s.sce {
                if let Some(a) = ans.get(&(TaskKind::Sce, t.task_no)) {
                    observations.push(Observation {
                        respondent_id: RespondentId::new(&s.session_id),
                        task_no: t.task_no,
                        task: t.task.clone(),
                        chosen_index: a.chosen.unwrap_or(0),
                    });
                }
            }
        }
        let data = Dataset { observations, covariates: BTreeMap::new() };
        let mut buf = Vec::new();
        write_sce(&data, &mut buf)?;
        Ok(buf)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerStatus {
    Stored,
    Duplicate,
}

/// Why an answer was refused, mapped onto HTTP status codes.
#[derive(Debug)]
pub enum Rejection {
    Malformed(String),
    UnknownSession(String),
    UnknownTask(String),
    Conflict(String),
    Internal(anyhow::Error),
}

impl IntoResponse for Rejection {
    fn into_response(self) -> Response {
        let (code, msg) = match self {
            Rejection::Malformed(m) => (StatusCode::BAD_REQUEST, m),
            Rejection::UnknownSession(m) => (StatusCode::NOT_FOUND, m),
            Rejection::UnknownTask(m) => (StatusCode::UNPROCESSABLE_ENTITY, m),
            Rejection::Conflict(m) => (StatusCode::CONFLICT, m),
            Rejection::Internal(e) => (StatusCode::INTERNAL_SERVER_ERROR, format!("{e:#}")),
        };
        (code, Json(json!({ "error": msg }))).into_response()
    }
}

impl Store {
    pub fn answer(&mut self, session_id: &str, body: AnswerBody) -> Result<AnswerStatus, Rejection> {
        let plan = self
            .session(session_id)
            .ok_or_else(|| Rejection::UnknownSession(format!("no session {session_id}")))?
            .clone();
        if self.answer_ids.contains(&(session_id.to_owned(), body.answer_id.clone())) {
            return Ok(AnswerStatus::Duplicate);
        }
        match body.kind {
            TaskKind::Sbdc => {
                if !plan.sbdc.iter().any(|t| t.task_no == body.task_no) {
                    return Err(Rejection::UnknownTask(format!("sbdc task {} is not in session {session_id}", body.task_no)));
                }
                if body.accepted.is_none() || body.chosen.is_some() {
                    return Err(Rejection::Malformed("sbdc answers carry `accepted` only".into()));
                }
            }
            TaskKind::Sce => {
                let t = plan.scenario_of(body.task_no).ok_or_else(|| {
                    Rejection::UnknownTask(format!("sce task {} is not in session {session_id}", body.task_no))
                })?;
                let Some(c) = body.chosen.filter(|_| body.accepted.is_none()) else {
                    return Err(Rejection::Malformed("sce answers carry `chosen` only".into()));
                };
                if c >= t.task.alternatives.len() {
                    return Err(Rejection::UnknownTask(format!(
                        "alternative {c} does not exist in sce task {}",
                        body.task_no
                    )));
                }
            }
        }
        if self.answers.get(&plan.index).is_some_and(|m| m.contains_key(&(body.kind, body.task_no))) {
            return Err(Rejection::Conflict(format!("task {} was already answered", body.task_no)));
        }
        let stored = StoredAnswer {
            session_id: session_id.to_owned(),
            answer_id: body.answer_id,
            kind: body.kind,
            task_no: body.task_no,
            accepted: body.accepted,
            chosen: body.chosen,
            dwell_ms: body.dwell_ms,
            received_at_ms: now_ms(),
        };
        append(&mut self.answer_log, &stored).map_err(Rejection::Internal)?;
        self.index_answer(stored);
        Ok(AnswerStatus::Stored)
    }
}

#[derive(Clone)]
pub struct AppState {
    pub design: Arc<Design>,
    pub seed: u64,
    pub store: Arc<Mutex<Store>>,
}

impl AppState {
    pub fn open(design: Design, seed: u64, data_dir: &Path) -> anyhow::Result<Self> {
        Ok(Self { design: Arc::new(design), seed, store: Arc::new(Mutex::new(Store::open(data_dir)?)) })
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Store> {
        // a panic mid-request cannot leave a half-written line in memory
        self.store.lock().unwrap_or_else(|e| e.into_inner())
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/answers", post(post_answer))
        .route("/api/export", get(export))
        .with_state(state)
}

async fn health(State(st): State<AppState>) -> Json<serde_json::Value> {
    let n = st.lock().n_sessions();
    Json(json!({ "status": "ok", "sessions": n, "design_tasks": st.design.tasks.len() }))
}

fn parse<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, Rejection> {
    serde_json::from_slice(body).map_err(|e| Rejection::Malformed(format!("invalid body: {e}")))
}

async fn create_session(State(st): State<AppState>, body: Bytes) -> Result<Json<SessionPlan>, Rejection> {
    let req: CreateSession = if body.iter().all(u8::is_ascii_whitespace) { CreateSession::default() } else { parse(&body)? };
    let plan = st.lock().create(&st.design, st.seed, &req).map_err(Rejection::Internal)?;
    Ok(Json(plan))
}

async fn get_session(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<SessionPlan>, Rejection> {
    st.lock()
        .session(&id)
        .cloned()
        .map(Json)
        .ok_or_else(|| Rejection::UnknownSession(format!("no session {id}")))
}

async fn post_answer(
    State(st): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<serde_json::Value>, Rejection> {
    let answer: AnswerBody = parse(&body)?;
    if answer.answer_id.trim().is_empty() {
        return Err(Rejection::Malformed("answer_id must be non-empty".into()));
    }
    let status = st.lock().answer(&id, answer)?;
    Ok(Json(json!({ "status": status })))
}

#[derive(Debug, Deserialize)]
struct ExportQuery {
    schema: String,
}

async fn export(State(st): State<AppState>, Query(q): Query<ExportQuery>) -> Result<Response, Rejection> {
    let store = st.lock();
    let bytes = match q.schema.as_str() {
        "sbdc" => store.export_sbdc(),
        "sce" => store.export_sce(),
        other => return Err(Rejection::Malformed(format!("unknown export schema `{other}` (sbdc, sce)"))),
    }
    .map_err(Rejection::Internal)?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], bytes).into_response())
}

pub async fn serve(state: AppState, addr: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
