//! HTTP service for live annotation sessions.
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/sessions` | create a session, 201 |
//! | GET | `/sessions/{id}` | summary and open task |
//! | POST | `/sessions/{id}/next-batch` | query the strategy; 200 with the task, or 202 with a poll token when the query runs past the slow-query threshold |
//! | GET | `/sessions/{id}/next-batch/{token}` | poll a slow query |
//! | POST | `/sessions/{id}/labels` | submit some or all labels of the open task |
//! | GET | `/sessions/{id}/history` | full session history |
//! | GET | `/sessions/{id}/export` | labeled set as JSON lines |
//!
//! Every POST honours an `Idempotency-Key` header: a repeated key gets the
//! first response back without touching the session. When a bearer token is
//! configured every `/sessions` route requires it. The token is a shared
//! secret for a local tool, nothing more.

mod error;

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use axum::extract::{Path, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use activellm_core::clock::{Clock, SystemClock};
use activellm_core::corpus::{Manifest, Pool};
use activellm_core::oracle_llm::EndpointDescriptor;
use activellm_core::promptkit::PromptConfig;
use activellm_core::selection_parser::{Diagnostic, SelectionStatus};
use activellm_core::session::{
    labeled_records, Session, SessionConfig, SessionEvent, SessionHistory, SessionStatus, SessionStore, SubmitOutcome,
};
use activellm_core::strategies::{
    build_strategy, QueryStrategy, StrategyError, StrategyId, StrategyResources, StrategySpec,
};

pub use error::{ApiError, ErrorBody, ErrorDetail};

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

pub struct ServiceConfig {
    /// Where session state files go; `None` keeps sessions in memory only.
    pub state_dir: Option<PathBuf>,
    pub auth_token: Option<String>,
    pub slow_query_after: Duration,
    /// Endpoint for sessions whose creation request names none.
    pub default_endpoint: Option<EndpointDescriptor>,
    pub clock: Arc<dyn Clock>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            state_dir: None,
            auth_token: None,
            slow_query_after: Duration::from_secs(2),
            default_endpoint: None,
            clock: Arc::new(SystemClock),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskItem {
    pub index: usize,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_pair: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Open,
    PartiallyLabeled,
    Complete,
}

/// The batch a human annotator is asked to label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub session_id: String,
    pub iteration_number: usize,
    pub items: Vec<TaskItem>,
    pub label_space: Vec<String>,
    pub status: TaskStatus,
    pub selection_status: SelectionStatus,
    pub diagnostics: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub status: SessionStatus,
    pub strategy: String,
    pub budget: usize,
    pub labeled_count: usize,
    pub remaining_budget: usize,
    pub iterations: usize,
    pub task: Option<AnnotationTask>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PollAccepted {
    pub poll_token: String,
    pub poll_url: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelsRequest {
    pub labels: BTreeMap<usize, String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelsResponse {
    pub status: TaskStatus,
    pub remaining: Vec<usize>,
    pub labeled_count: usize,
    pub session_status: SessionStatus,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreatedSession {
    pub id: String,
}

/// Body of `POST /sessions`. `strategy` is either a short form such as
/// `"hybrid:50:pe"` or `{"id": ..., "params": {...}}`.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSessionRequest {
    manifest: PathBuf,
    #[serde(default)]
    prompt: Value,
    strategy: Value,
    budget: usize,
    step: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    endpoint: Option<EndpointDescriptor>,
}

struct Runtime {
    session: Session,
    strategy: Box<dyn QueryStrategy>,
    store: Option<SessionStore>,
}

type QueryResult = Result<AnnotationTask, ApiError>;

struct Inflight {
    token: String,
    handle: tokio::task::JoinHandle<QueryResult>,
}

#[derive(Clone)]
struct Cached {
    status: StatusCode,
    body: Value,
}

impl IntoResponse for Cached {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

struct SessionSlot {
    pool: Arc<Pool>,
    runtime: Arc<tokio::sync::Mutex<Runtime>>,
    snapshot: RwLock<Arc<Session>>,
    inflight: Mutex<Option<Inflight>>,
    idempotency: Mutex<HashMap<String, Cached>>,
}

impl SessionSlot {
    fn snapshot(&self) -> Arc<Session> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    fn publish(&self, session: &Session) {
        *self.snapshot.write().expect("snapshot lock") = Arc::new(session.clone());
    }

    fn cached(&self, key: &Option<String>) -> Option<Cached> {
        key.as_ref().and_then(|k| self.idempotency.lock().expect("idempotency lock").get(k).cloned())
    }

    fn remember(&self, key: &Option<String>, cached: &Cached) {
        if let Some(k) = key {
            self.idempotency.lock().expect("idempotency lock").insert(k.clone(), cached.clone());
        }
    }
}

struct Inner {
    config: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<SessionSlot>>>,
    create_keys: Mutex<HashMap<String, Cached>>,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        Self {
            inner: Arc::new(Inner {
                config,
                sessions: RwLock::new(HashMap::new()),
                create_keys: Mutex::new(HashMap::new()),
            }),
        }
    }

    fn slot(&self, id: &str) -> Result<Arc<SessionSlot>, ApiError> {
        self.inner.sessions.read().expect("sessions lock").get(id).cloned().ok_or_else(|| ApiError::not_found(id))
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.inner.sessions.read().expect("sessions lock").keys().cloned().collect();
        ids.sort();
        ids
    }
}

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/next-batch", post(next_batch))
        .route("/sessions/{id}/next-batch/{token}", get(poll_batch))
        .route("/sessions/{id}/labels", post(submit_labels))
        .route("/sessions/{id}/history", get(get_history))
        .route("/sessions/{id}/export", get(export_labels))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new().route("/health", get(|| async { "ok" })).merge(api).with_state(state)
}

pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

async fn require_token(State(state): State<AppState>, request: Request, next: Next) -> Response {
    if let Some(token) = &state.inner.config.auth_token {
        let presented = request
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_str()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token")
                .into_response();
        }
    }
    next.run(request).await
}

fn idempotency_key(headers: &HeaderMap) -> Option<String> {
    headers.get(IDEMPOTENCY_HEADER).and_then(|v| v.to_str().ok()).map(str::to_string)
}

fn to_value<T: Serialize>(value: &T) -> Value {
    serde_json::to_value(value).expect("response serializes")
}

fn build_task(session: &Session, pool: &Pool) -> Option<AnnotationTask> {
    let pending = session.pending.as_ref()?;
    let items = pending
        .selection
        .indices
        .iter()
        .map(|&index| {
            let instance = &pool.instances()[index];
            TaskItem {
                index,
                text: instance.text.clone(),
                text_pair: instance.text_pair.clone(),
                label: pending.labels.get(&index).cloned(),
            }
        })
        .collect();
    let status = if pending.is_complete() {
        TaskStatus::Complete
    } else if pending.labels.is_empty() {
        TaskStatus::Open
    } else {
        TaskStatus::PartiallyLabeled
    };
    Some(AnnotationTask {
        session_id: session.id.clone(),
        iteration_number: pending.iteration_number,
        items,
        label_space: pool.label_space().to_vec(),
        status,
        selection_status: pending.selection.status,
        diagnostics: pending.selection.diagnostics.iter().map(Diagnostic::to_string).collect(),
    })
}

fn summary(session: &Session, pool: &Pool) -> SessionSummary {
    SessionSummary {
        id: session.id.clone(),
        status: session.status(),
        strategy: session.config.strategy.label(),
        budget: session.config.budget,
        labeled_count: session.history.labeled_count(),
        remaining_budget: session.remaining_budget(),
        iterations: session.history.iterations.len(),
        task: build_task(session, pool),
    }
}

fn persist(runtime: &Runtime, clock: &dyn Clock, events: &[SessionEvent]) -> Result<(), ApiError> {
    if let Some(store) = &runtime.store {
        store.save(&runtime.session).map_err(|e| ApiError::internal(e.to_string()))?;
        for event in events {
            store.record(clock.now(), event).map_err(|e| ApiError::internal(e.to_string()))?;
        }
    }
    Ok(())
}

fn parse_strategy(value: &Value) -> Result<StrategySpec, ApiError> {
    let unknown = |e: &dyn std::fmt::Display| ApiError::invalid("unknown_strategy", e.to_string());
    match value {
        Value::String(s) => s.parse().map_err(|e| unknown(&e)),
        Value::Object(map) => {
            let id = map
                .get("id")
                .and_then(Value::as_str)
                .ok_or_else(|| ApiError::invalid("invalid_request", "strategy needs an `id`"))?;
            id.parse::<StrategyId>().map_err(|e| unknown(&e))?;
            serde_json::from_value(value.clone()).map_err(|e| ApiError::invalid("invalid_strategy", e.to_string()))
        }
        _ => Err(ApiError::invalid("invalid_request", "strategy must be a string or an object")),
    }
}

fn open_session(state: &AppState, request: CreateSessionRequest) -> Result<(Session, Pool, Runtime), ApiError> {
    let config = &state.inner.config;
    let prompt: PromptConfig = if request.prompt.is_null() {
        PromptConfig::default()
    } else {
        serde_json::from_value(request.prompt.clone())
            .map_err(|e| ApiError::invalid("invalid_prompt", e.to_string()))?
    };
    let spec = parse_strategy(&request.strategy)?;
    let manifest =
        Manifest::load(&request.manifest).map_err(|e| ApiError::invalid("invalid_manifest", e.to_string()))?;
    let endpoint = request.endpoint.clone().or_else(|| config.default_endpoint.clone());
    let settings = endpoint.as_ref().map(|e| e.settings.clone()).unwrap_or_default();
    let session_config = SessionConfig {
        manifest: Some(request.manifest.clone()),
        prompt: prompt.clone(),
        settings,
        strategy: spec.clone(),
        budget: request.budget,
        step: request.step,
        seed: request.seed,
    };
    let id = uuid::Uuid::new_v4().to_string();
    let session = Session::new(id.clone(), session_config)?;

    let pool = manifest.load_pool().map_err(|e| ApiError::invalid("invalid_manifest", e.to_string()))?;
    let resources =
        StrategyResources::for_pool(&spec, &manifest, &pool, &prompt, endpoint.as_ref(), config.clock.clone())
            .map_err(|e| match e {
                StrategyError::Llm(_) => ApiError::invalid("invalid_endpoint", e.to_string()),
                _ => ApiError::invalid("missing_resource", e.to_string()),
            })?;
    let strategy =
        build_strategy(&spec, &resources).map_err(|e| ApiError::invalid("invalid_strategy", e.to_string()))?;
    let store = config.state_dir.as_ref().map(|dir| SessionStore::new(dir.join(format!("{id}.json"))));
    let runtime = Runtime { session: session.clone(), strategy, store };
    persist(&runtime, config.clock.as_ref(), &[SessionEvent::Created { session_id: id, strategy: spec.label() }])?;
    Ok((session, pool, runtime))
}

async fn create_session(State(state): State<AppState>, headers: HeaderMap, body: Json<Value>) -> Response {
    let key = idempotency_key(&headers);
    if let Some(k) = &key {
        if let Some(cached) = state.inner.create_keys.lock().expect("keys lock").get(k).cloned() {
            return cached.into_response();
        }
    }
    let request: CreateSessionRequest = match serde_json::from_value(body.0) {
        Ok(r) => r,
        Err(e) => return ApiError::invalid("invalid_request", e.to_string()).into_response(),
    };
    let worker = state.clone();
    // Manifest loading and endpoint construction may block.
    let opened = tokio::task::spawn_blocking(move || open_session(&worker, request))
        .await
        .unwrap_or_else(|e| Err(ApiError::internal(e.to_string())));
    let cached = match opened {
        Ok((session, pool, runtime)) => {
            let id = session.id.clone();
            let slot = SessionSlot {
                pool: Arc::new(pool),
                runtime: Arc::new(tokio::sync::Mutex::new(runtime)),
                snapshot: RwLock::new(Arc::new(session)),
                inflight: Mutex::new(None),
                idempotency: Mutex::new(HashMap::new()),
            };
            state.inner.sessions.write().expect("sessions lock").insert(id.clone(), Arc::new(slot));
            tracing::info!(session = %id, "session created");
            Cached { status: StatusCode::CREATED, body: to_value(&CreatedSession { id }) }
        }
        Err(e) => Cached { status: e.status, body: to_value(&e.body()) },
    };
    if let Some(k) = key {
        state.inner.create_keys.lock().expect("keys lock").insert(k, cached.clone());
    }
    cached.into_response()
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionSummary>, ApiError> {
    let slot = state.slot(&id)?;
    Ok(Json(summary(&slot.snapshot(), &slot.pool)))
}

async fn get_history(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionHistory>, ApiError> {
    let slot = state.slot(&id)?;
    Ok(Json(slot.snapshot().history.clone()))
}

async fn export_labels(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let slot = state.slot(&id)?;
    let mut body = String::new();
    for record in labeled_records(&slot.pool, &slot.snapshot().history) {
        body.push_str(&serde_json::to_string(&record).expect("record serializes"));
        body.push('\n');
    }
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

fn run_query(runtime: &mut Runtime, pool: &Pool, clock: &dyn Clock) -> QueryResult {
    let Runtime { session, strategy, .. } = runtime;
    let began = session.begin_iteration(pool, strategy.as_mut(), clock);
    let events = match began {
        Ok(pending) => vec![SessionEvent::BatchSelected {
            iteration: pending.iteration_number,
            indices: pending.selection.indices.clone(),
            status: pending.selection.status,
            diagnostics: pending.selection.diagnostics.iter().map(Diagnostic::to_string).collect(),
        }],
        Err(e) => {
            if runtime.session.exhausted {
                persist(runtime, clock, &[SessionEvent::Exhausted { reason: e.to_string() }])?;
            }
            return Err(e.into());
        }
    };
    persist(runtime, clock, &events)?;
    Ok(build_task(&runtime.session, pool).expect("task just opened"))
}

fn query_response(result: QueryResult) -> Cached {
    match result {
        Ok(task) => Cached { status: StatusCode::OK, body: to_value(&task) },
        Err(e) => Cached { status: e.status, body: to_value(&e.body()) },
    }
}

fn joined(result: Result<QueryResult, tokio::task::JoinError>) -> QueryResult {
    result.unwrap_or_else(|e| Err(ApiError::internal(format!("query task failed: {e}"))))
}

async fn next_batch(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let slot = state.slot(&id)?;
    let key = idempotency_key(&headers);
    if let Some(cached) = slot.cached(&key) {
        return Ok(cached.into_response());
    }
    if let Some(inflight) = slot.inflight.lock().expect("inflight lock").as_ref() {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "query_in_progress",
            format!("a query is still running; poll token {}", inflight.token),
        ));
    }
    let snapshot = slot.snapshot();
    if snapshot.pending.is_some() {
        return Err(ApiError::new(StatusCode::CONFLICT, "task_open", "label the open task first"));
    }

    let guard = slot.runtime.clone().lock_owned().await;
    let clock = state.inner.config.clock.clone();
    let worker_slot = slot.clone();
    let mut handle = tokio::task::spawn_blocking(move || {
        let mut runtime = guard;
        let result = run_query(&mut runtime, &worker_slot.pool, clock.as_ref());
        worker_slot.publish(&runtime.session);
        result
    });

    let cached = match tokio::time::timeout(state.inner.config.slow_query_after, &mut handle).await {
        Ok(result) => query_response(joined(result)),
        Err(_) => {
            let token = uuid::Uuid::new_v4().to_string();
            let accepted =
                PollAccepted { poll_url: format!("/sessions/{id}/next-batch/{token}"), poll_token: token.clone() };
            *slot.inflight.lock().expect("inflight lock") = Some(Inflight { token, handle });
            Cached { status: StatusCode::ACCEPTED, body: to_value(&accepted) }
        }
    };
    slot.remember(&key, &cached);
    Ok(cached.into_response())
}

async fn poll_batch(
    State(state): State<AppState>,
    Path((id, token)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let slot = state.slot(&id)?;
    let finished = {
        let mut inflight = slot.inflight.lock().expect("inflight lock");
        match inflight.as_ref() {
            Some(i) if i.token == token => {
                if i.handle.is_finished() {
                    inflight.take()
                } else {
                    let accepted =
                        PollAccepted { poll_url: format!("/sessions/{id}/next-batch/{token}"), poll_token: token };
                    return Ok((StatusCode::ACCEPTED, Json(accepted)).into_response());
                }
            }
            _ => None,
        }
    };
    let Some(inflight) = finished else {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "unknown_poll_token", format!("no pending query `{token}`")));
    };
    Ok(query_response(joined(inflight.handle.await)).into_response())
}

async fn submit_labels(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Json<Value>,
) -> Result<Response, ApiError> {
    let slot = state.slot(&id)?;
    let key = idempotency_key(&headers);
    if let Some(cached) = slot.cached(&key) {
        return Ok(cached.into_response());
    }
    let request: LabelsRequest =
        serde_json::from_value(body.0).map_err(|e| ApiError::invalid("invalid_request", e.to_string()))?;
    let clock = state.inner.config.clock.clone();

    let mut runtime = slot.runtime.lock().await;
    let outcome = runtime.session.submit_labels(&slot.pool, &request.labels)?;
    let indices: Vec<usize> = request.labels.keys().copied().collect();
    let (status, remaining, mut events) = match outcome {
        SubmitOutcome::Partial { remaining } => (TaskStatus::PartiallyLabeled, remaining, Vec::new()),
        SubmitOutcome::Completed { iteration_number } => (
            TaskStatus::Complete,
            Vec::new(),
            vec![SessionEvent::IterationCommitted {
                iteration: iteration_number,
                labeled_count: runtime.session.history.labeled_count(),
            }],
        ),
    };
    let iteration =
        runtime.session.pending.as_ref().map_or(runtime.session.history.iterations.len(), |p| p.iteration_number);
    events.insert(0, SessionEvent::LabelsSubmitted { iteration, indices });
    persist(&runtime, clock.as_ref(), &events)?;
    slot.publish(&runtime.session);

    let response = LabelsResponse {
        status,
        remaining,
        labeled_count: runtime.session.history.labeled_count(),
        session_status: runtime.session.status(),
    };
    let cached = Cached { status: StatusCode::OK, body: to_value(&response) };
    slot.remember(&key, &cached);
    Ok(cached.into_response())
}
