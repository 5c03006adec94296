//! HTTP review service over a [`SnapshotStore`]: run state for clients and
//! the feedback endpoint that releases a parked or blocked pipeline.
//!
//! The service keeps no state of its own. Everything is read from and
//! written to the store, so a restart loses nothing and a pipeline in
//! another process sees submissions as soon as they land.

use std::future::Future;
use std::io;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::thread;

use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use schema_miner::pipeline::{
    validate_run_id, Clock, FeedbackSubmission, PipelineError, Snapshot, SnapshotStore, SystemClock,
};
use schema_miner::prompt::StageId;
use schema_miner::schema::diff;
use serde_json::{json, Value};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tower_http::services::ServeDir;

pub const DEFAULT_BIND: &str = "127.0.0.1:8787";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    /// Required on mutating requests when set.
    pub token: Option<String>,
    /// Built review UI, served at `/`.
    pub ui_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: DEFAULT_BIND.parse().unwrap(),
            token: None,
            ui_dir: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("cannot bind {addr}: {source}")]
    BindFailure {
        addr: SocketAddr,
        #[source]
        source: io::Error,
    },
    #[error("refusing to bind non-loopback address {0} without an auth token")]
    TokenRequired(SocketAddr),
    #[error("server error: {0}")]
    Io(#[from] io::Error),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::BindFailure { .. } => "BindFailure",
            ServiceError::TokenRequired(_) => "TokenRequired",
            ServiceError::Io(_) => "ServiceIo",
        }
    }
}

struct AppState {
    store: SnapshotStore,
    token: Option<String>,
    clock: Arc<dyn Clock>,
}

type Shared = Arc<AppState>;

/// JSON error response: `{"error": {"code", "message", "position"?}}`.
struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({"error": {"code": code, "message": message.into()}}),
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let status = match &e {
            PipelineError::UnknownRun(_) => StatusCode::NOT_FOUND,
            PipelineError::InvalidRunId(_) => StatusCode::BAD_REQUEST,
            PipelineError::NoPendingTicket { .. }
            | PipelineError::StaleTicket { .. }
            | PipelineError::FeedbackAlreadySubmitted { .. } => StatusCode::CONFLICT,
            PipelineError::FeedbackChannelMismatch(_)
            | PipelineError::InvalidEditedSchema(_)
            | PipelineError::InvalidFeedback(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let mut err = ApiError::new(status, e.code(), e.to_string());
        if let PipelineError::InvalidEditedSchema(schema_err) = &e {
            if let Some(pos) = schema_err.position() {
                err.body["error"]["position"] = json!(pos);
            }
        }
        err
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))?
}

fn known_run(store: &SnapshotStore, run_id: &str) -> Result<(), ApiError> {
    validate_run_id(run_id)?;
    if !store.run_exists(run_id) {
        return Err(PipelineError::UnknownRun(run_id.to_string()).into());
    }
    Ok(())
}

fn parse_stage(stage: &str) -> Result<StageId, ApiError> {
    stage
        .parse()
        .map_err(|e: String| ApiError::new(StatusCode::BAD_REQUEST, "InvalidStage", e))
}

fn snapshot_meta(s: &Snapshot) -> Value {
    json!({
        "run_id": s.run_id,
        "stage": s.stage,
        "iteration": s.iteration,
        "source_doc": s.source_doc,
        "feedback_applied": s.feedback_applied,
        "llm_attempts": s.llm_attempts,
        "created_at": s.created_at,
        "prompt": s.prompt,
    })
}

async fn health() -> &'static str {
    "ok"
}

async fn list_runs(State(st): State<Shared>) -> ApiResult {
    blocking(move || {
        let runs = st.store.list_runs()?;
        Ok(Json(json!({ "runs": runs })))
    })
    .await
}

async fn get_run(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult {
    blocking(move || {
        known_run(&st.store, &id)?;
        let manifest = st.store.load_manifest(&id)?;
        let pending = st.store.pending_ticket(&id)?.is_some();
        Ok(Json(json!({ "run": manifest, "pending_review": pending })))
    })
    .await
}

async fn list_snapshots(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult {
    blocking(move || {
        known_run(&st.store, &id)?;
        let snaps: Vec<Value> = st.store.list_snapshots(&id)?.iter().map(snapshot_meta).collect();
        Ok(Json(json!({ "snapshots": snaps })))
    })
    .await
}

fn load_snapshot(store: &SnapshotStore, id: &str, stage: StageId, iteration: u32) -> Result<Snapshot, ApiError> {
    store.load_snapshot(id, stage, iteration)?.ok_or_else(|| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "UnknownSnapshot",
            format!("run {id} has no snapshot {stage}/{iteration}"),
        )
    })
}

async fn get_snapshot(State(st): State<Shared>, Path((id, stage, iteration)): Path<(String, String, u32)>) -> ApiResult {
    blocking(move || {
        known_run(&st.store, &id)?;
        let snap = load_snapshot(&st.store, &id, parse_stage(&stage)?, iteration)?;
        let mut body = snapshot_meta(&snap);
        body["schema"] = json!(snap.schema);
        Ok(Json(body))
    })
    .await
}

async fn pending_review(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult {
    blocking(move || {
        known_run(&st.store, &id)?;
        let ticket = st.store.pending_ticket(&id)?;
        Ok(Json(json!({ "ticket": ticket })))
    })
    .await
}

async fn get_diff(
    State(st): State<Shared>,
    Path((id, stage, a, b)): Path<(String, String, u32, u32)>,
) -> ApiResult {
    blocking(move || {
        known_run(&st.store, &id)?;
        let stage = parse_stage(&stage)?;
        let old = load_snapshot(&st.store, &id, stage, a)?;
        let new = load_snapshot(&st.store, &id, stage, b)?;
        Ok(Json(json!({
            "stage": stage,
            "from": a,
            "to": b,
            "diff": diff(&old.schema, &new.schema),
        })))
    })
    .await
}

fn authorized(st: &AppState, headers: &HeaderMap) -> bool {
    let Some(token) = &st.token else { return true };
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .is_some_and(|given| given.trim() == token)
}

async fn submit_feedback(State(st): State<Shared>, Path(id): Path<String>, headers: HeaderMap, body: String) -> ApiResult {
    if !authorized(&st, &headers) {
        return Err(ApiError::new(StatusCode::UNAUTHORIZED, "Unauthorized", "missing or wrong bearer token"));
    }
    let submission: FeedbackSubmission = serde_json::from_str(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "InvalidRequest", e.to_string()))?;
    blocking(move || {
        known_run(&st.store, &id)?;
        let (stage, iteration, feedback) = submission.into_feedback(st.clock.now())?;
        st.store.submit_feedback(&id, stage, iteration, &feedback)?;
        tracing::info!(run = %id, %stage, iteration, "feedback accepted");
        Ok(Json(json!({
            "accepted": true,
            "run_id": id,
            "stage": stage,
            "iteration": iteration,
        })))
    })
    .await
}

/// All API routes, plus the UI directory as a fallback when configured.
pub fn router(store: SnapshotStore, cfg: &ServiceConfig, clock: Arc<dyn Clock>) -> Router {
    let state = Arc::new(AppState {
        store,
        token: cfg.token.clone(),
        clock,
    });
    let api = Router::new()
        .route("/health", get(health))
        .route("/runs", get(list_runs))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/snapshots", get(list_snapshots))
        .route("/runs/{id}/snapshots/{stage}/{iter}", get(get_snapshot))
        .route("/runs/{id}/pending-review", get(pending_review))
        .route("/runs/{id}/feedback", post(submit_feedback))
        .route("/runs/{id}/diff/{stage}/{a}/{b}", get(get_diff))
        .with_state(state);
    match &cfg.ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Binds the listener, refusing remote binds that lack a token.
pub async fn bind(cfg: &ServiceConfig) -> Result<TcpListener, ServiceError> {
    if !cfg.bind.ip().is_loopback() && cfg.token.as_deref().is_none_or(str::is_empty) {
        return Err(ServiceError::TokenRequired(cfg.bind));
    }
    TcpListener::bind(cfg.bind).await.map_err(|source| ServiceError::BindFailure {
        addr: cfg.bind,
        source,
    })
}

/// Serves until `shutdown` resolves; in-flight requests are completed.
pub async fn serve(
    cfg: ServiceConfig,
    store: SnapshotStore,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServiceError> {
    let listener = bind(&cfg).await?;
    tracing::info!(addr = %listener.local_addr()?, "review service listening");
    let app = router(store, &cfg, Arc::new(SystemClock));
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await?;
    Ok(())
}

/// A service running on its own thread and runtime.
pub struct ServiceHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<thread::JoinHandle<Result<(), ServiceError>>>,
}

impl ServiceHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stops accepting connections, drains in-flight requests and joins.
    pub fn shutdown(mut self) -> Result<(), ServiceError> {
        self.stop()
    }

    fn stop(&mut self) -> Result<(), ServiceError> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().unwrap_or(Ok(())),
            None => Ok(()),
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        let _ = self.stop();
    }
}

/// Starts the service in the background. Port 0 picks a free port.
pub fn spawn(cfg: ServiceConfig, store: SnapshotStore, clock: Arc<dyn Clock>) -> Result<ServiceHandle, ServiceError> {
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
    let listener = rt.block_on(bind(&cfg))?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let thread = thread::spawn(move || {
        rt.block_on(async move {
            let app = router(store, &cfg, clock);
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
                .map_err(ServiceError::from)
        })
    });
    Ok(ServiceHandle {
        addr,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
