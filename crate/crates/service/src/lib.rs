//! JSON-over-HTTP completion service.
//!
//! Handlers share one immutable [`Snapshot`] behind an `RwLock`; installing a
//! new snapshot swaps it atomically between requests. Model work runs on the
//! blocking pool so slow requests do not stall the reactor.

use std::future::Future;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::Instant;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, CorsLayer};

use wlac::corpus::tokenize;
use wlac::datagen::{RomanizationTable, WlacExample};
use wlac::decoding::{translate, Predictor, WordIndex};
use wlac::model::{file_hash, ModelBundle};

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompleteRequest {
    pub source: String,
    #[serde(default)]
    pub left_context: String,
    #[serde(default)]
    pub right_context: String,
    pub typed: String,
    #[serde(default)]
    pub k: Option<usize>,
}

impl CompleteRequest {
    fn example(&self) -> WlacExample {
        WlacExample {
            source: tokenize(&self.source),
            left_context: tokenize(&self.left_context),
            right_context: tokenize(&self.right_context),
            typed: self.typed.clone(),
            label: String::new(),
            full_target: Vec::new(),
            pair_id: "request".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateJson {
    pub word: String,
    pub score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompleteResponse {
    pub candidates: Vec<CandidateJson>,
    pub model_id: String,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HypothesisJson {
    pub text: String,
    pub tokens: Vec<String>,
    pub score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranslateResponse {
    pub hypotheses: Vec<HypothesisJson>,
    pub model_id: String,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HealthResponse {
    /// `loading` or `ready`.
    pub status: String,
    pub model_id: Option<String>,
    pub uptime_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub category: String,
    pub message: String,
    /// Set on internal failures so logs can be matched to responses.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: ErrorBody,
}

/// A loaded checkpoint and everything derived from it once.
pub struct Snapshot {
    pub bundle: ModelBundle,
    pub index: WordIndex,
    pub table: Option<RomanizationTable>,
    /// SHA-256 of the checkpoint's model file.
    pub model_id: String,
}

impl Snapshot {
    pub fn new(bundle: ModelBundle, table: Option<RomanizationTable>, model_id: String) -> Self {
        let index = WordIndex::new(&bundle.codec.vocab, table.as_ref());
        Self {
            bundle,
            index,
            table,
            model_id,
        }
    }

    pub fn load(dir: impl AsRef<Path>, table: Option<RomanizationTable>) -> wlac::Result<Self> {
        let dir = dir.as_ref();
        let bundle = ModelBundle::load(dir)?;
        let model_id = file_hash(ModelBundle::model_path(dir))?;
        Ok(Self::new(bundle, table, model_id))
    }

    fn predictor(&self) -> Predictor<'_> {
        Predictor::with_index(&self.bundle.model, &self.bundle.codec, &self.index, self.table.as_ref())
    }
}

pub struct AppState {
    snapshot: RwLock<Option<Arc<Snapshot>>>,
    started: Instant,
}

impl Default for AppState {
    fn default() -> Self {
        Self {
            snapshot: RwLock::new(None),
            started: Instant::now(),
        }
    }
}

impl AppState {
    pub fn with_snapshot(snapshot: Snapshot) -> Self {
        let state = Self::default();
        state.install(snapshot);
        state
    }

    /// Replaces the served model; requests already running keep the old one.
    pub fn install(&self, snapshot: Snapshot) {
        log::info!("serving model {}", snapshot.model_id);
        *self.snapshot.write().expect("snapshot lock") = Some(Arc::new(snapshot));
    }

    pub fn current(&self) -> Option<Arc<Snapshot>> {
        self.snapshot.read().expect("snapshot lock").clone()
    }
}

/// Loads a checkpoint on the blocking pool and installs it when done.
pub fn load_in_background(
    state: Arc<AppState>,
    dir: PathBuf,
    table: Option<RomanizationTable>,
) -> tokio::task::JoinHandle<wlac::Result<()>> {
    tokio::task::spawn_blocking(move || {
        let snapshot = Snapshot::load(&dir, table)?;
        state.install(snapshot);
        Ok(())
    })
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, category: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                category: category.into(),
                message: message.into(),
                id: None,
            },
        }
    }

    fn internal(detail: impl std::fmt::Display) -> Self {
        let id = format!("{:016x}", rand::random::<u64>());
        log::error!("internal error {id}: {detail}");
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            body: ErrorBody {
                category: "internal".into(),
                message: "internal error".into(),
                id: Some(id),
            },
        }
    }
}

impl From<wlac::Error> for ApiError {
    fn from(e: wlac::Error) -> Self {
        match e {
            wlac::Error::Capability(_) => ApiError::new(StatusCode::CONFLICT, e.category(), e.to_string()),
            wlac::Error::Invalid(_) | wlac::Error::Encoding(_) => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.category(), e.to_string())
            }
            other => ApiError::internal(other),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorResponse { error: self.body })).into_response()
    }
}

fn ready(state: &AppState) -> Result<Arc<Snapshot>, ApiError> {
    state
        .current()
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "loading", "model is still loading"))
}

fn validate(req: &CompleteRequest) -> Result<usize, ApiError> {
    if req.typed.is_empty() {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid", "typed must not be empty"));
    }
    match req.k.unwrap_or(DEFAULT_K) {
        0 => Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid", "k must be at least 1")),
        k => Ok(k),
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> wlac::Result<T> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?.map_err(ApiError::from)
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

async fn complete(
    State(state): State<Arc<AppState>>,
    body: Result<Json<CompleteRequest>, JsonRejection>,
) -> Result<Json<CompleteResponse>, ApiError> {
    let t = Instant::now();
    let Json(req) = body?;
    let k = validate(&req)?;
    let snap = ready(&state)?;
    let model_id = snap.model_id.clone();
    let preds = blocking(move || snap.predictor().predict(&req.example(), k)).await?;
    Ok(Json(CompleteResponse {
        candidates: preds
            .candidates
            .into_iter()
            .map(|c| CandidateJson {
                word: c.word,
                score: c.score,
            })
            .collect(),
        model_id,
        latency_ms: elapsed_ms(t),
    }))
}

async fn translate_handler(
    State(state): State<Arc<AppState>>,
    body: Result<Json<CompleteRequest>, JsonRejection>,
) -> Result<Json<TranslateResponse>, ApiError> {
    let t = Instant::now();
    let Json(req) = body?;
    let beams = validate(&req)?;
    let snap = ready(&state)?;
    if !snap.bundle.model.has_mt() {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "capability",
            "the loaded checkpoint has no MT decoder",
        ));
    }
    let model_id = snap.model_id.clone();
    let hyps = blocking(move || translate(&snap.bundle.model, &snap.bundle.codec, &req.example(), beams)).await?;
    Ok(Json(TranslateResponse {
        hypotheses: hyps
            .hypotheses
            .into_iter()
            .map(|h| HypothesisJson {
                text: h.tokens.join(" "),
                tokens: h.tokens,
                score: h.score,
            })
            .collect(),
        model_id,
        latency_ms: elapsed_ms(t),
    }))
}

async fn health(State(state): State<Arc<AppState>>) -> Json<HealthResponse> {
    let snap = state.current();
    Json(HealthResponse {
        status: if snap.is_some() { "ready" } else { "loading" }.into(),
        model_id: snap.map(|s| s.model_id.clone()),
        uptime_s: state.started.elapsed().as_secs_f64(),
    })
}

/// Routes for the API; `cors_origins` lists the browser origins allowed to
/// call it (empty disables cross-origin access).
pub fn router(state: Arc<AppState>, cors_origins: &[String]) -> Router {
    let app = Router::new()
        .route("/v1/complete", post(complete))
        .route("/v1/translate", post(translate_handler))
        .route("/v1/health", get(health))
        .with_state(state);
    let origins: Vec<HeaderValue> = cors_origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()).collect();
    if origins.is_empty() {
        app
    } else {
        app.layer(
            CorsLayer::new()
                .allow_origin(AllowOrigin::list(origins))
                .allow_methods([axum::http::Method::GET, axum::http::Method::POST])
                .allow_headers([axum::http::header::CONTENT_TYPE]),
        )
    }
}

/// Binds `addr`; fails if the port is taken.
pub async fn bind(addr: SocketAddr) -> std::io::Result<tokio::net::TcpListener> {
    tokio::net::TcpListener::bind(addr).await
}

/// Serves until `shutdown` resolves, then drains in-flight requests.
pub async fn serve(
    listener: tokio::net::TcpListener,
    app: Router,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}
