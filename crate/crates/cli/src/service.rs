//! Stateless completion web service.
//!
//! ```text
//! POST /v1/completions   JSON CompletionRequest  -> CompletionResponse
//! GET  /v1/health                                -> Health
//! ```
//!
//! Every response body carries `"schema": "v1"`. Errors are
//! `{"schema":"v1","error":{"code":..,"message":..}}` with status 400 for
//! malformed requests and 429 (plus `Retry-After`) when all request slots
//! are busy. All responses allow any origin.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use wholeline_core::decoder::{CallStats, Mode};
use wholeline_core::pipeline::{Alternative, DecodeSettings, Engine, PipelineError};
use wholeline_core::suggest::{Suggestion, WireTrie};
use wholeline_core::Language;

pub const SCHEMA: &str = "v1";
pub const MAX_CONTEXT_CHARS: usize = 100_000;
pub const BEAM_WIDTH_RANGE: (usize, usize) = (1, 32);
pub const MAX_LEN_RANGE: (usize, usize) = (1, 64);
/// Seconds suggested to clients refused for overload.
pub const RETRY_AFTER_SECS: u64 = 1;

fn default_beam_width() -> usize {
    DecodeSettings::default().beam_width
}
fn default_max_len() -> usize {
    DecodeSettings::default().max_len
}
fn default_alpha() -> f64 {
    DecodeSettings::default().alpha
}
fn default_kappa() -> f64 {
    DecodeSettings::default().kappa
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompletionRequest {
    pub context: String,
    pub language: Language,
    #[serde(default = "default_beam_width")]
    pub beam_width: usize,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default)]
    pub mode: Mode,
}

impl CompletionRequest {
    pub fn validate(&self) -> Result<DecodeSettings, String> {
        let chars = self.context.chars().count();
        if chars > MAX_CONTEXT_CHARS {
            return Err(format!("context has {chars} characters, limit is {MAX_CONTEXT_CHARS}"));
        }
        let in_range = |v: usize, (lo, hi): (usize, usize)| (lo..=hi).contains(&v);
        if !in_range(self.beam_width, BEAM_WIDTH_RANGE) {
            return Err(format!("beam_width must be in {BEAM_WIDTH_RANGE:?}, got {}", self.beam_width));
        }
        if !in_range(self.max_len, MAX_LEN_RANGE) {
            return Err(format!("max_len must be in {MAX_LEN_RANGE:?}, got {}", self.max_len));
        }
        if !(self.alpha.is_finite() && (0.0..=1.0).contains(&self.alpha)) {
            return Err(format!("alpha must be in [0, 1], got {}", self.alpha));
        }
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            return Err(format!("kappa must be positive, got {}", self.kappa));
        }
        Ok(DecodeSettings {
            beam_width: self.beam_width,
            max_len: self.max_len,
            alpha: self.alpha,
            kappa: self.kappa,
            mode: self.mode,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionOut {
    pub subtokens: Vec<String>,
    /// Per-subtoken natural-log probabilities.
    pub scores: Vec<f64>,
    pub log_prob: f64,
    /// Probability normalized over the returned suggestions.
    pub score: f64,
    pub display_text: String,
    pub placeholders: Vec<SpanOut>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanOut {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestOut {
    pub display_text: String,
    pub subtokens: Vec<String>,
    pub placeholders: Vec<SpanOut>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallStatsOut {
    pub model_calls: usize,
    pub steps: usize,
    pub mode: Mode,
}

impl From<CallStats> for CallStatsOut {
    fn from(s: CallStats) -> Self {
        CallStatsOut {
            model_calls: s.model_calls,
            steps: s.steps,
            mode: s.mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub schema: String,
    /// Best first.
    pub suggestions: Vec<SuggestionOut>,
    /// Early-stopped greedy walk of the trie; what an editor shows.
    pub best: BestOut,
    pub trie: WireTrie,
    pub call_stats: CallStatsOut,
    pub latency_ms: f64,
    pub truncated_context: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub schema: String,
    pub status: String,
    pub model: String,
    pub digest: String,
    pub vocab_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub schema: String,
    pub error: ErrorBody,
}

fn spans(s: &[wholeline_core::suggest::Span]) -> Vec<SpanOut> {
    s.iter().map(|s| SpanOut { start: s.start, end: s.end }).collect()
}

fn suggestion_out(a: &Alternative) -> SuggestionOut {
    SuggestionOut {
        subtokens: a.subtokens.clone(),
        scores: a.step_log_probs.clone(),
        log_prob: a.log_prob,
        score: a.probability,
        display_text: a.text.clone(),
        placeholders: spans(&a.placeholders),
    }
}

/// Runs one request against the engine; used by the handler and `complete`.
pub fn respond(engine: &Engine, request: &CompletionRequest) -> Result<CompletionResponse, ApiError> {
    let settings = request.validate().map_err(ApiError::invalid)?;
    let out = engine
        .complete(&request.context, request.language, &settings)
        .map_err(|e| match e {
            PipelineError::Lex { .. } | PipelineError::Language(_) | PipelineError::Vocab(_) => ApiError::invalid(e.to_string()),
            other => ApiError::internal(other.to_string()),
        })?;
    let Suggestion { text, placeholders } = out.suggestion;
    Ok(CompletionResponse {
        schema: SCHEMA.into(),
        suggestions: out.alternatives.iter().map(suggestion_out).collect(),
        best: BestOut {
            display_text: text,
            subtokens: out.subtokens,
            placeholders: spans(&placeholders),
        },
        trie: out.trie.to_wire(),
        call_stats: out.stats.into(),
        latency_ms: out.latency_ms,
        truncated_context: out.truncated_context,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn invalid(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            code: "invalid_request",
            message: message.into(),
        }
    }

    fn internal(message: String) -> Self {
        ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "internal",
            message,
        }
    }

    fn overloaded() -> Self {
        ApiError {
            status: StatusCode::TOO_MANY_REQUESTS,
            code: "overloaded",
            message: "all request slots are busy".into(),
        }
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for ApiError {}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorResponse {
            schema: SCHEMA.into(),
            error: ErrorBody {
                code: self.code.into(),
                message: self.message,
            },
        };
        let mut response = (self.status, Json(body)).into_response();
        if self.status == StatusCode::TOO_MANY_REQUESTS {
            response
                .headers_mut()
                .insert(header::RETRY_AFTER, HeaderValue::from(RETRY_AFTER_SECS));
        }
        response
    }
}

#[derive(Clone)]
struct AppState {
    engine: Arc<Engine>,
    slots: Arc<Semaphore>,
    health: Arc<Health>,
}

/// Builds the router. At most `max_concurrent` completions run at once;
/// further requests are refused rather than queued.
pub fn router(engine: Engine, max_concurrent: usize) -> Router {
    let health = Health {
        schema: SCHEMA.into(),
        status: "ok".into(),
        model: engine.name(),
        digest: engine.digest(),
        vocab_size: engine.vocab.size(),
    };
    let state = AppState {
        engine: Arc::new(engine),
        slots: Arc::new(Semaphore::new(max_concurrent)),
        health: Arc::new(health),
    };
    Router::new()
        .route("/v1/health", get(health_handler))
        .route("/v1/completions", axum::routing::post(completions).options(preflight))
        .layer(axum::middleware::map_response(allow_any_origin))
        .with_state(state)
}

async fn allow_any_origin(mut response: Response) -> Response {
    let headers = response.headers_mut();
    headers.insert(header::ACCESS_CONTROL_ALLOW_ORIGIN, HeaderValue::from_static("*"));
    headers.insert(header::ACCESS_CONTROL_ALLOW_METHODS, HeaderValue::from_static("GET, POST, OPTIONS"));
    headers.insert(header::ACCESS_CONTROL_ALLOW_HEADERS, HeaderValue::from_static("content-type"));
    response
}

async fn preflight() -> StatusCode {
    StatusCode::NO_CONTENT
}

async fn health_handler(State(state): State<AppState>) -> Json<Health> {
    Json((*state.health).clone())
}

async fn completions(State(state): State<AppState>, body: Bytes) -> Result<Json<CompletionResponse>, ApiError> {
    let request: CompletionRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::invalid(format!("malformed request body: {e}")))?;
    let permit = state.slots.clone().try_acquire_owned().map_err(|_| ApiError::overloaded())?;
    let engine = state.engine.clone();
    let response = tokio::task::spawn_blocking(move || {
        let _permit = permit;
        respond(&engine, &request)
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;
    log::info!(
        "completion: {} calls, {:.1} ms, truncated={}",
        response.call_stats.model_calls,
        response.latency_ms,
        response.truncated_context
    );
    Ok(Json(response))
}

/// Serves until interrupted.
pub async fn serve(engine: Engine, addr: SocketAddr, max_concurrent: usize) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(engine, max_concurrent))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
