//! HTTP service.
//!
//! | route | |
//! |---|---|
//! | `POST /research` | run the pipeline, stream events as NDJSON |
//! | `GET /config` | effective configuration, without secrets |
//! | `GET /reports?limit=N` | newest reports first |
//! | `GET /reports/search?q=..&k=N` | semantic history search |
//! | `GET /reports/{id}` | stored report payload |

use std::collections::HashMap;
use std::convert::Infallible;
use std::future::Future;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::mpsc;
use tower_http::cors::CorsLayer;

use crate::agents::{run_pipeline, PipelineDeps};
use crate::config::{ConfigOverrides, SafeConfig, Settings};
use crate::domain::{redact, PipelineEvent, RuntimeConfig, Secret};
use crate::embeddings::{Embedder, TextEmbedder};
use crate::llm::{CompletionBackend, LlmClient};
use crate::search::{PaperSearch, ScholarSearch};
use crate::store::{ReportStore, StoreError};

pub const NDJSON: &str = "application/x-ndjson";
pub const DEFAULT_LIST_LIMIT: usize = 20;
pub const DEFAULT_SEARCH_K: usize = 5;

/// Shared server state. `embedder`, when set, replaces the per-config
/// embedder for both persistence and history search.
#[derive(Clone)]
pub struct AppState {
    pub config: RuntimeConfig,
    pub search: Arc<dyn PaperSearch>,
    pub llm: Arc<dyn CompletionBackend>,
    pub store: ReportStore,
    pub embedder: Option<Arc<dyn TextEmbedder>>,
    pub secrets: Vec<Secret>,
}

impl AppState {
    /// Live retrieval and provider clients configured from `settings`.
    pub fn from_settings(settings: &Settings, store: ReportStore) -> Self {
        AppState {
            config: settings.runtime.clone(),
            search: Arc::new(ScholarSearch::new(settings.search_endpoints())),
            llm: Arc::new(LlmClient::default()),
            store,
            embedder: None,
            secrets: settings.secrets(),
        }
    }

    fn deps(&self) -> PipelineDeps {
        PipelineDeps {
            search: self.search.clone(),
            llm: self.llm.clone(),
            store: Some(self.store.clone()),
            embedder: self.embedder.clone(),
        }
    }
}

#[derive(Debug, Deserialize)]
struct ResearchBody {
    question: String,
    #[serde(default)]
    overrides: Option<ConfigOverrides>,
}

fn error_response(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn event_line(event: &PipelineEvent, secrets: &[Secret]) -> String {
    let raw = serde_json::to_string(event).expect("event serializes");
    let mut line = redact(&raw, secrets);
    line.push('\n');
    line
}

async fn research(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let req: ResearchBody = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, format!("invalid request body: {e}")),
    };
    let question = req.question.trim().to_string();
    if question.is_empty() {
        return error_response(StatusCode::BAD_REQUEST, "question must not be empty");
    }
    let overrides = req.overrides.unwrap_or_default();
    let config = match overrides.apply(&state.config) {
        Ok(c) => c,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, e.to_string()),
    };
    let mut secrets = state.secrets.clone();
    secrets.extend(overrides.api_key());

    let (tx, rx) = mpsc::unbounded_channel::<PipelineEvent>();
    let deps = state.deps();
    tokio::spawn(async move {
        // The report (or failure) is already delivered through the events.
        let _ = run_pipeline(&question, &config, &deps, &tx).await;
    });

    let stream = futures::stream::unfold((rx, false), move |(mut rx, finished)| {
        let secrets = secrets.clone();
        async move {
            if finished {
                return None;
            }
            let event = rx.recv().await?;
            let line = event_line(&event, &secrets);
            Some((Ok::<_, Infallible>(line), (rx, event.kind.is_terminal())))
        }
    });
    Response::builder()
        .status(StatusCode::OK)
        .header(header::CONTENT_TYPE, NDJSON)
        .header(header::CACHE_CONTROL, "no-cache")
        .body(Body::from_stream(stream))
        .expect("valid response")
}

async fn config(State(state): State<Arc<AppState>>) -> Json<SafeConfig> {
    Json(SafeConfig::from(&state.config))
}

fn parse_count(params: &HashMap<String, String>, name: &str, default: usize) -> Result<usize, String> {
    match params.get(name).map(|s| s.trim()).filter(|s| !s.is_empty()) {
        None => Ok(default),
        Some(raw) => raw
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| format!("{name} must be a positive integer")),
    }
}

fn store_error(e: StoreError) -> Response {
    match e {
        StoreError::NotFound(id) => error_response(StatusCode::NOT_FOUND, format!("report not found: {id}")),
        other => {
            tracing::error!(error = %other, "store error");
            error_response(StatusCode::INTERNAL_SERVER_ERROR, "storage error")
        }
    }
}

async fn list_reports(State(state): State<Arc<AppState>>, Query(params): Query<HashMap<String, String>>) -> Response {
    let limit = match parse_count(&params, "limit", DEFAULT_LIST_LIMIT) {
        Ok(n) => n,
        Err(m) => return error_response(StatusCode::BAD_REQUEST, m),
    };
    match state.store.list_reports(limit) {
        Ok(reports) => Json(reports).into_response(),
        Err(e) => store_error(e),
    }
}

async fn search_reports(State(state): State<Arc<AppState>>, Query(params): Query<HashMap<String, String>>) -> Response {
    let Some(q) = params.get("q").map(|s| s.trim()).filter(|s| !s.is_empty()) else {
        return error_response(StatusCode::BAD_REQUEST, "query parameter q is required");
    };
    let k = match parse_count(&params, "k", DEFAULT_SEARCH_K) {
        Ok(n) => n,
        Err(m) => return error_response(StatusCode::BAD_REQUEST, m),
    };
    let hits = match &state.embedder {
        Some(e) => state.store.search_reports(q, k, e.as_ref()).await,
        None => {
            let embedder = Embedder::new(state.config.clone());
            state.store.search_reports(q, k, &embedder).await
        }
    };
    Json(hits).into_response()
}

async fn get_report(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    match state.store.get_report_payload(&id) {
        Ok(payload) => ([(header::CONTENT_TYPE, "application/json")], payload).into_response(),
        Err(e) => store_error(e),
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/research", post(research))
        .route("/config", get(config))
        .route("/reports", get(list_reports))
        .route("/reports/search", get(search_reports))
        .route("/reports/{id}", get(get_report))
        .layer(CorsLayer::permissive())
        .with_state(Arc::new(state))
}

/// Serves until `shutdown` resolves. In-flight streams run to their
/// terminal event before the call returns.
pub async fn serve(
    listener: TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}
