//! Local HTTP control surface: `GET /config`, `PUT /config`, `GET /health`.

use std::sync::Arc;
use std::time::Instant;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

use super::config::{ConfigError, ConfigHandle, ConfigUpdate};
use super::pipeline::PipelineStats;
use crate::store::RecordStore;

#[derive(Debug, Clone)]
pub struct AdminState {
    pub config: ConfigHandle,
    pub store: Arc<RecordStore>,
    pub stats: Arc<PipelineStats>,
    pub started: Instant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub uptime_s: f64,
    pub processed: u64,
    pub persisted: u64,
    pub rejected: u64,
    pub duplicates: u64,
    pub pending: usize,
    pub synced: usize,
    pub dead_letter: usize,
    pub config_version: u64,
    pub last_error: Option<String>,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(ErrorBody { error: message.into() })).into_response()
}

pub fn router(state: AdminState) -> Router {
    Router::new()
        .route("/config", get(read_config).put(update_config))
        .route("/health", get(health))
        .with_state(state)
}

/// Serves the admin API until `shutdown` resolves.
pub async fn serve_admin_endpoint(
    listener: TcpListener,
    state: AdminState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

async fn read_config(State(s): State<AdminState>) -> Response {
    Json(s.config.snapshot().redacted()).into_response()
}

async fn update_config(
    State(s): State<AdminState>,
    body: Result<Json<ConfigUpdate>, JsonRejection>,
) -> Response {
    let Json(update) = match body {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.body_text()),
    };
    match s.config.submit(update) {
        Ok(cfg) => Json(cfg.redacted()).into_response(),
        Err(ConfigError::Invalid(m)) => error(StatusCode::UNPROCESSABLE_ENTITY, m),
        Err(e) => error(StatusCode::BAD_REQUEST, e.to_string()),
    }
}

async fn health(State(s): State<AdminState>) -> Response {
    let stats = s.stats.snapshot();
    let counts = s.store.counts();
    Json(Health {
        uptime_s: s.started.elapsed().as_secs_f64(),
        processed: stats.processed,
        persisted: stats.persisted,
        rejected: stats.rejected,
        duplicates: stats.duplicates,
        pending: counts.pending,
        synced: counts.synced,
        dead_letter: counts.dead_letter,
        config_version: s.config.version(),
        last_error: stats.last_error,
    })
    .into_response()
}
