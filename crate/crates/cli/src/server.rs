//! HTTP front end of the adjudication workflow.
//!
//! | route                        | body                         |
//! |------------------------------|------------------------------|
//! | `GET /api/next-task?session` | task JSON                    |
//! | `POST /api/decision`         | decision JSON in, `{"status":"ok"}` out |
//! | `GET /api/export`            | `text/csv` ground truth      |
//! | `GET /api/stats`             | counts JSON                  |
//!
//! Errors come back as `{"error": CODE, "message": ...}`.

use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard, PoisonError};

use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hhlink_core::adjudication::{AdjudicationTask, Adjudicator, Decision, Stats};
use hhlink_core::Error;
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;

pub type Shared = Arc<Mutex<Adjudicator>>;

fn lock(s: &Shared) -> MutexGuard<'_, Adjudicator> {
    s.lock().unwrap_or_else(PoisonError::into_inner)
}

pub struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = match &self.0 {
            Error::Exhausted => (StatusCode::NOT_FOUND, "E_EXHAUSTED"),
            Error::UnknownTask(_) => (StatusCode::NOT_FOUND, "E_UNKNOWN_TASK"),
            Error::InvalidIds(_) => (StatusCode::UNPROCESSABLE_ENTITY, "E_INVALID_IDS"),
            Error::ConflictingDecision(_) => (StatusCode::CONFLICT, "E_CONFLICT"),
            e if e.is_validation() => (StatusCode::BAD_REQUEST, "E_VALIDATION"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "E_INTERNAL"),
        };
        if status.is_server_error() {
            log::error!("{}", self.0);
        }
        (status, Json(json!({"error": code, "message": self.0.to_string()}))).into_response()
    }
}

#[derive(Deserialize)]
struct SessionQuery {
    session: String,
}

async fn next_task(State(s): State<Shared>, Query(q): Query<SessionQuery>) -> Result<Json<AdjudicationTask>, ApiError> {
    if q.session.is_empty() {
        return Err(Error::InvalidConfig("empty session".into()).into());
    }
    Ok(Json(lock(&s).next_task(&q.session)?))
}

async fn decision(State(s): State<Shared>, Json(d): Json<Decision>) -> Result<Json<serde_json::Value>, ApiError> {
    lock(&s).submit(d)?;
    Ok(Json(json!({"status": "ok"})))
}

async fn export(State(s): State<Shared>) -> Result<Response, ApiError> {
    let csv = lock(&s).export_csv()?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response())
}

async fn stats(State(s): State<Shared>) -> Result<Json<Stats>, ApiError> {
    Ok(Json(lock(&s).stats()?))
}

pub fn router(state: Shared, ui_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/next-task", get(next_task))
        .route("/api/decision", post(decision))
        .route("/api/export", get(export))
        .route("/api/stats", get(stats))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(adj: Adjudicator, addr: &str, ui_dir: Option<&Path>) -> anyhow::Result<()> {
    let app = router(Arc::new(Mutex::new(adj)), ui_dir);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
