//! HTTP front for [`ReviewStore`].
//!
//! | method | path | body | reply |
//! |---|---|---|---|
//! | POST | `/api/sessions` | `{"evaluator_id", "seed"}` | session status |
//! | GET | `/api/sessions/{id}` | | session status |
//! | GET | `/api/sessions/{id}/next` | | `{"status":"pair",...}` or `{"status":"done",...}` |
//! | POST | `/api/sessions/{id}/judgments` | `{"pair_id", "verdict"}` | acknowledgment |
//! | GET | `/api/sessions/{id}/summary` | | counts and human score of the session |
//! | GET | `/api/score?group=&annotator=&language=&config_digest=&evaluator=` | | score groups |
//!
//! Errors come back as `{"error": kind, "message": text}` with 404 for
//! unknown sessions, 409 for duplicate judgments and 422 for other
//! rejected input. Everything else is served from the static directory.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use phrasebreak_core::review::{
    Ack, NextPair, ReviewSession, ReviewStore, ScoreFilter, ScoreGroup, ScoreGrouping, SessionSummary, Verdict,
};
use phrasebreak_core::Error;

pub struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

#[derive(Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind) = match &self.0 {
            Error::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            Error::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            Error::Validation(_) | Error::Contract(_) => (StatusCode::UNPROCESSABLE_ENTITY, "validation"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            log::error!("{}", self.0);
        }
        let body = ErrorBody {
            error: kind.to_owned(),
            message: self.0.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Serialize, Deserialize)]
pub struct CreateSession {
    pub evaluator_id: String,
    #[serde(default)]
    pub seed: u64,
}

/// Session state as shown to the evaluator; pair ids are left out.
#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct SessionStatus {
    pub session_id: String,
    pub evaluator_id: String,
    pub cursor: usize,
    pub total: usize,
}

impl From<ReviewSession> for SessionStatus {
    fn from(s: ReviewSession) -> Self {
        SessionStatus {
            total: s.pair_ids.len(),
            session_id: s.session_id,
            evaluator_id: s.evaluator_id,
            cursor: s.cursor,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SubmitJudgment {
    pub pair_id: String,
    pub verdict: Verdict,
}

#[derive(Debug, Default, Deserialize)]
pub struct ScoreQuery {
    #[serde(default)]
    pub group: Option<ScoreGrouping>,
    pub annotator: Option<String>,
    pub language: Option<String>,
    pub config_digest: Option<String>,
    pub evaluator: Option<String>,
}

type Shared = Arc<ReviewStore>;

async fn create_session(
    State(store): State<Shared>,
    Json(req): Json<CreateSession>,
) -> Result<(StatusCode, Json<SessionStatus>), ApiError> {
    let s = store.create_session(&req.evaluator_id, req.seed)?;
    Ok((StatusCode::CREATED, Json(s.into())))
}

async fn session(State(store): State<Shared>, Path(id): Path<String>) -> ApiResult<SessionStatus> {
    Ok(Json(store.session(&id)?.into()))
}

async fn next_pair(State(store): State<Shared>, Path(id): Path<String>) -> ApiResult<NextPair> {
    Ok(Json(store.next_pair(&id)?))
}

async fn submit(
    State(store): State<Shared>,
    Path(id): Path<String>,
    Json(req): Json<SubmitJudgment>,
) -> ApiResult<Ack> {
    Ok(Json(store.submit_judgment(&id, &req.pair_id, req.verdict)?))
}

async fn summary(State(store): State<Shared>, Path(id): Path<String>) -> ApiResult<SessionSummary> {
    Ok(Json(store.session_summary(&id)?))
}

async fn score(State(store): State<Shared>, Query(q): Query<ScoreQuery>) -> ApiResult<Vec<ScoreGroup>> {
    let filter = ScoreFilter {
        annotator: q.annotator,
        language: q.language,
        config_digest: q.config_digest,
        evaluator: q.evaluator,
    };
    Ok(Json(store.score_report(&filter, q.group.unwrap_or_default())?))
}

pub fn router(store: Shared, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(session))
        .route("/api/sessions/{id}/next", get(next_pair))
        .route("/api/sessions/{id}/judgments", post(submit))
        .route("/api/sessions/{id}/summary", get(summary))
        .route("/api/score", get(score))
        .with_state(store);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until Ctrl-C.
pub async fn serve(addr: SocketAddr, store: Shared, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("review service listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(store, static_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
