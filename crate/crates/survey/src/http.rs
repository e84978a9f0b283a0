//! JSON-over-HTTP front of [`SurveyService`].

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::model::CreateSession;
use crate::service::{SurveyError, SurveyService};

type Shared = Arc<SurveyService>;

impl SurveyError {
    pub fn status(&self) -> StatusCode {
        match self {
            SurveyError::DuplicateSession(_)
            | SurveyError::OutOfOrder { .. }
            | SurveyError::Incomplete(_)
            | SurveyError::PreparationPending => StatusCode::CONFLICT,
            SurveyError::InvalidLabel { .. } | SurveyError::BadRequest(_) => StatusCode::UNPROCESSABLE_ENTITY,
            SurveyError::NoConsent(_) | SurveyError::OutsideWindow { .. } | SurveyError::RoleDayTaken { .. } => {
                StatusCode::FORBIDDEN
            }
            SurveyError::SessionClosed(_) => StatusCode::GONE,
            SurveyError::UnknownSession(_) | SurveyError::UnknownScale(_) => StatusCode::NOT_FOUND,
            SurveyError::TooEarly { .. } => StatusCode::TOO_EARLY,
            SurveyError::Store(psymetric_core::report::StoreError::Duplicate(_)) => StatusCode::CONFLICT,
            SurveyError::Store(_) | SurveyError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    /// Stable machine-readable name.
    pub fn code(&self) -> &'static str {
        match self {
            SurveyError::NoConsent(_) => "no_consent",
            SurveyError::OutsideWindow { .. } => "outside_window",
            SurveyError::RoleDayTaken { .. } => "role_day_taken",
            SurveyError::DuplicateSession(_) => "duplicate_session",
            SurveyError::SessionClosed(_) => "session_closed",
            SurveyError::OutOfOrder { .. } => "out_of_order",
            SurveyError::InvalidLabel { .. } => "invalid_label",
            SurveyError::Incomplete(_) => "incomplete",
            SurveyError::PreparationPending => "preparation_pending",
            SurveyError::TooEarly { .. } => "too_early",
            SurveyError::UnknownSession(_) => "unknown_session",
            SurveyError::UnknownScale(_) => "unknown_scale",
            SurveyError::BadRequest(_) => "bad_request",
            SurveyError::Store(_) => "store",
            SurveyError::Internal(_) => "internal",
        }
    }
}

impl IntoResponse for SurveyError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.code(), "message": self.to_string() });
        match &self {
            SurveyError::Incomplete(missing) => body["missing"] = json!(missing),
            SurveyError::TooEarly { remaining_seconds } => body["remaining_seconds"] = json!(remaining_seconds),
            SurveyError::OutOfOrder { expected, .. } => body["cursor"] = json!(expected),
            SurveyError::DuplicateSession(id) => body["session_id"] = json!(id),
            _ => {}
        }
        (self.status(), Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, SurveyError>;

/// Runs a blocking service call off the async workers.
async fn call<T: Send + 'static>(
    svc: Shared,
    f: impl FnOnce(&SurveyService) -> Result<T, SurveyError> + Send + 'static,
) -> Result<T, SurveyError> {
    tokio::task::spawn_blocking(move || f(&svc))
        .await
        .map_err(|e| SurveyError::Internal(e.to_string()))?
}

async fn create(State(svc): State<Shared>, Json(req): Json<CreateSession>) -> Result<Response, SurveyError> {
    let s = call(svc, move |svc| svc.create_session(&req)).await?;
    Ok((StatusCode::CREATED, Json(s)).into_response())
}

async fn show(State(svc): State<Shared>, Path(id): Path<String>) -> ApiResult<Value> {
    let s = call(svc, move |svc| svc.session(&id)).await?;
    Ok(Json(serde_json::to_value(s).map_err(|e| SurveyError::Internal(e.to_string()))?))
}

#[derive(Serialize)]
struct Instructions {
    session_id: String,
    role: Option<String>,
    instructions: String,
    prep_seconds: i64,
    shown_at: Option<chrono::DateTime<chrono::Utc>>,
}

async fn instructions(State(svc): State<Shared>, Path(id): Path<String>) -> ApiResult<Instructions> {
    let out = call(svc, move |svc| {
        let (s, text) = svc.instructions(&id)?;
        Ok(Instructions {
            session_id: s.session_id,
            role: s.role.map(|r| r.to_string()),
            instructions: text,
            prep_seconds: if s.instructions_shown_at.is_some() { svc.config().prep_seconds } else { 0 },
            shown_at: s.instructions_shown_at,
        })
    })
    .await?;
    Ok(Json(out))
}

async fn ack(State(svc): State<Shared>, Path(id): Path<String>) -> ApiResult<crate::model::Session> {
    Ok(Json(call(svc, move |svc| svc.acknowledge(&id)).await?))
}

async fn next(State(svc): State<Shared>, Path(id): Path<String>) -> ApiResult<crate::model::NextItem> {
    Ok(Json(call(svc, move |svc| svc.next_item(&id)).await?))
}

#[derive(Deserialize)]
struct Submit {
    item_index: usize,
    label: String,
}

async fn answer(
    State(svc): State<Shared>,
    Path(id): Path<String>,
    Json(body): Json<Submit>,
) -> ApiResult<crate::model::AnswerAck> {
    Ok(Json(call(svc, move |svc| svc.submit_answer(&id, body.item_index, &body.label)).await?))
}

async fn finalize(State(svc): State<Shared>, Path(id): Path<String>) -> ApiResult<crate::model::FinalizeReceipt> {
    Ok(Json(call(svc, move |svc| svc.finalize(&id)).await?))
}

async fn schedule(State(svc): State<Shared>, Path(id): Path<String>) -> ApiResult<Vec<crate::model::ScheduleEntry>> {
    Ok(Json(call(svc, move |svc| Ok(svc.schedule(&id))).await?))
}

#[derive(Deserialize)]
struct Consent {
    consent: bool,
}

async fn consent(
    State(svc): State<Shared>,
    Path(id): Path<String>,
    Json(body): Json<Consent>,
) -> ApiResult<crate::model::Participant> {
    Ok(Json(call(svc, move |svc| svc.set_consent(&id, body.consent)).await?))
}

pub fn router(svc: Arc<SurveyService>) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/v1/sessions", post(create))
        .route("/v1/sessions/{id}", get(show))
        .route("/v1/sessions/{id}/instructions", get(instructions))
        .route("/v1/sessions/{id}/ack", post(ack))
        .route("/v1/sessions/{id}/next", get(next))
        .route("/v1/sessions/{id}/answers", post(answer))
        .route("/v1/sessions/{id}/finalize", post(finalize))
        .route("/v1/participants/{id}/schedule", get(schedule))
        .route("/v1/participants/{id}/consent", put(consent))
        .with_state(svc)
}

/// Serves until the process is stopped.
pub async fn serve(svc: Arc<SurveyService>, addr: SocketAddr) -> std::io::Result<()> {
    serve_on(tokio::net::TcpListener::bind(addr).await?, svc).await
}

pub async fn serve_on(listener: tokio::net::TcpListener, svc: Arc<SurveyService>) -> std::io::Result<()> {
    axum::serve(listener, router(svc)).await
}
