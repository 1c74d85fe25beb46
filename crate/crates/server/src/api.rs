use std::collections::HashMap;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::RngCore;

use crseval::ingest::SituationPool;
use crseval::rng::session_seed;
use crseval::session::SessionGenesis;
use crseval::{RecordStore, Session, SessionEngine, SessionError, SessionId, SessionState, StoreError, Study};

use crate::view::{
    CompletionResponse, CreateSessionRequest, CreateSessionResponse, ErrorBody, NextStep,
    QuestionnaireSubmission, QuestionnaireView, TaskSubmission,
};

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn unknown_session() -> Self {
        Self::new(StatusCode::NOT_FOUND, "unknown_session", "no such session")
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.code.to_owned(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let (status, code) = match &e {
            SessionError::WrongState { .. } => (StatusCode::CONFLICT, "wrong_state"),
            SessionError::PoolTooSmall { .. } => (StatusCode::SERVICE_UNAVAILABLE, "pool_too_small"),
            SessionError::MissingRating { .. }
            | SessionError::OutOfRangeRating { .. }
            | SessionError::UnknownSlot { .. }
            | SessionError::UnknownItem(_)
            | SessionError::MissingAnswer(_)
            | SessionError::InvalidOption { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_submission"),
            SessionError::InvalidStudy(_)
            | SessionError::SituationShape { .. }
            | SessionError::UnknownSituation(_) => (StatusCode::INTERNAL_SERVER_ERROR, "misconfigured"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let (status, code) = match &e {
            StoreError::DuplicateSession(_) => (StatusCode::CONFLICT, "duplicate_session"),
            StoreError::Unavailable(_) => (StatusCode::SERVICE_UNAVAILABLE, "storage_unavailable"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "storage_error"),
        };
        tracing::error!("store: {e}");
        Self::new(status, code, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::new(e.status(), "bad_request", e.body_text())
    }
}

struct Live {
    session: Session,
    /// When the current page was served; bounds client-reported timings.
    page_shown_at: Instant,
}

/// Shared service state. In-progress sessions live in memory; completed
/// records go to the store.
pub struct AppState {
    study: Study,
    pool: SituationPool,
    store: Arc<dyn RecordStore>,
    live: Mutex<HashMap<SessionId, Arc<tokio::sync::Mutex<Live>>>>,
    /// Serializes the single-participation check with the record write.
    completion: tokio::sync::Mutex<()>,
}

impl AppState {
    pub fn new(study: Study, pool: SituationPool, store: Arc<dyn RecordStore>) -> Self {
        Self {
            study,
            pool,
            store,
            live: Mutex::new(HashMap::new()),
            completion: tokio::sync::Mutex::new(()),
        }
    }

    pub fn study(&self) -> &Study {
        &self.study
    }

    fn engine(&self) -> SessionEngine<'_> {
        SessionEngine::new(&self.study, &self.pool)
    }

    fn live(&self) -> MutexGuard<'_, HashMap<SessionId, Arc<tokio::sync::Mutex<Live>>>> {
        self.live.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn session(&self, id: &str) -> Result<Arc<tokio::sync::Mutex<Live>>, ApiError> {
        self.live()
            .get(&SessionId::from(id))
            .cloned()
            .ok_or_else(ApiError::unknown_session)
    }

    fn has_completed(&self, worker_id: &str) -> Result<bool, ApiError> {
        Ok(self.store.has_completed(&self.study.study_id, worker_id)?)
    }

    fn next_step(&self, session: &Session) -> Result<NextStep, ApiError> {
        Ok(match session.state {
            SessionState::Landing | SessionState::Instructions => NextStep::Instructions {
                instructions_text: self.study.instructions_text.clone(),
            },
            SessionState::Task(k) => NextStep::Task {
                page: self.engine().render_task(session, k)?.into(),
            },
            SessionState::Questionnaire => NextStep::Questionnaire(QuestionnaireView::of(&self.study)),
            SessionState::Complete => NextStep::Complete {
                hit_code: session.hit_code.clone().unwrap_or_default(),
            },
        })
    }
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn new_token() -> String {
    let mut bytes = [0u8; 16];
    rand::rngs::OsRng.fill_bytes(&mut bytes);
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/health", get(|| async { "ok" }))
        .route("/api/session", post(create_session))
        .route("/api/session/{id}", get(current))
        .route("/api/session/{id}/ack-instructions", post(ack_instructions))
        .route("/api/session/{id}/task/{k}", post(submit_task))
        .route("/api/session/{id}/questionnaire", post(submit_questionnaire))
        .with_state(state)
}

async fn create_session(
    State(app): State<Arc<AppState>>,
    body: Result<Json<CreateSessionRequest>, JsonRejection>,
) -> Result<Json<CreateSessionResponse>, ApiError> {
    let Json(req) = body?;
    let worker_id = req.worker_id.trim();
    if worker_id.is_empty() {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "invalid_submission",
            "worker_id must not be empty",
        ));
    }
    if app.has_completed(worker_id)? {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "already_participated",
            format!("worker {worker_id} already completed this study"),
        ));
    }
    let engine = app.engine();
    let mut session = engine.open(SessionGenesis {
        session_id: SessionId(new_token()),
        worker_id: worker_id.to_owned(),
        seed: session_seed(app.study.rng_seed, worker_id),
        created_at_ms: now_ms(),
    })?;
    engine.show_instructions(&mut session)?;
    let response = CreateSessionResponse {
        session_id: session.session_id.to_string(),
        instructions_text: app.study.instructions_text.clone(),
        task_count: session.tasks.len(),
    };
    let live = Live {
        session,
        page_shown_at: Instant::now(),
    };
    app.live()
        .insert(SessionId(response.session_id.clone()), Arc::new(tokio::sync::Mutex::new(live)));
    tracing::info!(session = %response.session_id, worker = worker_id, "session created");
    Ok(Json(response))
}

async fn current(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<NextStep>, ApiError> {
    let live = app.session(&id)?;
    let live = live.lock().await;
    Ok(Json(app.next_step(&live.session)?))
}

async fn ack_instructions(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<NextStep>, ApiError> {
    let live = app.session(&id)?;
    let mut live = live.lock().await;
    app.engine().acknowledge_instructions(&mut live.session)?;
    live.page_shown_at = Instant::now();
    Ok(Json(app.next_step(&live.session)?))
}

async fn submit_task(
    State(app): State<Arc<AppState>>,
    Path((id, k)): Path<(String, usize)>,
    body: Result<Json<TaskSubmission>, JsonRejection>,
) -> Result<Json<NextStep>, ApiError> {
    let live = app.session(&id)?;
    let mut live = live.lock().await;
    let Json(sub) = body?;
    let timings = crseval::TaskTimings {
        events_ms: sub.timings.events_ms,
        server_elapsed_ms: Some(live.page_shown_at.elapsed().as_millis() as u64),
    };
    app.engine().submit_task(&mut live.session, k, sub.ratings, timings)?;
    live.page_shown_at = Instant::now();
    Ok(Json(app.next_step(&live.session)?))
}

async fn submit_questionnaire(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<QuestionnaireSubmission>, JsonRejection>,
) -> Result<Json<CompletionResponse>, ApiError> {
    let live = app.session(&id)?;
    let mut live = live.lock().await;
    let Json(sub) = body?;
    let engine = app.engine();
    // Work on a copy so a failed write leaves the session resubmittable.
    let mut session = live.session.clone();
    engine.submit_questionnaire(&mut session, sub.answers, now_ms())?;
    let record = engine.finish(&session)?;

    let _guard = app.completion.lock().await;
    if app.has_completed(&session.worker_id)? {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "already_participated",
            format!("worker {} already completed this study", session.worker_id),
        ));
    }
    let store = Arc::clone(&app.store);
    let outcome = tokio::task::spawn_blocking(move || store.put_record(record))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    session.hit_code = Some(outcome.hit_code.clone());
    tracing::info!(session = %session.session_id, record = outcome.id, "session completed");
    live.session = session;
    Ok(Json(CompletionResponse {
        hit_code: outcome.hit_code,
    }))
}
