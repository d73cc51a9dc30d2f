//! JSON-over-HTTP session API under `/v1`.
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/v1/sessions` | `{participant_id}` → 201 `{session_id, condition, schema_version}` |
//! | GET | `/v1/sessions/{id}/utterance` | next agent turn `{turn_index, text, options, terminal}` |
//! | POST | `/v1/sessions/{id}/choice` | `{turn_index, option_slot}` → `{recorded, next_available}` |
//! | GET | `/v1/analysis?bias=framing\|loss_aversion\|both&curve=true` | analysis report, bearer token required |
//! | GET | `/v1/health` | liveness and counts |
//!
//! Errors are `{code, message}` with 404 for unknown sessions, 409 for
//! protocol violations and 422 for malformed requests. Re-posting the choice
//! already recorded for a turn is accepted and changes nothing.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use biasprobe::dialogue::{DialogueError, DialogueState, OptionSlot, ParticipantId, Phase, SessionId, SessionSpec};
use biasprobe::report::{analyze, AnalysisRequest};
use biasprobe::stats::StatsError;
use biasprobe::store::{derive_seed, Assigner, AssignmentPolicy, SessionStore, StoreError};
use biasprobe::tasks::{BiasKind, Condition, Study};
use biasprobe::SCHEMA_VERSION;
use chrono::Utc;
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex as AsyncMutex;

use crate::config::{SeedPolicy, ServiceConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub alpha: f64,
    pub admin_token: String,
    pub seed_policy: SeedPolicy,
    pub seed_base: u64,
    pub assignment: AssignmentPolicy,
}

impl Settings {
    pub fn from_config(config: &ServiceConfig) -> anyhow::Result<Self> {
        Ok(Settings {
            alpha: config.alpha,
            admin_token: config.admin_token.clone(),
            seed_policy: config.seed_policy,
            seed_base: config.seed_base.unwrap_or_default(),
            assignment: config.assignment_policy()?,
        })
    }
}

struct Session {
    state: DialogueState,
    persisted: bool,
}

pub struct AppState {
    study: Study,
    store: Arc<dyn SessionStore>,
    settings: Settings,
    assigner: Assigner,
    sessions: Mutex<HashMap<SessionId, Arc<AsyncMutex<Session>>>>,
    participants: Mutex<HashMap<ParticipantId, SessionId>>,
}

impl AppState {
    /// Participants already in `store` keep their condition and cannot enroll again.
    pub fn new(study: Study, store: Arc<dyn SessionStore>, settings: Settings) -> Self {
        let stored = store.all();
        let assigner = Assigner::restore(
            settings.assignment,
            stored.iter().map(|l| (&l.participant_id, l.condition)),
        );
        let participants = stored
            .iter()
            .map(|l| (l.participant_id.clone(), l.session_id.clone()))
            .collect();
        AppState {
            study,
            store,
            settings,
            assigner,
            sessions: Mutex::new(HashMap::new()),
            participants: Mutex::new(participants),
        }
    }

    fn session(&self, id: &SessionId) -> Result<Arc<AsyncMutex<Session>>, ApiError> {
        if let Some(s) = self.sessions.lock().expect("sessions lock").get(id) {
            return Ok(s.clone());
        }
        if self.store.load(id).is_some() {
            return Err(ApiError::conflict(
                "session_complete",
                format!("session {id} is complete"),
            ));
        }
        Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "not_found",
            format!("no session {id}"),
        ))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}/utterance", get(next_utterance))
        .route("/v1/sessions/{id}/choice", post(post_choice))
        .route("/v1/analysis", get(analysis))
        .route("/v1/health", get(health))
        .with_state(state)
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    code: &'static str,
    message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    fn conflict(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, code, message)
    }

    fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code,
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<DialogueError> for ApiError {
    fn from(e: DialogueError) -> Self {
        match e {
            DialogueError::Protocol { .. } | DialogueError::Incomplete { .. } => {
                Self::conflict("protocol", e.to_string())
            }
            DialogueError::SessionComplete => Self::conflict("session_complete", e.to_string()),
            DialogueError::InvalidSlot(_) => Self::invalid(e.to_string()),
            DialogueError::Task(_) => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Conflict(_) => Self::conflict("conflict", e.to_string()),
            StoreError::Unavailable(_) => {
                Self::new(StatusCode::SERVICE_UNAVAILABLE, "store_unavailable", e.to_string())
            }
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
        }
    }
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::invalid(format!("malformed body: {e}")))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    participant_id: String,
}

#[derive(Serialize)]
struct Created {
    session_id: SessionId,
    condition: Condition,
    schema_version: u32,
}

async fn create_session(
    State(app): State<Arc<AppState>>,
    body: Bytes,
) -> Result<(StatusCode, Json<Created>), ApiError> {
    let req: CreateSession = parse_body(&body)?;
    let participant = ParticipantId(req.participant_id.trim().to_string());
    if participant.0.is_empty() {
        return Err(ApiError::invalid("participant_id must not be empty"));
    }
    let session_id = SessionId(uuid::Uuid::new_v4().to_string());
    {
        let mut participants = app.participants.lock().expect("participants lock");
        if let Some(existing) = participants.get(&participant) {
            return Err(ApiError::conflict(
                "conflict",
                format!("participant {participant} already has session {existing}"),
            ));
        }
        participants.insert(participant.clone(), session_id.clone());
    }
    let condition = app.assigner.assign(&participant);
    let seed = match app.settings.seed_policy {
        SeedPolicy::PerSessionRandom => rand::random(),
        SeedPolicy::FixedBase => derive_seed(app.settings.seed_base, &participant),
    };
    let spec = SessionSpec {
        session_id: session_id.clone(),
        participant_id: participant.clone(),
        condition,
        seed,
    };
    let state = match DialogueState::start(&app.study, spec, Utc::now()) {
        Ok(s) => s,
        Err(e) => {
            app.participants.lock().expect("participants lock").remove(&participant);
            return Err(e.into());
        }
    };
    app.sessions.lock().expect("sessions lock").insert(
        session_id.clone(),
        Arc::new(AsyncMutex::new(Session {
            state,
            persisted: false,
        })),
    );
    tracing::info!(session = %session_id, %condition, "session started");
    Ok((
        StatusCode::CREATED,
        Json(Created {
            session_id,
            condition,
            schema_version: SCHEMA_VERSION,
        }),
    ))
}

async fn next_utterance(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let session = app.session(&SessionId(id))?;
    let mut session = session.lock().await;
    let utterance = session.state.next_utterance()?;
    Ok(Json(utterance).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ChoiceRequest {
    turn_index: usize,
    option_slot: String,
}

#[derive(Serialize)]
struct ChoiceAck {
    recorded: bool,
    next_available: bool,
}

async fn post_choice(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<ChoiceAck>, ApiError> {
    let req: ChoiceRequest = parse_body(&body)?;
    let slot: OptionSlot = req.option_slot.parse()?;
    let session = app.session(&SessionId(id))?;
    let mut session = session.lock().await;
    let state = &session.state;
    if state.phase() == Phase::Greeting {
        return Err(ApiError::conflict("protocol", "no task has been presented yet"));
    }
    let answered = state.choices().len();
    if req.turn_index >= 1 && req.turn_index <= answered {
        let prior = &state.choices()[req.turn_index - 1];
        if prior.raw_choice != slot {
            return Err(ApiError::conflict(
                "conflict",
                format!("turn {} already answered with {}", req.turn_index, prior.raw_choice),
            ));
        }
    } else if state.phase() == Phase::AwaitingChoice && req.turn_index == state.turn_index() {
        session.state.apply_choice(slot)?;
    } else {
        return Err(ApiError::conflict(
            "protocol",
            match state.phase() {
                Phase::Complete => format!("session is complete; turn {} does not exist", req.turn_index),
                _ => format!(
                    "turn {} is not open; awaiting turn {}",
                    req.turn_index,
                    state.turn_index()
                ),
            },
        ));
    }
    if session.state.phase() == Phase::Complete && !session.persisted {
        let log = session.state.finalize()?;
        app.store.persist(&log)?;
        session.persisted = true;
        tracing::info!(session = %log.session_id, "session stored");
    }
    Ok(Json(ChoiceAck {
        recorded: true,
        next_available: !session.state.closing_delivered(),
    }))
}

async fn analysis(
    State(app): State<Arc<AppState>>,
    headers: HeaderMap,
    Query(query): Query<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    let expected = format!("Bearer {}", app.settings.admin_token);
    let authorized = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v == expected);
    if !authorized {
        return Err(ApiError::new(
            StatusCode::UNAUTHORIZED,
            "unauthorized",
            "admin token required",
        ));
    }
    let biases = match query.get("bias").map(String::as_str) {
        None | Some("both") => BiasKind::ALL.to_vec(),
        Some(b) => vec![b
            .parse::<BiasKind>()
            .map_err(|_| ApiError::invalid(format!("unknown bias '{b}'")))?],
    };
    let curve = match query.get("curve").map(String::as_str) {
        None | Some("false") => false,
        Some("true") => true,
        Some(v) => return Err(ApiError::invalid(format!("curve must be true or false, got '{v}'"))),
    };
    let mut request = AnalysisRequest::new(biases, app.settings.alpha);
    request.curve = curve;
    let logs = app.store.all();
    match analyze(&logs, &request) {
        Ok(report) => Ok(Json(report).into_response()),
        Err(e @ (StatsError::EmptyGroup(_) | StatsError::InsufficientData { .. })) => Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "insufficient_data",
            e.to_string(),
        )),
        Err(e) => Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "analysis_failed",
            e.to_string(),
        )),
    }
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    schema_version: u32,
    catalog_version: String,
    active_sessions: usize,
    stored_sessions: usize,
}

async fn health(State(app): State<Arc<AppState>>) -> Json<Health> {
    Json(Health {
        status: "ok",
        schema_version: SCHEMA_VERSION,
        catalog_version: app.study.catalog().version().to_string(),
        active_sessions: app.sessions.lock().expect("sessions lock").len(),
        stored_sessions: app.store.len(),
    })
}
