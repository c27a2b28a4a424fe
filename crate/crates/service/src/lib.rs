//! HTTP session service: one clarification episode per session, driven by a
//! human answering keep/discard questions between steps.
//!
//! Operations on one session are serialized by its mutex; distinct sessions
//! run independently. Planning happens on the blocking pool.

use std::collections::HashMap;
use std::fs;
use std::future::Future;
use std::io;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::task::JoinHandle;

use ossa_core::agent::{AgentError, AnswerOutcome, ClarificationRequest, Command, Episode, EpisodeResult, LoggingExecutor, TranscriptEntry};
use ossa_core::backends::{Backend, PromptMode, SceneInput};
use ossa_core::oracle::{TaskId, TaskSpec};
use ossa_core::plan::ObjectManipulationPlan;
use ossa_core::scene::{Dataset, Scene};

/// Builds a backend from the id named in a create request.
pub type BackendFactory = Arc<dyn Fn(&str) -> Result<Arc<dyn Backend>, String> + Send + Sync>;

pub struct ServiceConfig {
    /// Scenes addressable by `scene_id`.
    pub dataset: Option<Arc<Dataset>>,
    pub backends: BackendFactory,
    pub default_backend: String,
    /// Where finished episodes are written as `{session_id}.json`.
    pub results_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pending,
    AwaitingAnswer,
    Complete,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error_code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub status: Status,
    pub task_id: TaskId,
    pub instruction: String,
    pub backend_id: String,
    pub mode: PromptMode,
    pub plans: Vec<ObjectManipulationPlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pending_clarification: Option<ClarificationRequest>,
    pub transcript: Vec<TranscriptEntry>,
    pub commands: Vec<Command>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRequest {
    #[serde(default)]
    scene_id: Option<String>,
    #[serde(default)]
    scene: Option<Scene>,
    task_id: String,
    #[serde(default)]
    backend_id: Option<String>,
    #[serde(default)]
    mode: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnswerRequest {
    object_name: String,
    answer: String,
}

enum Phase {
    Planning,
    Awaiting(Box<Episode>),
    Complete(Box<EpisodeResult>),
    Failed { error: ErrorBody, plans: Vec<ObjectManipulationPlan>, transcript: Vec<TranscriptEntry> },
}

struct Session {
    id: String,
    task: TaskSpec,
    backend_id: String,
    mode: PromptMode,
    phase: Phase,
    flushed: bool,
}

impl Session {
    fn view(&self) -> SessionView {
        let (status, plans, pending, transcript, commands, error) = match &self.phase {
            Phase::Planning => (Status::Pending, vec![], None, vec![], vec![], None),
            Phase::Awaiting(ep) => (
                Status::AwaitingAnswer,
                ep.current_plans(),
                ep.pending().cloned(),
                ep.transcript().to_vec(),
                vec![],
                None,
            ),
            Phase::Complete(r) => (Status::Complete, r.final_plans.clone(), None, r.transcript.clone(), r.commands.clone(), None),
            Phase::Failed { error, plans, transcript } => {
                (Status::Error, plans.clone(), None, transcript.clone(), vec![], Some(error.clone()))
            }
        };
        SessionView {
            session_id: self.id.clone(),
            status,
            task_id: self.task.id,
            instruction: self.task.instruction.clone(),
            backend_id: self.backend_id.clone(),
            mode: self.mode,
            plans,
            pending_clarification: pending,
            transcript,
            commands,
            error,
        }
    }

    /// Close the episode once nothing is pending.
    fn settle(&mut self, episode: Episode) {
        if episode.pending().is_some() {
            self.phase = Phase::Awaiting(Box::new(episode));
            return;
        }
        let plans = episode.current_plans();
        let transcript = episode.transcript().to_vec();
        let mut executor = LoggingExecutor::default();
        self.phase = match episode.finish(&mut executor) {
            Ok(result) => Phase::Complete(Box::new(result)),
            Err(e) => Phase::Failed { error: error_body("episode_failed", e.to_string()), plans, transcript },
        };
    }
}

struct Inner {
    config: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    planning: Mutex<Vec<JoinHandle<()>>>,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        AppState(Arc::new(Inner { config, sessions: RwLock::default(), planning: Mutex::default() }))
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.0
            .sessions
            .read()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "session_not_found", format!("no session '{id}'")))
    }

    fn write_result(&self, session: &mut Session) {
        let (Some(dir), Phase::Complete(result)) = (&self.0.config.results_dir, &session.phase) else { return };
        if session.flushed {
            return;
        }
        let text = serde_json::to_string_pretty(result).expect("episode result serializes") + "\n";
        match fs::create_dir_all(dir).and_then(|_| fs::write(dir.join(format!("{}.json", session.id)), text)) {
            Ok(()) => session.flushed = true,
            Err(e) => log::error!("cannot write result for session {}: {e}", session.id),
        }
    }

    /// Wait for planning to finish, then write every finished episode and a
    /// snapshot of every unfinished session.
    pub async fn flush(&self) -> io::Result<()> {
        let handles: Vec<JoinHandle<()>> = std::mem::take(&mut *self.0.planning.lock().expect("planning lock"));
        for h in handles {
            let _ = h.await;
        }
        let sessions: Vec<Arc<Mutex<Session>>> = self.0.sessions.read().expect("session map lock").values().cloned().collect();
        let Some(dir) = self.0.config.results_dir.clone() else { return Ok(()) };
        fs::create_dir_all(&dir)?;
        for s in sessions {
            let mut session = s.lock().expect("session lock");
            if matches!(session.phase, Phase::Complete(_)) {
                self.write_result(&mut session);
            } else {
                let text = serde_json::to_string_pretty(&session.view()).expect("view serializes") + "\n";
                fs::write(dir.join(format!("{}.session.json", session.id)), text)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

fn error_body(code: &str, message: impl Into<String>) -> ErrorBody {
    ErrorBody { error_code: code.into(), message: message.into() }
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError { status, body: error_body(code, message) }
    }

    fn bad_request(code: &str, message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, code, message)
    }

    fn conflict(code: &str, message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::CONFLICT, code, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request("invalid_body", e.to_string()))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/answer", post(answer))
        .route("/api/sessions/{id}/result", get(get_result))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .with_state(state)
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> Result<(StatusCode, Json<Created>), ApiError> {
    let req: CreateRequest = parse_body(&body)?;
    let task_id: TaskId = req.task_id.parse().map_err(|_| ApiError::bad_request("invalid_task", format!("unknown task '{}'", req.task_id)))?;
    let mode = match &req.mode {
        Some(m) => m.parse().map_err(|e: String| ApiError::bad_request("invalid_mode", e))?,
        None => PromptMode::ZeroShot,
    };
    let scene = match (req.scene_id, req.scene) {
        (Some(_), Some(_)) => return Err(ApiError::bad_request("invalid_body", "give either scene_id or scene, not both")),
        (None, None) => return Err(ApiError::bad_request("invalid_body", "scene_id or scene is required")),
        (None, Some(scene)) => {
            if let Some(issue) = scene.validate().into_iter().next() {
                return Err(ApiError::bad_request("invalid_scene", issue.to_string()));
            }
            scene
        }
        (Some(id), None) => {
            let dataset = state.0.config.dataset.as_ref().ok_or_else(|| ApiError::bad_request("no_dataset", "the service was started without a dataset"))?;
            dataset
                .scene(&id)
                .cloned()
                .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "scene_not_found", format!("no scene '{id}'")))?
        }
    };
    let backend_id = req.backend_id.unwrap_or_else(|| state.0.config.default_backend.clone());
    let backend = (state.0.config.backends)(&backend_id).map_err(|e| ApiError::bad_request("invalid_backend", e))?;

    let id = uuid::Uuid::new_v4().simple().to_string();
    let task = TaskSpec::from(task_id);
    let session = Arc::new(Mutex::new(Session {
        id: id.clone(),
        task: task.clone(),
        backend_id,
        mode,
        phase: Phase::Planning,
        flushed: false,
    }));
    state.0.sessions.write().expect("session map lock").insert(id.clone(), session.clone());

    let worker = state.clone();
    let handle = tokio::task::spawn_blocking(move || {
        let planned = Episode::plan(backend.as_ref(), &SceneInput::Scene(scene), task, mode);
        let mut s = session.lock().expect("session lock");
        match planned {
            Ok(episode) => s.settle(episode),
            Err(e) => {
                let code = if matches!(e, AgentError::Backend(_)) { "backend_error" } else { "episode_failed" };
                s.phase = Phase::Failed { error: error_body(code, e.to_string()), plans: vec![], transcript: vec![] };
            }
        }
        worker.write_result(&mut s);
    });
    let mut planning = state.0.planning.lock().expect("planning lock");
    planning.retain(|h| !h.is_finished());
    planning.push(handle);
    Ok((StatusCode::CREATED, Json(Created { session_id: id })))
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    let session = state.session(&id)?;
    let view = session.lock().expect("session lock").view();
    Ok(Json(view))
}

async fn answer(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Json<SessionView>, ApiError> {
    let session = state.session(&id)?;
    let req: AnswerRequest = parse_body(&body)?;
    let mut s = session.lock().expect("session lock");
    let Phase::Awaiting(episode) = &mut s.phase else {
        return Err(ApiError::conflict("not_awaiting_answer", format!("session '{id}' is not waiting for an answer")));
    };
    match episode.answer(&req.object_name, &req.answer) {
        Ok(AnswerOutcome::Accepted) => {}
        Ok(AnswerOutcome::Rejected { remaining }) => {
            return Err(ApiError::bad_request(
                "unrecognized_answer",
                format!("'{}' is not keep or discard; {remaining} attempt(s) left", req.answer),
            ));
        }
        Err(e @ AgentError::WrongObject { .. }) => return Err(ApiError::conflict("wrong_object", e.to_string())),
        Err(e @ AgentError::PolicyExhausted(_)) => {
            let body = error_body("policy_exhausted", e.to_string());
            s.phase = Phase::Failed { error: body.clone(), plans: episode.current_plans(), transcript: episode.transcript().to_vec() };
            return Err(ApiError { status: StatusCode::BAD_REQUEST, body });
        }
        Err(e) => return Err(ApiError::conflict("not_awaiting_answer", e.to_string())),
    }
    let Phase::Awaiting(episode) = std::mem::replace(&mut s.phase, Phase::Planning) else { unreachable!("checked above") };
    s.settle(*episode);
    state.write_result(&mut s);
    Ok(Json(s.view()))
}

async fn get_result(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<EpisodeResult>, ApiError> {
    let session = state.session(&id)?;
    let s = session.lock().expect("session lock");
    match &s.phase {
        Phase::Complete(result) => Ok(Json((**result).clone())),
        Phase::Failed { error, .. } => Err(ApiError::conflict("session_failed", error.message.clone())),
        _ => Err(ApiError::conflict("not_complete", format!("session '{id}' has not finished"))),
    }
}

/// Serve until `shutdown` resolves, then flush session results.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState, shutdown: impl Future<Output = ()> + Send + 'static) -> io::Result<()> {
    axum::serve(listener, router(state.clone())).with_graceful_shutdown(shutdown).await?;
    state.flush().await
}
