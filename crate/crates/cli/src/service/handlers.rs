use std::convert::Infallible;
use std::sync::atomic::Ordering;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{FromRequest, Path, Request, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::Json;
use groundloop::harness::report::render_report;
use groundloop::harness::score::FLUENCY_NOTE;
use groundloop::harness::{
    ablation_configs, classify_errors, generate_suite, run_suite, score, DimensionScores, ErrorCounters, NamedConfig,
    Profile, Scenario, SuiteReport,
};
use groundloop::{
    AgentConfig, AgentError, BackendError, MemorySnapshot, ModelBackend, Plan, SceneWorld, Session, TraceEvent,
    TurnRecord, WorldEvent,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio_stream::wrappers::errors::BroadcastStreamRecvError;
use tokio_stream::wrappers::BroadcastStream;
use tokio_stream::{Stream, StreamExt};

use super::{attach_sinks, new_channel, AppState, RunSlot, RunStatus, SessionSlot};

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub kind: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            kind,
            message: message.into(),
        }
    }

    fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("unknown {what} `{id}`"))
    }

    fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<AgentError> for ApiError {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::Backend(b) => b.into(),
            AgentError::Config(m) => Self::invalid(m),
        }
    }
}

impl From<BackendError> for ApiError {
    fn from(e: BackendError) -> Self {
        Self::new(StatusCode::BAD_GATEWAY, "backend", e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = Json(serde_json::json!({ "error": self.kind, "message": self.message }));
        (self.status, body).into_response()
    }
}

/// JSON body extractor that reports every malformed body as 422.
pub struct ApiJson<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for ApiJson<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(ApiJson(v)),
            Err(rejection) => Err(ApiError::invalid(rejection.body_text())),
        }
    }
}

fn slot(state: &AppState, id: &str) -> Result<Arc<SessionSlot>, ApiError> {
    state
        .sessions
        .read()
        .map_err(|_| ApiError::internal("session table poisoned"))?
        .get(id)
        .cloned()
        .ok_or_else(|| ApiError::not_found("session", id))
}

/// Runs blocking work against a session off the async workers.
async fn with_session<R: Send + 'static>(
    slot: Arc<SessionSlot>,
    f: impl FnOnce(&mut Session) -> R + Send + 'static,
) -> Result<R, ApiError> {
    tokio::task::spawn_blocking(move || {
        let mut s = slot.session.lock().map_err(|_| ApiError::internal("session poisoned"))?;
        Ok(f(&mut s))
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?
}

pub async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    #[serde(default)]
    pub scene: Option<SceneWorld>,
    /// Id of a served scenario whose scene to use; turns are then scored against it.
    #[serde(default)]
    pub scenario: Option<String>,
    #[serde(default)]
    pub config: Option<AgentConfig>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Scores {
    pub turns_scored: usize,
    pub dimensions: DimensionScores,
    pub fluency: String,
    pub errors: ErrorCounters,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StateView {
    pub id: String,
    pub turns: usize,
    pub scenario: Option<String>,
    pub memory: MemorySnapshot,
    pub plan: Option<Plan>,
    pub scene: SceneWorld,
    pub config: AgentConfig,
    /// Present for scenario sessions while the turns so far follow the script.
    pub scores: Option<Scores>,
}

fn scores_so_far(scenario: &Scenario, transcript: &[TurnRecord]) -> Option<Scores> {
    if transcript.is_empty() || transcript.len() > scenario.turns.len() {
        return None;
    }
    let follows = transcript
        .iter()
        .zip(&scenario.turns)
        .all(|(r, t)| r.instruction == t.instruction && r.events == t.events);
    if !follows {
        return None;
    }
    let prefix = Scenario {
        turns: scenario.turns[..transcript.len()].to_vec(),
        ..scenario.clone()
    };
    Some(Scores {
        turns_scored: transcript.len(),
        dimensions: score(transcript, &prefix).ok()?,
        fluency: FLUENCY_NOTE.to_string(),
        errors: classify_errors(transcript, &prefix),
    })
}

fn state_view(session: &Session, scenario: Option<&Scenario>) -> StateView {
    let snap = session.snapshot();
    StateView {
        id: snap.id,
        turns: snap.turns,
        scenario: scenario.map(|s| s.id.clone()),
        memory: snap.memory,
        plan: snap.plan,
        scene: snap.scene,
        config: snap.config,
        scores: scenario.and_then(|s| scores_so_far(s, &session.transcript)),
    }
}

pub async fn create_session(
    State(state): State<Arc<AppState>>,
    ApiJson(req): ApiJson<CreateSession>,
) -> Result<(StatusCode, Json<StateView>), ApiError> {
    let scenario = match (&req.scene, &req.scenario) {
        (Some(_), None) => None,
        (None, Some(id)) => Some(
            state
                .scenarios
                .iter()
                .find(|s| &s.id == id)
                .cloned()
                .ok_or_else(|| ApiError::invalid(format!("unknown scenario `{id}`")))?,
        ),
        _ => return Err(ApiError::invalid("send exactly one of `scene` or `scenario`")),
    };
    let scene = match (req.scene, &scenario) {
        (Some(scene), _) => scene,
        (None, Some(s)) => s.scene.clone(),
        (None, None) => unreachable!("checked above"),
    };
    scene.validate().map_err(|e| ApiError::invalid(format!("scene: {e}")))?;
    let config = req.config.unwrap_or_else(|| state.config.agent.clone());
    let backend: Arc<dyn ModelBackend> = (state.backends)()?;
    let id = state.session_id();
    let mut session = Session::new(id.clone(), scene, config, backend, req.seed.unwrap_or(state.config.seed))?;
    let events = new_channel();
    attach_sinks(&state, &mut session, &events).map_err(|e| ApiError::internal(e.to_string()))?;
    let view = state_view(&session, scenario.as_ref());
    let slot = Arc::new(SessionSlot {
        session: Mutex::new(session),
        busy: Default::default(),
        events,
        scenario,
    });
    state
        .sessions
        .write()
        .map_err(|_| ApiError::internal("session table poisoned"))?
        .insert(id, slot);
    Ok((StatusCode::CREATED, Json(view)))
}

#[derive(Debug, Serialize)]
pub struct SessionSummary {
    pub id: String,
    pub scenario: Option<String>,
}

pub async fn list_sessions(State(state): State<Arc<AppState>>) -> Result<Json<Vec<SessionSummary>>, ApiError> {
    let table = state.sessions.read().map_err(|_| ApiError::internal("session table poisoned"))?;
    Ok(Json(
        table
            .iter()
            .map(|(id, s)| SessionSummary {
                id: id.clone(),
                scenario: s.scenario.as_ref().map(|x| x.id.clone()),
            })
            .collect(),
    ))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurnRequest {
    pub instruction: String,
    #[serde(default)]
    pub events: Vec<WorldEvent>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TurnResponse {
    pub turn: TurnRecord,
    pub memory: MemorySnapshot,
}

/// Clears the busy flag however the turn ends.
struct Busy(Arc<SessionSlot>);

impl Drop for Busy {
    fn drop(&mut self) {
        self.0.busy.store(false, Ordering::Release);
    }
}

pub async fn take_turn(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<TurnRequest>,
) -> Result<Json<TurnResponse>, ApiError> {
    if req.instruction.trim().is_empty() {
        return Err(ApiError::invalid("instruction is empty"));
    }
    let slot = slot(&state, &id)?;
    if slot
        .busy
        .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
        .is_err()
    {
        return Err(ApiError::new(StatusCode::CONFLICT, "busy", format!("session `{id}` is already running a turn")));
    }
    let _busy = Busy(slot.clone());
    let result = with_session(slot, move |s| {
        s.step(&req.events, &req.instruction)?;
        Ok::<_, AgentError>(TurnResponse {
            turn: s.transcript.last().cloned().expect("step appends a record"),
            memory: s.memory.snapshot(),
        })
    })
    .await?;
    Ok(Json(result?))
}

pub async fn get_state(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<StateView>, ApiError> {
    let slot = slot(&state, &id)?;
    let scenario = slot.scenario.clone();
    Ok(Json(with_session(slot, move |s| state_view(s, scenario.as_ref())).await?))
}

pub async fn get_trace(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Vec<TraceEvent>>, ApiError> {
    let slot = slot(&state, &id)?;
    Ok(Json(with_session(slot, |s| s.trace.clone()).await?))
}

/// Trace events of every later turn, as `trace` events carrying the
/// same JSON as a trace file line.
pub async fn events(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let slot = slot(&state, &id)?;
    let stream = BroadcastStream::new(slot.events.subscribe()).map(|item| {
        Ok(match item {
            Ok(ev) => Event::default()
                .event("trace")
                .json_data(&ev)
                .unwrap_or_else(|_| Event::default().event("error").data("unserializable event")),
            Err(BroadcastStreamRecvError::Lagged(n)) => Event::default().event("lagged").data(n.to_string()),
        })
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

#[derive(Debug, Serialize)]
pub struct ScenarioSummary {
    pub id: String,
    pub turns: usize,
    pub entities: usize,
    pub checks: usize,
    pub tags: Vec<String>,
}

pub async fn list_scenarios(State(state): State<Arc<AppState>>) -> Json<Vec<ScenarioSummary>> {
    Json(
        state
            .scenarios
            .iter()
            .map(|s| ScenarioSummary {
                id: s.id.clone(),
                turns: s.turns.len(),
                entities: s.scene.entities.len(),
                checks: s.check_count(),
                tags: s.tags.clone(),
            })
            .collect(),
    )
}

pub async fn get_scenario(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Scenario>, ApiError> {
    state
        .scenarios
        .iter()
        .find(|s| s.id == id)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::not_found("scenario", &id))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    pub seed: u64,
    pub count: usize,
    #[serde(default = "standard")]
    pub profile: Profile,
}

fn standard() -> Profile {
    Profile::Standard
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRequest {
    /// Served scenario ids; empty means all of them.
    #[serde(default)]
    pub scenarios: Vec<String>,
    /// Generate the suite instead of using served scenarios.
    #[serde(default)]
    pub generate: Option<GenerateRequest>,
    /// Run the full agent plus every ablation row.
    #[serde(default)]
    pub ablate_all: bool,
    #[serde(default)]
    pub config: Option<AgentConfig>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunView {
    pub id: String,
    /// `running`, `done` or `failed`.
    pub status: String,
    pub scenarios: Vec<String>,
    pub configs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<SuiteReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn run_view(id: &str, run: &RunSlot) -> RunView {
    let status = run.status.read().map(|s| s.clone()).unwrap_or(RunStatus::Failed("poisoned".into()));
    let (label, report, text, error) = match status {
        RunStatus::Running => ("running", None, None, None),
        RunStatus::Done { report, text } => ("done", Some(report), Some(text), None),
        RunStatus::Failed(e) => ("failed", None, None, Some(e)),
    };
    RunView {
        id: id.to_string(),
        status: label.to_string(),
        scenarios: run.scenarios.clone(),
        configs: run.configs.clone(),
        report,
        text,
        error,
    }
}

pub async fn start_run(
    State(state): State<Arc<AppState>>,
    ApiJson(req): ApiJson<RunRequest>,
) -> Result<(StatusCode, Json<RunView>), ApiError> {
    let scenarios: Vec<Scenario> = match &req.generate {
        Some(g) => {
            if g.count == 0 || !req.scenarios.is_empty() {
                return Err(ApiError::invalid("`generate` needs count >= 1 and no `scenarios`"));
            }
            generate_suite(g.seed, g.count, g.profile)
        }
        None if req.scenarios.is_empty() => state.scenarios.clone(),
        None => req
            .scenarios
            .iter()
            .map(|id| {
                state
                    .scenarios
                    .iter()
                    .find(|s| &s.id == id)
                    .cloned()
                    .ok_or_else(|| ApiError::invalid(format!("unknown scenario `{id}`")))
            })
            .collect::<Result<_, _>>()?,
    };
    if scenarios.is_empty() {
        return Err(ApiError::invalid("no scenarios to run"));
    }
    let agent = req.config.unwrap_or_else(|| state.config.agent.clone());
    agent.validate()?;
    let configs = if req.ablate_all {
        ablation_configs(&agent)
    } else {
        vec![NamedConfig::new("full", agent)]
    };
    let seed = req.seed.unwrap_or(state.config.seed);
    let id = state.run_id();
    let run = Arc::new(RunSlot {
        scenarios: scenarios.iter().map(|s| s.id.clone()).collect(),
        configs: configs.iter().map(|c| c.name.clone()).collect(),
        status: RwLock::new(RunStatus::Running),
    });
    state
        .runs
        .write()
        .map_err(|_| ApiError::internal("run table poisoned"))?
        .insert(id.clone(), run.clone());
    let backends = state.backends.clone();
    let worker = run.clone();
    tokio::task::spawn_blocking(move || {
        let factory = move |_: &Scenario| backends();
        let outcome = run_suite(&scenarios, &configs, &factory, seed);
        let status = match outcome.runs.iter().find_map(|r| r.error.clone()) {
            Some(AgentError::Backend(e)) => RunStatus::Failed(e.to_string()),
            _ => RunStatus::Done {
                text: render_report(&outcome.report),
                report: outcome.report,
            },
        };
        if let Ok(mut s) = worker.status.write() {
            *s = status;
        }
    });
    Ok((StatusCode::ACCEPTED, Json(run_view(&id, &run))))
}

pub async fn get_run(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<RunView>, ApiError> {
    let run = state
        .runs
        .read()
        .map_err(|_| ApiError::internal("run table poisoned"))?
        .get(&id)
        .cloned()
        .ok_or_else(|| ApiError::not_found("run", &id))?;
    Ok(Json(run_view(&id, &run)))
}
