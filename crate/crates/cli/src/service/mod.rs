//! HTTP service: sessions, state snapshots, a server-sent event stream of
//! trace events, the scenario list and background suite runs.
//!
//! Endpoints and payloads are documented in `docs/api.md`.

mod handlers;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::http::{header, HeaderValue, Method};
use axum::routing::{get, post};
use axum::Router;
use groundloop::harness::{load_dir, Scenario, SuiteReport};
use groundloop::{AgentConfig, BackendConfig, BackendError, ModelBackend, Session, TraceEvent, TraceSink};
use tokio::sync::broadcast;
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::error::CliError;

pub use handlers::{ApiError, ApiJson};

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    pub host: String,
    /// 0 picks a free port.
    pub port: u16,
    pub backend: BackendConfig,
    /// Defaults for sessions that do not send their own config.
    pub agent: AgentConfig,
    pub seed: u64,
    pub scenario_dir: Option<PathBuf>,
    pub cors_origins: Vec<String>,
    pub trace_dir: Option<PathBuf>,
}

impl ServiceConfig {
    /// Checks origins and directories, creating the trace directory if needed.
    pub fn validate(&self) -> Result<(), CliError> {
        self.agent.validate()?;
        for o in &self.cors_origins {
            let ok = (o.starts_with("http://") || o.starts_with("https://")) && HeaderValue::from_str(o).is_ok();
            if !ok {
                return Err(CliError::Config(format!("bad CORS origin `{o}`")));
            }
        }
        if let Some(dir) = &self.scenario_dir {
            if !dir.is_dir() {
                return Err(CliError::Config(format!("scenario directory {} does not exist", dir.display())));
            }
        }
        if let Some(dir) = &self.trace_dir {
            std::fs::create_dir_all(dir).map_err(|e| crate::error::io_error(dir, e))?;
        }
        Ok(())
    }
}

pub type BackendSource = Arc<dyn Fn() -> Result<Arc<dyn ModelBackend>, BackendError> + Send + Sync>;

/// Capacity of each session's event channel; slow subscribers beyond it see a `lagged` event.
const EVENT_BUFFER: usize = 1024;

pub(crate) struct SessionSlot {
    pub session: Mutex<Session>,
    pub busy: AtomicBool,
    pub events: broadcast::Sender<TraceEvent>,
    pub scenario: Option<Scenario>,
}

#[derive(Clone)]
pub(crate) enum RunStatus {
    Running,
    Done { report: SuiteReport, text: String },
    Failed(String),
}

pub(crate) struct RunSlot {
    pub scenarios: Vec<String>,
    pub configs: Vec<String>,
    pub status: RwLock<RunStatus>,
}

pub struct AppState {
    pub(crate) config: ServiceConfig,
    pub(crate) backends: BackendSource,
    pub(crate) scenarios: Vec<Scenario>,
    pub(crate) sessions: RwLock<BTreeMap<String, Arc<SessionSlot>>>,
    pub(crate) runs: RwLock<BTreeMap<String, Arc<RunSlot>>>,
    next_session: AtomicU64,
    next_run: AtomicU64,
}

impl AppState {
    /// Loads the scenario directory; backends come from `config.backend`.
    pub fn new(config: ServiceConfig) -> Result<Self, CliError> {
        let backend = config.backend.clone();
        Self::with_backends(config, Arc::new(move || backend.build()))
    }

    pub fn with_backends(config: ServiceConfig, backends: BackendSource) -> Result<Self, CliError> {
        config.validate()?;
        let scenarios = match &config.scenario_dir {
            Some(dir) => load_dir(dir)?,
            None => Vec::new(),
        };
        Ok(Self {
            config,
            backends,
            scenarios,
            sessions: RwLock::new(BTreeMap::new()),
            runs: RwLock::new(BTreeMap::new()),
            next_session: AtomicU64::new(1),
            next_run: AtomicU64::new(1),
        })
    }

    pub(crate) fn session_id(&self) -> String {
        format!("s{}", self.next_session.fetch_add(1, Ordering::Relaxed))
    }

    pub(crate) fn run_id(&self) -> String {
        format!("r{}", self.next_run.fetch_add(1, Ordering::Relaxed))
    }
}

struct BroadcastSink(broadcast::Sender<TraceEvent>);

impl TraceSink for BroadcastSink {
    fn emit(&self, event: &TraceEvent) {
        // no subscribers is fine
        let _ = self.0.send(event.clone());
    }
}

struct FileSink(Mutex<std::fs::File>);

impl TraceSink for FileSink {
    fn emit(&self, event: &TraceEvent) {
        use std::io::Write;
        if let (Ok(mut f), Ok(line)) = (self.0.lock(), serde_json::to_string(event)) {
            let _ = writeln!(f, "{line}");
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let cors = (!state.config.cors_origins.is_empty()).then(|| {
        let origins: Vec<HeaderValue> = state
            .config
            .cors_origins
            .iter()
            .filter_map(|o| HeaderValue::from_str(o).ok())
            .collect();
        CorsLayer::new()
            .allow_origin(AllowOrigin::list(origins))
            .allow_methods([Method::GET, Method::POST])
            .allow_headers([header::CONTENT_TYPE])
    });
    let app = Router::new()
        .route("/health", get(handlers::health))
        .route("/sessions", post(handlers::create_session).get(handlers::list_sessions))
        .route("/sessions/{id}/turns", post(handlers::take_turn))
        .route("/sessions/{id}/state", get(handlers::get_state))
        .route("/sessions/{id}/events", get(handlers::events))
        .route("/sessions/{id}/trace", get(handlers::get_trace))
        .route("/scenarios", get(handlers::list_scenarios))
        .route("/scenarios/{id}", get(handlers::get_scenario))
        .route("/runs", post(handlers::start_run))
        .route("/runs/{id}", get(handlers::get_run))
        .with_state(state);
    match cors {
        Some(layer) => app.layer(layer),
        None => app,
    }
}

pub async fn serve(config: ServiceConfig) -> Result<(), CliError> {
    let addr = format!("{}:{}", config.host, config.port);
    let state = Arc::new(AppState::new(config)?);
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .map_err(|e| CliError::Config(format!("bind {addr}: {e}")))?;
    let local = listener.local_addr().map_err(|e| CliError::Config(e.to_string()))?;
    println!("listening on http://{local}");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| CliError::Config(format!("server: {e}")))
}

pub(crate) fn attach_sinks(state: &AppState, session: &mut Session, events: &broadcast::Sender<TraceEvent>) -> Result<(), CliError> {
    session.add_sink(Arc::new(BroadcastSink(events.clone())));
    if let Some(dir) = &state.config.trace_dir {
        let path = dir.join(format!("{}.jsonl", session.id));
        let file = std::fs::File::create(&path).map_err(|e| crate::error::io_error(&path, e))?;
        session.add_sink(Arc::new(FileSink(Mutex::new(file))));
    }
    Ok(())
}

pub(crate) fn new_channel() -> broadcast::Sender<TraceEvent> {
    broadcast::channel(EVENT_BUFFER).0
}
