use groundloop::harness::ScenarioError;
use groundloop::{AgentError, BackendError};
use thiserror::Error;

/// Failure of a subcommand. Each variant maps to one exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// The run completed but some check failed.
    #[error("{0}")]
    Failed(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Backend(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Config(_) => 2,
            CliError::Backend(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Failed(_) => "check_failed",
            CliError::Config(_) => "config",
            CliError::Backend(_) => "backend",
        }
    }

    /// One JSON line for stderr.
    pub fn json_line(&self) -> String {
        serde_json::json!({ "error": self.kind(), "code": self.code(), "message": self.to_string() }).to_string()
    }
}

impl From<AgentError> for CliError {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::Backend(b) => b.into(),
            AgentError::Config(m) => CliError::Config(m),
        }
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::Config(_) => CliError::Config(e.to_string()),
            BackendError::Failure(_) => CliError::Backend(e.to_string()),
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        CliError::Config(e.to_string())
    }
}

pub fn io_error(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Config(format!("{}: {e}", path.display()))
}
