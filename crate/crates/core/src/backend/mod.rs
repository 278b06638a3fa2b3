//! Model backends: a rule-driven scripted backend for reproducible runs and
//! an HTTP chat-completion client for real models.

mod prompt;
mod remote;
mod scripted;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use prompt::{Message, Phase, PromptBundle};
pub use remote::{RemoteBackend, RemoteConfig, DEFAULT_API_KEY_ENV};
pub use scripted::{golden_rules, glob_match, ScriptedBackend, ScriptedRule, FALLBACK_REPLY};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("backend failure: {0}")]
    Failure(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompletionParams {
    pub max_tokens: u32,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for CompletionParams {
    fn default() -> Self {
        Self {
            max_tokens: 256,
            temperature: 0.0,
            seed: 0,
        }
    }
}

/// A text-completion model. Implementations must tolerate concurrent calls.
pub trait ModelBackend: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, bundle: &PromptBundle, params: &CompletionParams) -> Result<String, BackendError>;
}
