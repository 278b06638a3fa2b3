//! TOML run configuration.
//!
//! ```toml
//! seed = 7
//!
//! [agent.flags]
//! disable_memory = false
//!
//! [backend]
//! kind = "remote"
//! endpoint = "http://localhost:8000/v1/chat/completions"
//! model = "some-model"
//! timeout_ms = 30000
//! max_retries = 2
//! ```
//!
//! The API key is read from the environment variable named by
//! `backend.api_key_env`; a key in the file is rejected.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, AgentError};
use crate::backend::{BackendError, ModelBackend, RemoteBackend, RemoteConfig, ScriptedBackend};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Scripted,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// JSON rule list placed ahead of the golden rules (scripted only).
    pub script: Option<PathBuf>,
    pub endpoint: String,
    pub model: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub api_key_env: String,
}

impl Default for BackendConfig {
    fn default() -> Self {
        let r = RemoteConfig::default();
        Self {
            kind: BackendKind::Scripted,
            script: None,
            endpoint: r.endpoint,
            model: r.model,
            timeout_ms: r.timeout_ms,
            max_retries: r.max_retries,
            backoff_ms: r.backoff_ms,
            api_key_env: r.api_key_env,
        }
    }
}

impl BackendConfig {
    pub fn remote(&self) -> RemoteConfig {
        RemoteConfig {
            endpoint: self.endpoint.clone(),
            model: self.model.clone(),
            timeout_ms: self.timeout_ms,
            max_retries: self.max_retries,
            backoff_ms: self.backoff_ms,
            api_key_env: self.api_key_env.clone(),
        }
    }

    /// A fresh backend. Scripted backends carry per-session rule state, so
    /// call this once per session.
    pub fn build(&self) -> Result<Arc<dyn ModelBackend>, BackendError> {
        match self.kind {
            BackendKind::Scripted => {
                let backend = match &self.script {
                    Some(path) => {
                        let text = std::fs::read_to_string(path)
                            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
                        let overrides = ScriptedBackend::from_json(&text)?.rules().to_vec();
                        ScriptedBackend::with_overrides(overrides)
                    }
                    None => ScriptedBackend::golden(),
                };
                Ok(Arc::new(backend))
            }
            BackendKind::Remote => Ok(Arc::new(RemoteBackend::new(self.remote())?)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub agent: AgentConfig,
    pub backend: BackendConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, AgentError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| AgentError::Config(e.message().to_string()))?;
        cfg.agent.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, AgentError> {
        let text = std::fs::read_to_string(path).map_err(|e| AgentError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(script) = &cfg.backend.script {
            if script.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.backend.script = Some(dir.join(script));
                }
            }
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_backend_keys() {
        let cfg = RunConfig::from_toml(
            r#"
seed = 3
[agent.flags]
disable_tools = true
[agent.perception]
margin = 0.1
[backend]
kind = "remote"
endpoint = "http://localhost:1/v1/chat/completions"
model = "m"
timeout_ms = 100
max_retries = 1
"#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 3);
        assert!(cfg.agent.flags.disable_tools);
        assert_eq!(cfg.agent.perception.margin, 0.1);
        assert_eq!(cfg.backend.kind, BackendKind::Remote);
        assert_eq!(cfg.backend.remote().max_retries, 1);
    }

    #[test]
    fn rejects_inline_key_and_bad_values() {
        assert!(RunConfig::from_toml("[backend]\napi_key = \"sk-1\"").is_err());
        assert!(RunConfig::from_toml("[agent.memory]\nk_turns = 0").is_err());
        assert!(RunConfig::from_toml("[agent.perception]\ndetector = \"nope\"").is_err());
    }

    #[test]
    fn default_builds_scripted() {
        let b = RunConfig::default().backend.build().unwrap();
        assert_eq!(b.name(), "scripted");
    }
}
