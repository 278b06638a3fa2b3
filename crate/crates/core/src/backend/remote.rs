//! OpenAI-style chat-completion client.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{BackendError, CompletionParams, ModelBackend, PromptBundle};

pub const DEFAULT_API_KEY_ENV: &str = "GROUNDLOOP_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    pub timeout_ms: u64,
    /// Extra attempts after the first, on transport errors and 5xx only.
    pub max_retries: u32,
    pub backoff_ms: u64,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model: String::new(),
            timeout_ms: 30_000,
            max_retries: 2,
            backoff_ms: 500,
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
        }
    }
}

#[derive(Debug)]
pub struct RemoteBackend {
    config: RemoteConfig,
    api_key: String,
    agent: ureq::Agent,
}

impl RemoteBackend {
    /// Reads the API key from the configured environment variable.
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        if !(config.endpoint.starts_with("http://") || config.endpoint.starts_with("https://")) {
            return Err(BackendError::Config(format!("endpoint `{}` is not an http(s) URL", config.endpoint)));
        }
        if config.model.is_empty() {
            return Err(BackendError::Config("model is empty".into()));
        }
        if config.timeout_ms == 0 {
            return Err(BackendError::Config("timeout_ms must be positive".into()));
        }
        let api_key = std::env::var(&config.api_key_env)
            .map_err(|_| BackendError::Config(format!("environment variable {} is not set", config.api_key_env)))?;
        Ok(Self {
            config,
            api_key,
            agent: ureq::AgentBuilder::new().build(),
        })
    }

    /// Upper bound on the time one `complete` call may take.
    pub fn deadline(&self) -> Duration {
        Duration::from_millis(self.config.timeout_ms * (self.config.max_retries as u64 + 1))
    }

    fn body(&self, bundle: &PromptBundle, params: &CompletionParams) -> serde_json::Value {
        json!({
            "model": self.config.model,
            "messages": bundle.messages(),
            "max_tokens": params.max_tokens,
            "temperature": params.temperature,
            "seed": params.seed,
        })
    }
}

enum Attempt {
    Done(String),
    Retry(String),
    Fatal(String),
}

fn extract_content(v: &serde_json::Value) -> Option<String> {
    v.get("choices")?
        .get(0)?
        .get("message")?
        .get("content")?
        .as_str()
        .map(str::to_string)
}

impl ModelBackend for RemoteBackend {
    fn name(&self) -> &str {
        "remote"
    }

    fn complete(&self, bundle: &PromptBundle, params: &CompletionParams) -> Result<String, BackendError> {
        let started = Instant::now();
        let deadline = self.deadline();
        let body = self.body(bundle, params);
        let mut last_error = String::from("no attempt made");
        for i in 0..=self.config.max_retries {
            let remaining = deadline.saturating_sub(started.elapsed());
            if remaining.is_zero() {
                break;
            }
            let timeout = remaining.min(Duration::from_millis(self.config.timeout_ms));
            let mut req = self.agent.post(&self.config.endpoint).timeout(timeout);
            if !self.api_key.is_empty() {
                req = req.set("Authorization", &format!("Bearer {}", self.api_key));
            }
            let outcome = match req.send_json(&body) {
                Ok(resp) => match resp.into_json::<serde_json::Value>() {
                    Ok(v) => match extract_content(&v) {
                        Some(text) => Attempt::Done(text),
                        None => Attempt::Fatal("response has no choices[0].message.content".into()),
                    },
                    Err(e) => Attempt::Fatal(format!("unreadable response body: {e}")),
                },
                Err(ureq::Error::Status(code, _)) if code >= 500 => Attempt::Retry(format!("server error {code}")),
                Err(ureq::Error::Status(code, _)) => Attempt::Fatal(format!("request rejected with status {code}")),
                Err(ureq::Error::Transport(t)) => Attempt::Retry(format!("transport: {t}")),
            };
            match outcome {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fatal(msg) => return Err(BackendError::Failure(msg)),
                Attempt::Retry(msg) => last_error = msg,
            }
            if i < self.config.max_retries {
                let pause = Duration::from_millis(self.config.backoff_ms.saturating_mul(1 << i.min(16)));
                let remaining = deadline.saturating_sub(started.elapsed());
                std::thread::sleep(pause.min(remaining));
            }
        }
        Err(BackendError::Failure(format!(
            "gave up after {} attempt(s): {last_error}",
            self.config.max_retries + 1
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_errors() {
        let bad = RemoteConfig {
            endpoint: "ftp://x".into(),
            model: "m".into(),
            ..Default::default()
        };
        assert!(matches!(RemoteBackend::new(bad), Err(BackendError::Config(_))));
        let no_key = RemoteConfig {
            endpoint: "http://127.0.0.1:9".into(),
            model: "m".into(),
            api_key_env: "GROUNDLOOP_TEST_UNSET_KEY_VAR".into(),
            ..Default::default()
        };
        assert!(matches!(RemoteBackend::new(no_key), Err(BackendError::Config(_))));
    }
}
