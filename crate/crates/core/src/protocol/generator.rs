use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GenerateError {
    #[error("request timed out")]
    Timeout,
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("empty response")]
    Empty,
    #[error("generator gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: Box<GenerateError> },
    #[error("remote generation is not compiled in")]
    Unavailable,
}

/// Source of candidate protocol text.
pub trait Generator {
    fn generate(&mut self, prompt: &str) -> Result<String, GenerateError>;
}

/// One scripted reply: candidate text, or a simulated transport failure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StubResponse {
    Text(String),
    Failure { fail: String },
}

/// Replays a fixed table of responses in order, wrapping around.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StubGenerator {
    responses: Vec<StubResponse>,
    next: usize,
}

impl StubGenerator {
    pub fn new(responses: Vec<StubResponse>) -> Self {
        Self { responses, next: 0 }
    }

    pub fn from_texts<I: IntoIterator<Item = S>, S: Into<String>>(texts: I) -> Self {
        Self::new(texts.into_iter().map(|t| StubResponse::Text(t.into())).collect())
    }

    /// A JSON array whose items are strings or `{"fail": "..."}` objects.
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        Ok(Self::new(serde_json::from_str(text)?))
    }
}

impl Generator for StubGenerator {
    fn generate(&mut self, _prompt: &str) -> Result<String, GenerateError> {
        if self.responses.is_empty() {
            return Err(GenerateError::Empty);
        }
        let r = &self.responses[self.next % self.responses.len()];
        self.next += 1;
        match r {
            StubResponse::Text(t) if t.trim().is_empty() => Err(GenerateError::Empty),
            StubResponse::Text(t) => Ok(t.clone()),
            StubResponse::Failure { fail } => Err(GenerateError::Transport(fail.clone())),
        }
    }
}

/// Settings for the remote chat-style endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteConfig {
    pub base_url: String,
    pub path: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub attempts: u32,
    pub backoff_ms: u64,
    pub timeout_ms: u64,
}

pub const API_KEY_ENV: &str = "NEUROLOOP_API_KEY";

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8080".into(),
            path: "/v1/generate".into(),
            model: "default".into(),
            api_key_env: API_KEY_ENV.into(),
            attempts: 3,
            backoff_ms: 1000,
            timeout_ms: 30_000,
        }
    }
}

#[derive(Serialize)]
struct Request<'a> {
    model: &'a str,
    prompt: &'a str,
}

#[derive(Deserialize)]
struct Response {
    text: String,
}

/// Retry `call` up to `attempts` times with doubling waits from `backoff`.
pub fn with_retries<F>(attempts: u32, backoff: Duration, mut call: F) -> Result<String, GenerateError>
where
    F: FnMut() -> Result<String, GenerateError>,
{
    let attempts = attempts.max(1);
    let mut wait = backoff;
    let mut last = GenerateError::Empty;
    for i in 0..attempts {
        match call() {
            Ok(t) => return Ok(t),
            Err(e) => {
                log::warn!("generator attempt {} of {attempts} failed: {e}", i + 1);
                last = e;
            }
        }
        if i + 1 < attempts {
            std::thread::sleep(wait);
            wait *= 2;
        }
    }
    Err(GenerateError::Exhausted {
        attempts,
        last: Box::new(last),
    })
}

/// HTTP JSON client: posts `{"model", "prompt"}` and reads `{"text"}`.
#[derive(Debug, Clone)]
pub struct RemoteGenerator {
    cfg: RemoteConfig,
}

impl RemoteGenerator {
    pub fn new(cfg: RemoteConfig) -> Self {
        Self { cfg }
    }

    #[cfg(feature = "remote")]
    fn attempt(&self, agent: &ureq::Agent, prompt: &str) -> Result<String, GenerateError> {
        let url = format!(
            "{}/{}",
            self.cfg.base_url.trim_end_matches('/'),
            self.cfg.path.trim_start_matches('/')
        );
        let body = serde_json::to_string(&Request {
            model: &self.cfg.model,
            prompt,
        })
        .expect("plain data");
        let mut req = agent.post(&url).header("content-type", "application/json");
        if let Ok(key) = std::env::var(&self.cfg.api_key_env) {
            req = req.header("authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send(&body).map_err(|e| match e {
            ureq::Error::Timeout(_) => GenerateError::Timeout,
            e => GenerateError::Transport(e.to_string()),
        })?;
        let status = resp.status();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| GenerateError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(GenerateError::Transport(format!("HTTP {status}")));
        }
        let r: Response = serde_json::from_str(&text)
            .map_err(|e| GenerateError::Transport(format!("bad response body: {e}")))?;
        if r.text.trim().is_empty() {
            return Err(GenerateError::Empty);
        }
        Ok(r.text)
    }
}

impl Generator for RemoteGenerator {
    #[cfg(feature = "remote")]
    fn generate(&mut self, prompt: &str) -> Result<String, GenerateError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(self.cfg.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        with_retries(
            self.cfg.attempts,
            Duration::from_millis(self.cfg.backoff_ms),
            || self.attempt(&agent, prompt),
        )
    }

    #[cfg(not(feature = "remote"))]
    fn generate(&mut self, _prompt: &str) -> Result<String, GenerateError> {
        Err(GenerateError::Unavailable)
    }
}
