//! Single point of contact with the decision-making language model.
//!
//! The gateway wraps an interchangeable backend (live chat-completions
//! endpoint, scripted response table, or programmatic policy) and records
//! every request/response pair, so runs can be audited and replayed.

use std::fmt;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Which loop phase a completion serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    TypeSelection,
    ObjectSelection,
    MemoryUpdate,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::TypeSelection => "type_selection",
            Phase::ObjectSelection => "object_selection",
            Phase::MemoryUpdate => "memory_update",
        };
        f.write_str(s)
    }
}

/// One completion request: the rendered prompt plus decoding settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub model: String,
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("script exhausted at iteration {iteration}")]
    ScriptExhausted { iteration: u32 },
    #[error("endpoint request failed after {attempts} attempts: {reason}")]
    Transport { attempts: u32, reason: String },
    #[error("endpoint returned malformed response: {0}")]
    MalformedResponse(String),
    #[error("cannot read script file {path}: {source}")]
    ScriptIo {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot fast-forward scripted agent past its {len}-entry script (wanted {wanted})")]
    BadCursor { len: usize, wanted: u64 },
}

/// A completion backend. `fast_forward` replays consumed calls after a
/// checkpoint resume; only stateful backends need it.
pub trait AgentBackend: Send {
    fn complete(&mut self, phase: Phase, request: &AgentRequest) -> Result<String, AgentError>;

    fn fast_forward(&mut self, _calls: u64) -> Result<(), AgentError> {
        Ok(())
    }
}

/// Fixed response table, optionally cycling. Each call pops the next entry
/// regardless of phase, which keeps scripts easy to author.
pub struct ScriptedAgent {
    responses: Vec<String>,
    cursor: usize,
    cycle: bool,
}

impl ScriptedAgent {
    pub fn new(responses: Vec<String>) -> Self {
        Self {
            responses,
            cursor: 0,
            cycle: false,
        }
    }

    pub fn cycling(responses: Vec<String>) -> Self {
        Self {
            responses,
            cursor: 0,
            cycle: true,
        }
    }

    /// Load a script file: responses separated by lines containing only
    /// `---`; a first line of `#cycle` makes the script repeat.
    pub fn from_script_file(path: &Path) -> Result<Self, AgentError> {
        let text = std::fs::read_to_string(path).map_err(|source| AgentError::ScriptIo {
            path: path.display().to_string(),
            source,
        })?;
        let mut lines = text.lines().peekable();
        let cycle = lines.peek() == Some(&"#cycle");
        if cycle {
            lines.next();
        }
        let mut responses = Vec::new();
        let mut current = Vec::new();
        for line in lines {
            if line.trim_end() == "---" {
                responses.push(current.join("\n"));
                current.clear();
            } else {
                current.push(line);
            }
        }
        if !current.is_empty() {
            responses.push(current.join("\n"));
        }
        Ok(Self {
            responses,
            cursor: 0,
            cycle,
        })
    }
}

impl AgentBackend for ScriptedAgent {
    fn complete(&mut self, _phase: Phase, _request: &AgentRequest) -> Result<String, AgentError> {
        if self.responses.is_empty() {
            return Err(AgentError::ScriptExhausted { iteration: 0 });
        }
        let index = if self.cycle {
            self.cursor % self.responses.len()
        } else if self.cursor < self.responses.len() {
            self.cursor
        } else {
            return Err(AgentError::ScriptExhausted { iteration: 0 });
        };
        self.cursor += 1;
        Ok(self.responses[index].clone())
    }

    fn fast_forward(&mut self, calls: u64) -> Result<(), AgentError> {
        if !self.cycle && calls as usize > self.responses.len() {
            return Err(AgentError::BadCursor {
                len: self.responses.len(),
                wanted: calls,
            });
        }
        self.cursor = calls as usize;
        Ok(())
    }
}

/// Programmatic backend: a closure over (phase, request).
pub struct FnAgent<F>(pub F);

impl<F> AgentBackend for FnAgent<F>
where
    F: FnMut(Phase, &AgentRequest) -> Result<String, AgentError> + Send,
{
    fn complete(&mut self, phase: Phase, request: &AgentRequest) -> Result<String, AgentError> {
        (self.0)(phase, request)
    }
}

/// Live endpoint settings. The credential is read from the named
/// environment variable, never from config values or flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub url: String,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_api_key_env() -> String {
    "PTSEARCH_API_KEY".to_string()
}

fn default_max_attempts() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    200
}

fn default_timeout_secs() -> u64 {
    120
}

/// Chat-completions-style HTTP client: one user message per request, first
/// choice's message text as the response. Transport failures and non-success
/// statuses retry with exponential backoff before surfacing a hard error.
pub struct HttpAgent {
    client: reqwest::blocking::Client,
    config: EndpointConfig,
    api_key: Option<String>,
}

impl HttpAgent {
    pub fn new(config: EndpointConfig) -> Self {
        let api_key = std::env::var(&config.api_key_env).ok();
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .expect("reqwest client builds with static settings");
        Self {
            client,
            config,
            api_key,
        }
    }
}

impl AgentBackend for HttpAgent {
    fn complete(&mut self, _phase: Phase, request: &AgentRequest) -> Result<String, AgentError> {
        let body = serde_json::json!({
            "model": request.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let mut last_error = String::new();
        for attempt in 0..self.config.max_attempts {
            if attempt > 0 {
                let delay = self.config.backoff_ms.saturating_mul(1 << (attempt - 1));
                std::thread::sleep(Duration::from_millis(delay));
            }
            let mut req = self.client.post(&self.config.url).json(&body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Ok(resp) if resp.status().is_success() => {
                    let value: serde_json::Value = resp
                        .json()
                        .map_err(|e| AgentError::MalformedResponse(e.to_string()))?;
                    let content = value["choices"][0]["message"]["content"].as_str();
                    return match content {
                        Some(text) => Ok(text.to_string()),
                        None => Err(AgentError::MalformedResponse(value.to_string())),
                    };
                }
                Ok(resp) => {
                    last_error = format!("status {}", resp.status());
                }
                Err(e) => {
                    last_error = e.to_string();
                }
            }
        }
        Err(AgentError::Transport {
            attempts: self.config.max_attempts,
            reason: last_error,
        })
    }
}

/// In-memory record of one completion.
#[derive(Debug, Clone)]
pub struct AgentCallRecord {
    pub iteration: u32,
    pub phase: Phase,
    pub prompt: String,
    pub response: String,
    pub latency: Duration,
    /// 0 for the first attempt of a phase; parse retries count up.
    pub attempt: u32,
}

/// Wraps a backend with request validation, call counting and tracing.
pub struct AgentGateway {
    backend: Box<dyn AgentBackend>,
    trace: Vec<AgentCallRecord>,
    calls: u64,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl AgentGateway {
    pub fn new(backend: Box<dyn AgentBackend>, model: &str) -> Self {
        Self {
            backend,
            trace: Vec::new(),
            calls: 0,
            model: model.to_string(),
            temperature: 0.0,
            max_tokens: 1024,
        }
    }

    pub fn complete(
        &mut self,
        iteration: u32,
        phase: Phase,
        attempt: u32,
        prompt: &str,
    ) -> Result<String, AgentError> {
        if prompt.is_empty() {
            return Err(AgentError::EmptyPrompt);
        }
        let request = AgentRequest {
            prompt: prompt.to_string(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            model: self.model.clone(),
        };
        let started = Instant::now();
        let response = self.backend.complete(phase, &request).map_err(|e| match e {
            AgentError::ScriptExhausted { .. } => AgentError::ScriptExhausted { iteration },
            other => other,
        })?;
        self.calls += 1;
        self.trace.push(AgentCallRecord {
            iteration,
            phase,
            prompt: prompt.to_string(),
            response: response.clone(),
            latency: started.elapsed(),
            attempt,
        });
        Ok(response)
    }

    pub fn calls(&self) -> u64 {
        self.calls
    }

    pub fn trace(&self) -> &[AgentCallRecord] {
        &self.trace
    }

    /// Restore the backend cursor after a checkpoint resume.
    pub fn fast_forward(&mut self, calls: u64) -> Result<(), AgentError> {
        self.backend.fast_forward(calls)?;
        self.calls = calls;
        Ok(())
    }

    /// Drop records from an aborted iteration so checkpoints see the
    /// pre-step call count.
    pub fn rollback(&mut self, calls: u64, trace_len: usize) {
        self.calls = calls;
        self.trace.truncate(trace_len);
    }
}
