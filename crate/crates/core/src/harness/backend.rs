//! Agent backends: an OpenAI-style chat endpoint plus offline mocks.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::HarnessError;
use crate::rng::{self, streams};
use crate::study::{Item, ResponseSchema};

pub const ENV_API_KEY: &str = "ALIGNBENCH_API_KEY";
pub const ENV_BASE_URL: &str = "ALIGNBENCH_BASE_URL";
pub const DEFAULT_BASE_URL: &str = "https://openrouter.ai/api/v1";

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub system: Option<String>,
    pub user: String,
    pub model: String,
    pub temperature: f64,
    /// Position of the trial in the persisted ordering; seeds per-trial randomness.
    pub trial_seq: u64,
    /// `<participant_id>/<trial_index>`.
    pub trial_key: String,
    pub items: Vec<Item>,
    pub attempt: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub backend_id: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("transient backend failure: {0}")]
    Transient(String),
    #[error("permanent backend failure: {0}")]
    Permanent(String),
}

pub trait AgentBackend: Send + Sync {
    fn id(&self) -> String;
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    HttpChat,
    MockEcho,
    MockScripted,
    Synthetic,
    Mixture,
}

fn first_admissible(schema: &ResponseSchema) -> String {
    match schema {
        ResponseSchema::Choice { options } => options.first().cloned().unwrap_or_default(),
        ResponseSchema::Scale { min, .. } => min.to_string(),
        ResponseSchema::Numeric { min, .. } => min.unwrap_or(0.0).to_string(),
    }
}

/// Echoes the user prompt, then answers each item with its first admissible value.
#[derive(Debug, Default, Clone)]
pub struct MockEcho;

impl AgentBackend for MockEcho {
    fn id(&self) -> String {
        "mock_echo".into()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let mut text = request.user.clone();
        for item in &request.items {
            text.push_str(&format!("\n{}={}", item.q_id, first_admissible(&item.schema)));
        }
        Ok(ChatResponse { text, backend_id: self.id() })
    }
}

/// Fixed responses keyed by trial, with optional injected failures.
#[derive(Debug, Default)]
pub struct MockScripted {
    pub name: String,
    pub script: BTreeMap<String, String>,
    pub default_response: String,
    /// Transient failures served before each trial's first success.
    pub fail_first: u32,
    pub permanent_failures: BTreeSet<String>,
    attempts: Mutex<BTreeMap<String, u32>>,
}

impl MockScripted {
    pub fn new(default_response: impl Into<String>) -> Self {
        MockScripted { name: "mock_scripted".into(), default_response: default_response.into(), ..Default::default() }
    }

    pub fn failing_first(mut self, n: u32) -> Self {
        self.fail_first = n;
        self
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

impl AgentBackend for MockScripted {
    fn id(&self) -> String {
        self.name.clone()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        if self.permanent_failures.contains(&request.trial_key) {
            return Err(BackendError::Permanent(format!("scripted failure for {}", request.trial_key)));
        }
        let seen = {
            let mut attempts = self.attempts.lock().expect("attempt map");
            let entry = attempts.entry(request.trial_key.clone()).or_insert(0);
            *entry += 1;
            *entry
        };
        if seen <= self.fail_first {
            return Err(BackendError::Transient(format!("scripted transient failure {seen}")));
        }
        let text = self.script.get(&request.trial_key).unwrap_or(&self.default_response).clone();
        Ok(ChatResponse { text, backend_id: self.id() })
    }
}

/// Null agent: uniformly random admissible answers, seeded per trial.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub seed: u64,
}

impl AgentBackend for Synthetic {
    fn id(&self) -> String {
        "synthetic".into()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let mut rng = rng::stream(self.seed, streams::BACKEND + request.trial_seq);
        let lines: Vec<String> = request
            .items
            .iter()
            .map(|item| {
                let v = match &item.schema {
                    ResponseSchema::Choice { options } if !options.is_empty() => {
                        options[rng.random_range(0..options.len())].clone()
                    }
                    ResponseSchema::Choice { .. } => String::new(),
                    ResponseSchema::Scale { min, max } => rng.random_range(*min..=*max).to_string(),
                    ResponseSchema::Numeric { min, max } => {
                        let (lo, hi) = (min.unwrap_or(0.0), max.unwrap_or(100.0));
                        format!("{:.1}", rng.random_range(lo..=hi))
                    }
                };
                format!("{}={}", item.q_id, v)
            })
            .collect();
        Ok(ChatResponse { text: lines.join("\n"), backend_id: self.id() })
    }
}

/// Serves each trial from a uniformly drawn member.
pub struct Mixture {
    members: Vec<Arc<dyn AgentBackend>>,
    seed: u64,
}

impl Mixture {
    pub fn new(members: Vec<Arc<dyn AgentBackend>>, seed: u64) -> Result<Self, HarnessError> {
        if members.len() < 2 {
            return Err(HarnessError::InvalidBackend("mixture needs at least two members".into()));
        }
        Ok(Mixture { members, seed })
    }

    pub fn pick(&self, trial_seq: u64) -> usize {
        // Separate from the synthetic-answer stream of the same trial.
        rng::stream(self.seed ^ 0x9e37_79b9_7f4a_7c15, streams::BACKEND + trial_seq).random_range(0..self.members.len())
    }
}

impl AgentBackend for Mixture {
    fn id(&self) -> String {
        let ids: Vec<String> = self.members.iter().map(|m| m.id()).collect();
        format!("mixture[{}]", ids.join(","))
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.members[self.pick(request.trial_seq)].complete(request)
    }
}

#[derive(Debug, Clone)]
pub struct HttpChatConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl HttpChatConfig {
    /// Base URL and key from the environment, falling back to the public gateway.
    pub fn from_env() -> Self {
        HttpChatConfig {
            base_url: std::env::var(ENV_BASE_URL).unwrap_or_else(|_| DEFAULT_BASE_URL.to_string()),
            api_key: std::env::var(ENV_API_KEY).ok(),
            timeout: Duration::from_secs(120),
        }
    }
}

/// Chat-completions client (`POST {base}/chat/completions`).
pub struct HttpChat {
    config: HttpChatConfig,
    agent: ureq::Agent,
}

impl HttpChat {
    pub fn new(config: HttpChatConfig) -> Result<Self, HarnessError> {
        if config.base_url.trim().is_empty() {
            return Err(HarnessError::InvalidBackend("http_chat requires a base URL".into()));
        }
        let agent = ureq::Agent::new_with_config(
            ureq::Agent::config_builder()
                .http_status_as_error(false)
                .timeout_global(Some(config.timeout))
                .build(),
        );
        Ok(HttpChat { config, agent })
    }

    pub fn request_body(request: &ChatRequest) -> Value {
        let mut messages = Vec::new();
        if let Some(system) = &request.system {
            messages.push(json!({"role": "system", "content": system}));
        }
        messages.push(json!({"role": "user", "content": request.user}));
        json!({"model": request.model, "temperature": request.temperature, "messages": messages})
    }
}

impl AgentBackend for HttpChat {
    fn id(&self) -> String {
        format!("http_chat@{}", self.config.base_url)
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        if request.model.is_empty() {
            return Err(BackendError::Permanent("http_chat requires a model id".into()));
        }
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let mut req = self.agent.post(&url).header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(Self::request_body(request))
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(|e| BackendError::Transient(e.to_string()))?;
        match status {
            200..=299 => {}
            408 | 409 | 425 | 429 | 500..=599 => return Err(BackendError::Transient(format!("HTTP {status}: {body}"))),
            _ => return Err(BackendError::Permanent(format!("HTTP {status}: {body}"))),
        }
        let v: Value = serde_json::from_str(&body).map_err(|e| BackendError::Permanent(format!("bad JSON: {e}")))?;
        let text = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| BackendError::Permanent("response without choices[0].message.content".into()))?;
        let served = v["model"].as_str().unwrap_or(&request.model);
        Ok(ChatResponse { text: text.to_string(), backend_id: format!("http_chat:{served}") })
    }
}
