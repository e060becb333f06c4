//! Chat-completions client for the LLM query model.
//!
//! [`LlmClient`] sends one user turn per call, retries transport failures
//! with exponential backoff, and appends every attempt to a [`Transcript`]
//! before returning. Refusals and empty answers are not retried here; they
//! surface as [`LlmError::EmptyResponse`] and the session decides what to do.

mod http;
mod mock;
mod transcript;

use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{elapsed_ms, Clock, SystemClock};
use crate::promptkit::PromptArtifact;

pub use http::{EndpointDescriptor, EndpointKind, HttpChatEndpoint};
pub use mock::{scripted_mock, ResponderEndpoint, ScriptStep, ScriptedEndpoint, SimulatedSelector};
pub use transcript::{AttemptOutcome, Transcript, TranscriptEntry};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationSettings {
    pub temperature: f64,
    pub top_p: f64,
    /// 0 disables top-k; the field is then left out of the request.
    pub top_k: u32,
    pub max_answer_tokens: u32,
    pub system_prompt: Option<String>,
    pub fresh_session: bool,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            top_p: 0.9,
            top_k: 0,
            max_answer_tokens: 2048,
            system_prompt: None,
            fresh_session: true,
        }
    }
}

impl GenerationSettings {
    pub fn validate(&self) -> Result<(), LlmError> {
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(LlmError::Settings(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(LlmError::Settings(format!("top_p must be in (0, 1], got {}", self.top_p)));
        }
        if self.max_answer_tokens == 0 {
            return Err(LlmError::Settings("max_answer_tokens must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: &str, content: impl Into<String>) -> Self {
        Self { role: role.to_string(), content: content.into() }
    }
}

/// Wire body of a chat-completions request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<u32>,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(model: &str, settings: &GenerationSettings, prior_turns: &[ChatMessage], prompt: &str) -> Self {
        let mut messages = Vec::with_capacity(prior_turns.len() + 2);
        if let Some(system) = &settings.system_prompt {
            messages.push(ChatMessage::new("system", system.clone()));
        }
        messages.extend_from_slice(prior_turns);
        messages.push(ChatMessage::new("user", prompt));
        Self {
            model: model.to_string(),
            messages,
            temperature: settings.temperature,
            top_p: settings.top_p,
            top_k: (settings.top_k > 0).then_some(settings.top_k),
            max_tokens: settings.max_answer_tokens,
        }
    }

    /// The last user turn.
    pub fn prompt(&self) -> &str {
        self.messages.iter().rev().find(|m| m.role == "user").map(|m| m.content.as_str()).unwrap_or_default()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EndpointError {
    /// Network trouble, timeouts, 429 and 5xx responses.
    #[error("transport error: {0}")]
    Transport(String),
    /// The model answered without content (filtered, refused, null body).
    #[error("model refused: {0}")]
    Refused(String),
    #[error("endpoint rejected the request with HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("scripted endpoint exhausted after {calls} responses")]
    Exhausted { calls: usize },
}

/// Anything that can answer a chat request.
pub trait ChatEndpoint: Send + Sync {
    fn model_id(&self) -> &str;
    fn send(&self, request: &ChatRequest) -> Result<String, EndpointError>;
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LlmError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("empty response or refusal from the model: {0}")]
    EmptyResponse(String),
    #[error("endpoint rejected the request with HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("scripted endpoint exhausted after {calls} responses")]
    ScriptExhausted { calls: usize },
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("invalid generation settings: {0}")]
    Settings(String),
    #[error("endpoint configuration: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub prompt_text: String,
    /// Verbatim, untrimmed.
    pub response_text: String,
    pub model_id: String,
    pub latency_ms: u64,
    pub timestamp: DateTime<Utc>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles after each further failure.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, base_delay: Duration::from_secs(1) }
    }
}

impl RetryPolicy {
    pub fn delay_after(&self, failed_attempt: u32) -> Duration {
        self.base_delay.saturating_mul(1u32 << failed_attempt.saturating_sub(1).min(16))
    }
}

pub struct LlmClient {
    endpoint: Arc<dyn ChatEndpoint>,
    retry: RetryPolicy,
    clock: Arc<dyn Clock>,
    transcript: Transcript,
    conversation: Mutex<Vec<ChatMessage>>,
}

impl std::fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmClient").field("model", &self.endpoint.model_id()).field("retry", &self.retry).finish()
    }
}

impl LlmClient {
    pub fn new(endpoint: Arc<dyn ChatEndpoint>) -> Self {
        Self {
            endpoint,
            retry: RetryPolicy::default(),
            clock: Arc::new(SystemClock),
            transcript: Transcript::in_memory(),
            conversation: Mutex::new(Vec::new()),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_transcript(mut self, transcript: Transcript) -> Self {
        self.transcript = transcript;
        self
    }

    pub fn model_id(&self) -> &str {
        self.endpoint.model_id()
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn complete(&self, prompt: &PromptArtifact, settings: &GenerationSettings) -> Result<ChatExchange, LlmError> {
        self.complete_text(&prompt.text, settings)
    }

    pub fn complete_text(&self, prompt: &str, settings: &GenerationSettings) -> Result<ChatExchange, LlmError> {
        settings.validate()?;
        if prompt.trim().is_empty() {
            return Err(LlmError::EmptyPrompt);
        }
        let prior = if settings.fresh_session {
            Vec::new()
        } else {
            self.conversation.lock().expect("conversation lock").clone()
        };
        let request = ChatRequest::new(self.endpoint.model_id(), settings, &prior, prompt);

        let mut attempt = 0;
        loop {
            attempt += 1;
            let started = self.clock.now();
            let result = self.endpoint.send(&request);
            let finished = self.clock.now();
            let latency_ms = elapsed_ms(started, finished);

            let outcome = match &result {
                Ok(text) => AttemptOutcome::Response { text: text.clone() },
                Err(e) => AttemptOutcome::Error { message: e.to_string() },
            };
            self.transcript.append(TranscriptEntry {
                attempt,
                model_id: self.endpoint.model_id().to_string(),
                prompt_text: prompt.to_string(),
                outcome,
                latency_ms,
                timestamp: started,
            });

            match result {
                Ok(text) if text.trim().is_empty() => {
                    return Err(LlmError::EmptyResponse("response body is empty".into()));
                }
                Ok(text) => {
                    if !settings.fresh_session {
                        let mut conversation = self.conversation.lock().expect("conversation lock");
                        conversation.push(ChatMessage::new("user", prompt));
                        conversation.push(ChatMessage::new("assistant", text.clone()));
                    }
                    return Ok(ChatExchange {
                        prompt_text: prompt.to_string(),
                        response_text: text,
                        model_id: self.endpoint.model_id().to_string(),
                        latency_ms,
                        timestamp: started,
                    });
                }
                Err(EndpointError::Transport(message)) => {
                    if attempt >= self.retry.max_attempts {
                        return Err(LlmError::Transport { attempts: attempt, message });
                    }
                    tracing::warn!(attempt, %message, "transport failure, retrying");
                    self.clock.sleep(self.retry.delay_after(attempt));
                }
                Err(EndpointError::Refused(reason)) => return Err(LlmError::EmptyResponse(reason)),
                Err(EndpointError::Rejected { status, body }) => return Err(LlmError::Rejected { status, body }),
                Err(EndpointError::Exhausted { calls }) => return Err(LlmError::ScriptExhausted { calls }),
            }
        }
    }
}
