use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{scripted_mock, ChatEndpoint, ChatRequest, EndpointError, GenerationSettings, LlmError, SimulatedSelector};

pub const DEFAULT_API_KEY_ENV: &str = "ACTIVELLM_API_KEY";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointKind {
    #[default]
    Http,
    Scripted,
    Simulated,
}

/// Endpoint descriptor file (TOML).
///
/// ```toml
/// base_url = "https://api.example.com/v1"
/// model = "gpt-4"
/// api_key_env = "ACTIVELLM_API_KEY"
///
/// [settings]
/// temperature = 0.7
/// ```
///
/// `kind = "scripted"` with a `responses` array yields an offline mock that
/// replays them in order; `kind = "simulated"` answers every selection prompt
/// with a seeded pick (see [`SimulatedSelector`]).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointDescriptor {
    pub kind: EndpointKind,
    pub base_url: String,
    pub model: String,
    pub api_key_env: Option<String>,
    pub timeout_secs: Option<u64>,
    pub settings: GenerationSettings,
    pub responses: Vec<String>,
    /// Seed of the simulated selector.
    pub seed: u64,
}

impl EndpointDescriptor {
    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Config(format!("cannot read {}: {e}", path.display())))?;
        let descriptor: Self = toml::from_str(&raw).map_err(|e| LlmError::Config(e.to_string()))?;
        descriptor.settings.validate()?;
        Ok(descriptor)
    }

    pub fn connect(&self) -> Result<Arc<dyn ChatEndpoint>, LlmError> {
        match self.kind {
            EndpointKind::Scripted => Ok(scripted_mock(self.responses.clone())?),
            EndpointKind::Simulated => Ok(Arc::new(SimulatedSelector::new(self.seed))),
            EndpointKind::Http => Ok(Arc::new(HttpChatEndpoint::from_descriptor(self)?)),
        }
    }
}

/// OpenAI-compatible `POST {base_url}/chat/completions`.
pub struct HttpChatEndpoint {
    url: String,
    model_id: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpChatEndpoint {
    pub fn from_descriptor(descriptor: &EndpointDescriptor) -> Result<Self, LlmError> {
        if descriptor.base_url.is_empty() || descriptor.model.is_empty() {
            return Err(LlmError::Config("base_url and model are required".into()));
        }
        let key_var = descriptor.api_key_env.as_deref().unwrap_or(DEFAULT_API_KEY_ENV);
        let api_key = std::env::var(key_var).ok().filter(|k| !k.is_empty());
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(descriptor.timeout_secs.unwrap_or(300)))
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(Self {
            url: format!("{}/chat/completions", descriptor.base_url.trim_end_matches('/')),
            model_id: descriptor.model.clone(),
            api_key,
            client,
        })
    }
}

impl ChatEndpoint for HttpChatEndpoint {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn send(&self, request: &ChatRequest) -> Result<String, EndpointError> {
        let mut builder = self.client.post(&self.url).json(request);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| EndpointError::Transport(e.to_string()))?;
        let status = response.status();
        let body = response.text().map_err(|e| EndpointError::Transport(e.to_string()))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(EndpointError::Transport(format!("HTTP {status}: {body}")));
        }
        if !status.is_success() {
            return Err(EndpointError::Rejected { status: status.as_u16(), body });
        }
        extract_content(&body)
    }
}

/// Pulls `choices[0].message.content` out of a completion body.
pub(crate) fn extract_content(body: &str) -> Result<String, EndpointError> {
    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| EndpointError::Transport(format!("malformed body: {e}")))?;
    let choice = value.get("choices").and_then(|c| c.get(0));
    let content = choice.and_then(|c| c.get("message")).and_then(|m| m.get("content")).and_then(|c| c.as_str());
    match content {
        Some(text) if !text.trim().is_empty() => Ok(text.to_string()),
        _ => {
            let reason = choice
                .and_then(|c| c.get("finish_reason"))
                .and_then(|r| r.as_str())
                .unwrap_or("no content")
                .to_string();
            Err(EndpointError::Refused(reason))
        }
    }
}
