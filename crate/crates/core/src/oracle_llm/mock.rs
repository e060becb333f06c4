use std::collections::BTreeSet;
use std::sync::{Arc, Mutex, OnceLock};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;

use super::{ChatEndpoint, ChatRequest, EndpointError, LlmError};
use crate::seeds::derive_seed;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ScriptStep {
    Reply(String),
    TransportFailure(String),
    Refusal(String),
}

impl From<&str> for ScriptStep {
    fn from(text: &str) -> Self {
        ScriptStep::Reply(text.to_string())
    }
}

impl From<String> for ScriptStep {
    fn from(text: String) -> Self {
        ScriptStep::Reply(text)
    }
}

/// Replays canned responses in order and records every request it sees.
#[derive(Debug)]
pub struct ScriptedEndpoint {
    model_id: String,
    script: Vec<ScriptStep>,
    state: Mutex<MockState>,
}

#[derive(Debug, Default)]
struct MockState {
    cursor: usize,
    requests: Vec<ChatRequest>,
}

impl ScriptedEndpoint {
    pub fn new<I, S>(script: I) -> Result<Self, LlmError>
    where
        I: IntoIterator<Item = S>,
        S: Into<ScriptStep>,
    {
        let script: Vec<ScriptStep> = script.into_iter().map(Into::into).collect();
        if script.is_empty() {
            return Err(LlmError::Config("scripted endpoint needs at least one response".into()));
        }
        Ok(Self { model_id: "scripted-mock".into(), script, state: Mutex::default() })
    }

    pub fn recorded_requests(&self) -> Vec<ChatRequest> {
        self.state.lock().expect("mock lock").requests.clone()
    }

    pub fn recorded_prompts(&self) -> Vec<String> {
        self.recorded_requests().iter().map(|r| r.prompt().to_string()).collect()
    }

    pub fn remaining(&self) -> usize {
        self.script.len() - self.state.lock().expect("mock lock").cursor.min(self.script.len())
    }
}

impl ChatEndpoint for ScriptedEndpoint {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn send(&self, request: &ChatRequest) -> Result<String, EndpointError> {
        let mut state = self.state.lock().expect("mock lock");
        state.requests.push(request.clone());
        let Some(step) = self.script.get(state.cursor) else {
            return Err(EndpointError::Exhausted { calls: self.script.len() });
        };
        state.cursor += 1;
        match step {
            ScriptStep::Reply(text) => Ok(text.clone()),
            ScriptStep::TransportFailure(message) => Err(EndpointError::Transport(message.clone())),
            ScriptStep::Refusal(reason) => Err(EndpointError::Refused(reason.clone())),
        }
    }
}

pub fn scripted_mock<I, S>(script: I) -> Result<Arc<ScriptedEndpoint>, LlmError>
where
    I: IntoIterator<Item = S>,
    S: Into<ScriptStep>,
{
    ScriptedEndpoint::new(script).map(Arc::new)
}

/// Endpoint backed by a closure over the request.
pub struct ResponderEndpoint<F> {
    model_id: String,
    respond: F,
}

impl<F> ResponderEndpoint<F>
where
    F: Fn(&ChatRequest) -> Result<String, EndpointError> + Send + Sync,
{
    pub fn new(model_id: &str, respond: F) -> Self {
        Self { model_id: model_id.to_string(), respond }
    }
}

impl<F> ChatEndpoint for ResponderEndpoint<F>
where
    F: Fn(&ChatRequest) -> Result<String, EndpointError> + Send + Sync,
{
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn send(&self, request: &ChatRequest) -> Result<String, EndpointError> {
        (self.respond)(request)
    }
}

/// Offline stand-in for a model that follows the selection prompt: it reads
/// the requested count from "select exactly N", collects the `Index i:`
/// lines, drops indices named in an index recap, and answers with a seeded
/// draw of N of the rest. The draw is keyed by the prompt text, so equal
/// prompts get equal answers.
#[derive(Clone, Debug)]
pub struct SimulatedSelector {
    seed: u64,
}

impl SimulatedSelector {
    pub const MODEL_ID: &'static str = "simulated-selector";

    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn answer(&self, prompt: &str) -> Result<String, EndpointError> {
        static COUNT: OnceLock<Regex> = OnceLock::new();
        static LISTED: OnceLock<Regex> = OnceLock::new();
        static RECAP: OnceLock<Regex> = OnceLock::new();
        let count = COUNT.get_or_init(|| Regex::new(r"select exactly (\d+)").expect("valid regex"));
        let listed = LISTED.get_or_init(|| Regex::new(r"(?m)^Index (\d+):").expect("valid regex"));
        let recap = RECAP.get_or_init(|| Regex::new(r"in previous rounds: ([\d, ]+)\.").expect("valid regex"));

        let wanted: usize = count
            .captures(prompt)
            .and_then(|c| c[1].parse().ok())
            .ok_or_else(|| EndpointError::Refused("no selection size in prompt".into()))?;
        let excluded: BTreeSet<usize> = recap
            .captures(prompt)
            .map(|c| c[1].split(',').filter_map(|t| t.trim().parse().ok()).collect())
            .unwrap_or_default();
        let candidates: Vec<usize> =
            listed.captures_iter(prompt).filter_map(|c| c[1].parse().ok()).filter(|i| !excluded.contains(i)).collect();
        let take = wanted.min(candidates.len());
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, prompt, 0));
        let picked: Vec<String> =
            sample(&mut rng, candidates.len(), take).into_iter().map(|i| candidates[i].to_string()).collect();
        Ok(format!("I picked a spread of instances.\n\nSelected indices: {}", picked.join(", ")))
    }
}

impl ChatEndpoint for SimulatedSelector {
    fn model_id(&self) -> &str {
        Self::MODEL_ID
    }

    fn send(&self, request: &ChatRequest) -> Result<String, EndpointError> {
        self.answer(request.prompt())
    }
}
