use std::sync::Arc;

use super::{QueryContext, QueryOutcome, QueryStrategy, StrategyError, StrategyId};
use crate::oracle_llm::{ChatExchange, GenerationSettings, LlmClient, LlmError};
use crate::promptkit::{build_prompt, PromptConfig};
use crate::selection_parser::{parse_selection, Diagnostic, SelectionResult};
use crate::session::compute_window;

/// Model calls per iteration when the model refuses or answers with nothing.
const CALLS_PER_ITERATION: usize = 2;

/// Presents a window of the pool to the chat model and parses its pick.
///
/// The selection size written into the prompt is the iteration's batch size,
/// capped at the window length. An empty answer or refusal is re-asked once;
/// a second one yields a failed selection tagged `llm-fallback`, which the
/// session tops up at random.
#[derive(Debug)]
pub struct ActiveLlmStrategy {
    client: Arc<LlmClient>,
    prompt: PromptConfig,
    settings: GenerationSettings,
}

impl ActiveLlmStrategy {
    pub fn new(client: Arc<LlmClient>, prompt: PromptConfig, settings: GenerationSettings) -> Self {
        Self { client, prompt, settings }
    }

    pub fn prompt_config(&self) -> &PromptConfig {
        &self.prompt
    }

    fn refused_exchange(&self, prompt_text: &str) -> ChatExchange {
        let last = self.client.transcript().entries().pop();
        ChatExchange {
            prompt_text: prompt_text.to_string(),
            response_text: String::new(),
            model_id: self.client.model_id().to_string(),
            latency_ms: last.as_ref().map_or(0, |e| e.latency_ms),
            timestamp: last.map_or_else(chrono::Utc::now, |e| e.timestamp),
        }
    }
}

impl QueryStrategy for ActiveLlmStrategy {
    fn id(&self) -> StrategyId {
        StrategyId::ActiveLlm
    }

    fn query(&mut self, ctx: &QueryContext<'_>) -> Result<QueryOutcome, StrategyError> {
        let window = compute_window(ctx.pool, ctx.history, self.prompt.presented_batch_size, self.prompt.recap_mode)?;
        let k = ctx.k.min(window.len());
        if k == 0 {
            return Err(StrategyError::Validation("k must be at least 1".into()));
        }
        let config = PromptConfig { selection_size: k, ..self.prompt.clone() };
        let artifact = build_prompt(ctx.pool, &config, &window, Some(ctx.history))?;

        let mut exchanges = Vec::new();
        let mut reason = String::new();
        for _ in 0..CALLS_PER_ITERATION {
            match self.client.complete(&artifact, &self.settings) {
                Ok(exchange) => {
                    let selection = parse_selection(&exchange.response_text, &window, k);
                    exchanges.push(exchange);
                    return Ok(QueryOutcome {
                        presented: window,
                        selection,
                        exchanges,
                        strategy_id: StrategyId::ActiveLlm.to_string(),
                    });
                }
                Err(LlmError::EmptyResponse(why)) => {
                    tracing::warn!(iteration = ctx.iteration_number, %why, "model gave no answer");
                    exchanges.push(self.refused_exchange(&artifact.text));
                    reason = why;
                }
                Err(e) => return Err(e.into()),
            }
        }
        Ok(QueryOutcome {
            presented: window,
            selection: SelectionResult::failed(k, Diagnostic::LlmFallback { reason }),
            exchanges,
            strategy_id: StrategyId::ActiveLlm.to_string(),
        })
    }
}
