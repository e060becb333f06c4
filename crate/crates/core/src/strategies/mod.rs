//! Query strategies: the LLM adapter, classical baselines, and the
//! cold-start hybrid.
//!
//! Uncertainty baselines (least confidence, prediction entropy, margin,
//! BALD) score the unlabeled pool with a softmax-regression proxy fit on the
//! current labels over externally supplied embeddings. BALD uses an ensemble
//! of bootstrap fits in place of dropout sampling. Before any label exists
//! they fall back to a seeded random draw.

mod active_llm;
mod baselines;
mod embedding;
mod hybrid;
mod kmeans;
mod proxy;
mod scores;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::corpus::{Manifest, Pool};
use crate::oracle_llm::{ChatExchange, EndpointDescriptor, GenerationSettings, LlmClient, LlmError};
use crate::promptkit::{PromptConfig, PromptError};
use crate::selection_parser::SelectionResult;
use crate::session::{SessionHistory, WindowError};

pub use active_llm::ActiveLlmStrategy;
pub use baselines::{random_draw, KMeansStrategy, RandomStrategy, UncertaintyStrategy};
pub use embedding::EmbeddingMatrix;
pub use hybrid::{hybrid_schedule, HybridStrategy, Phase};
pub use kmeans::{kmeans, select_kmeans, squared_distance, KMeansFit, KMEANS_MAX_ITERATIONS, KMEANS_TOLERANCE};
pub use proxy::{fit_ensemble, fit_proxy_classifier, ProxyParams, SoftmaxRegression};
pub use scores::{
    score_bald, score_entropy, score_least_confidence, score_margin, select_uncertainty, validate_distribution,
    ProbabilityMatrix, ScoreOrder, NORMALIZATION_TOLERANCE,
};

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("requested {requested} items but only {available} are available")]
    Size { requested: usize, available: usize },
    #[error(transparent)]
    Window(#[from] WindowError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("missing resource: {0}")]
    Resource(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyId {
    Random,
    LeastConfidence,
    PredictionEntropy,
    Margin,
    Bald,
    EmbeddingKmeans,
    ActiveLlm,
    HybridColdstart,
}

impl StrategyId {
    pub const ALL: [StrategyId; 8] = [
        StrategyId::Random,
        StrategyId::LeastConfidence,
        StrategyId::PredictionEntropy,
        StrategyId::Margin,
        StrategyId::Bald,
        StrategyId::EmbeddingKmeans,
        StrategyId::ActiveLlm,
        StrategyId::HybridColdstart,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyId::Random => "random",
            StrategyId::LeastConfidence => "least_confidence",
            StrategyId::PredictionEntropy => "prediction_entropy",
            StrategyId::Margin => "margin",
            StrategyId::Bald => "bald",
            StrategyId::EmbeddingKmeans => "embedding_kmeans",
            StrategyId::ActiveLlm => "active_llm",
            StrategyId::HybridColdstart => "hybrid_coldstart",
        }
    }

    /// Strategies that can follow the LLM in a hybrid run.
    pub fn is_conventional(self) -> bool {
        !matches!(self, StrategyId::ActiveLlm | StrategyId::HybridColdstart)
    }

    pub fn needs_embeddings(self) -> bool {
        matches!(
            self,
            StrategyId::LeastConfidence
                | StrategyId::PredictionEntropy
                | StrategyId::Margin
                | StrategyId::Bald
                | StrategyId::EmbeddingKmeans
        )
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyId {
    type Err = StrategyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        let id = match key.as_str() {
            "lc" => StrategyId::LeastConfidence,
            "pe" | "entropy" => StrategyId::PredictionEntropy,
            "kmeans" => StrategyId::EmbeddingKmeans,
            "hybrid" => StrategyId::HybridColdstart,
            other => *StrategyId::ALL
                .iter()
                .find(|id| id.as_str() == other)
                .ok_or_else(|| StrategyError::Validation(format!("unknown strategy `{s}`")))?,
        };
        Ok(id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyParams {
    /// BALD ensemble members.
    pub ensemble_size: usize,
    pub l2: f64,
    pub epochs: usize,
    pub lr: f64,
    /// Labels collected by the LLM before a hybrid run switches over.
    pub seed_budget: Option<usize>,
    /// Strategy a hybrid run switches to.
    pub main: Option<StrategyId>,
}

impl Default for StrategyParams {
    fn default() -> Self {
        let proxy = ProxyParams::default();
        Self { ensemble_size: 5, l2: proxy.l2, epochs: proxy.epochs, lr: proxy.lr, seed_budget: None, main: None }
    }
}

impl StrategyParams {
    pub fn proxy(&self, seed: u64) -> ProxyParams {
        ProxyParams { l2: self.l2, epochs: self.epochs, lr: self.lr, seed }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub id: StrategyId,
    #[serde(default)]
    pub params: StrategyParams,
}

impl StrategySpec {
    pub fn new(id: StrategyId) -> Self {
        Self { id, params: StrategyParams::default() }
    }

    pub fn hybrid(seed_budget: usize, main: StrategyId) -> Self {
        let params = StrategyParams { seed_budget: Some(seed_budget), main: Some(main), ..StrategyParams::default() };
        Self { id: StrategyId::HybridColdstart, params }
    }

    pub fn validate(&self, budget: usize) -> Result<(), StrategyError> {
        self.params.proxy(0).validate()?;
        let p = &self.params;
        match self.id {
            StrategyId::HybridColdstart => {
                let seed_budget = p
                    .seed_budget
                    .ok_or_else(|| StrategyError::Validation("hybrid_coldstart needs seed_budget".into()))?;
                if seed_budget > budget {
                    return Err(StrategyError::Validation(format!(
                        "seed_budget {seed_budget} exceeds the budget {budget}"
                    )));
                }
                let main = p.main.ok_or_else(|| StrategyError::Validation("hybrid_coldstart needs main".into()))?;
                if !main.is_conventional() {
                    return Err(StrategyError::Validation(format!(
                        "{main} cannot be the main strategy of a hybrid run"
                    )));
                }
                if main == StrategyId::Bald && p.ensemble_size < 2 {
                    return Err(StrategyError::Validation("bald needs ensemble_size >= 2".into()));
                }
            }
            id => {
                if p.seed_budget.is_some() || p.main.is_some() {
                    return Err(StrategyError::Validation(format!(
                        "seed_budget and main only apply to hybrid_coldstart, not {id}"
                    )));
                }
                if id == StrategyId::Bald && p.ensemble_size < 2 {
                    return Err(StrategyError::Validation("bald needs ensemble_size >= 2".into()));
                }
            }
        }
        Ok(())
    }

    pub fn needs_embeddings(&self) -> bool {
        match self.id {
            StrategyId::HybridColdstart => self.params.main.is_some_and(StrategyId::needs_embeddings),
            id => id.needs_embeddings(),
        }
    }

    pub fn needs_llm(&self) -> bool {
        match self.id {
            StrategyId::ActiveLlm => true,
            StrategyId::HybridColdstart => self.params.seed_budget != Some(0),
            _ => false,
        }
    }

    /// Human-readable name, e.g. `hybrid_coldstart(50 -> prediction_entropy)`.
    pub fn label(&self) -> String {
        match (self.id, self.params.seed_budget, self.params.main) {
            (StrategyId::HybridColdstart, Some(n), Some(main)) => format!("hybrid_coldstart({n} -> {main})"),
            (id, _, _) => id.to_string(),
        }
    }
}

impl FromStr for StrategySpec {
    type Err = StrategyError;

    /// `pe`, `bald`, or `hybrid:50:pe`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            [id] => Ok(StrategySpec::new(id.parse()?)),
            [id, seed_budget, main] if id.parse::<StrategyId>()? == StrategyId::HybridColdstart => {
                let seed_budget = seed_budget
                    .parse()
                    .map_err(|_| StrategyError::Validation(format!("bad seed budget `{seed_budget}`")))?;
                Ok(StrategySpec::hybrid(seed_budget, main.parse()?))
            }
            _ => Err(StrategyError::Validation(format!("cannot parse strategy `{s}`"))),
        }
    }
}

/// What a strategy sees when asked for a batch.
pub struct QueryContext<'a> {
    pub pool: &'a Pool,
    pub history: &'a SessionHistory,
    /// Batch size for this iteration.
    pub k: usize,
    pub seed: u64,
    pub iteration_number: usize,
}

impl QueryContext<'_> {
    pub fn unlabeled(&self) -> Vec<usize> {
        (0..self.pool.len()).filter(|i| !self.history.labeled.contains_key(i)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryOutcome {
    /// Indices the strategy chose from.
    pub presented: Vec<usize>,
    pub selection: SelectionResult,
    pub exchanges: Vec<ChatExchange>,
    pub strategy_id: String,
}

pub trait QueryStrategy: Send {
    fn id(&self) -> StrategyId;

    fn query(&mut self, ctx: &QueryContext<'_>) -> Result<QueryOutcome, StrategyError>;

    /// Labels to request next, given how many exist.
    fn iteration_size(&self, labeled: usize, step: usize, budget: usize) -> usize {
        step.min(budget.saturating_sub(labeled))
    }
}

/// Everything a strategy may need at construction time.
#[derive(Clone, Debug, Default)]
pub struct StrategyResources {
    pub llm: Option<Arc<LlmClient>>,
    /// Keyed by pool index (see [`EmbeddingMatrix::aligned_to`]).
    pub embeddings: Option<Arc<EmbeddingMatrix>>,
    pub prompt: PromptConfig,
    pub settings: GenerationSettings,
}

impl StrategyResources {
    /// Loads what `spec` needs for a pool read from `manifest`: the pool's
    /// embeddings realigned to its order and a client for `endpoint`.
    pub fn for_pool(
        spec: &StrategySpec,
        manifest: &Manifest,
        pool: &Pool,
        prompt: &PromptConfig,
        endpoint: Option<&EndpointDescriptor>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, StrategyError> {
        let embeddings = if spec.needs_embeddings() {
            let path = manifest
                .embeddings
                .as_ref()
                .ok_or_else(|| StrategyError::Resource(format!("{} needs embeddings in the manifest", spec.label())))?;
            Some(Arc::new(EmbeddingMatrix::load(&manifest.resolve(path))?.aligned_to(pool)?))
        } else {
            None
        };
        let llm = if spec.needs_llm() {
            let endpoint =
                endpoint.ok_or_else(|| StrategyError::Resource(format!("{} needs an LLM endpoint", spec.label())))?;
            Some(Arc::new(LlmClient::new(endpoint.connect()?).with_clock(clock)))
        } else {
            None
        };
        let settings = endpoint.map(|e| e.settings.clone()).unwrap_or_default();
        Ok(Self { llm, embeddings, prompt: prompt.clone(), settings })
    }
}

pub fn build_strategy(
    spec: &StrategySpec,
    resources: &StrategyResources,
) -> Result<Box<dyn QueryStrategy>, StrategyError> {
    let embeddings =
        || resources.embeddings.clone().ok_or_else(|| StrategyError::Resource(format!("{} needs embeddings", spec.id)));
    let llm =
        || resources.llm.clone().ok_or_else(|| StrategyError::Resource(format!("{} needs an LLM endpoint", spec.id)));
    let strategy: Box<dyn QueryStrategy> = match spec.id {
        StrategyId::Random => Box::new(RandomStrategy),
        StrategyId::LeastConfidence | StrategyId::PredictionEntropy | StrategyId::Margin | StrategyId::Bald => {
            Box::new(UncertaintyStrategy::new(spec.id, embeddings()?, &spec.params)?)
        }
        StrategyId::EmbeddingKmeans => Box::new(KMeansStrategy::new(embeddings()?)),
        StrategyId::ActiveLlm => {
            Box::new(ActiveLlmStrategy::new(llm()?, resources.prompt.clone(), resources.settings.clone()))
        }
        StrategyId::HybridColdstart => {
            let seed_budget = spec
                .params
                .seed_budget
                .ok_or_else(|| StrategyError::Validation("hybrid_coldstart needs seed_budget".into()))?;
            let main_id =
                spec.params.main.ok_or_else(|| StrategyError::Validation("hybrid_coldstart needs main".into()))?;
            let main_spec = StrategySpec {
                id: main_id,
                params: StrategyParams { seed_budget: None, main: None, ..spec.params.clone() },
            };
            let main = build_strategy(&main_spec, resources)?;
            let seed: Option<Box<dyn QueryStrategy>> = if seed_budget > 0 {
                Some(Box::new(ActiveLlmStrategy::new(llm()?, resources.prompt.clone(), resources.settings.clone())))
            } else {
                None
            };
            Box::new(HybridStrategy::new(seed_budget, seed, main))
        }
    };
    Ok(strategy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip() {
        for id in StrategyId::ALL {
            assert_eq!(id.as_str().parse::<StrategyId>().unwrap(), id);
            let json = serde_json::to_string(&id).unwrap();
            assert_eq!(json, format!("\"{id}\""));
        }
        assert_eq!("PE".parse::<StrategyId>().unwrap(), StrategyId::PredictionEntropy);
        assert!("coreset".parse::<StrategyId>().is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(StrategySpec::hybrid(50, StrategyId::PredictionEntropy).validate(300).is_ok());
        assert!(StrategySpec::hybrid(301, StrategyId::PredictionEntropy).validate(300).is_err());
        assert!(StrategySpec::hybrid(50, StrategyId::ActiveLlm).validate(300).is_err());
        let mut bald = StrategySpec::new(StrategyId::Bald);
        bald.params.ensemble_size = 1;
        assert!(bald.validate(10).is_err());
        let mut random = StrategySpec::new(StrategyId::Random);
        random.params.seed_budget = Some(3);
        assert!(random.validate(10).is_err());
    }

    #[test]
    fn spec_from_str() {
        let spec: StrategySpec = "hybrid:50:pe".parse().unwrap();
        assert_eq!(spec, StrategySpec::hybrid(50, StrategyId::PredictionEntropy));
        assert_eq!(spec.label(), "hybrid_coldstart(50 -> prediction_entropy)");
        assert!("random:1".parse::<StrategySpec>().is_err());
    }

    #[test]
    fn params_reject_unknown_keys() {
        let err = serde_json::from_str::<StrategyParams>(r#"{"ensemble": 3}"#);
        assert!(err.is_err());
        let ok: StrategyParams = serde_json::from_str(r#"{"ensemble_size": 3}"#).unwrap();
        assert_eq!(ok.ensemble_size, 3);
        assert_eq!(ok.epochs, ProxyParams::default().epochs);
    }
}
