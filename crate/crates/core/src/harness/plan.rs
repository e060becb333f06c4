use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{HarnessError, Metric};
use crate::oracle_llm::EndpointDescriptor;
use crate::promptkit::PromptConfig;
use crate::strategies::{ProxyParams, StrategySpec};

/// A strategy in a plan file: either a short form (`"pe"`,
/// `"hybrid:50:pe"`) or a full table with `id` and `params`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StrategyEntry {
    Short(String),
    Full(StrategySpec),
}

impl StrategyEntry {
    pub fn spec(&self) -> Result<StrategySpec, HarnessError> {
        match self {
            StrategyEntry::Short(s) => s.parse().map_err(|e| HarnessError::Plan(format!("strategy `{s}`: {e}"))),
            StrategyEntry::Full(spec) => Ok(spec.clone()),
        }
    }
}

/// Successor model evaluated on the test split at every checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuccessorParams {
    pub l2: f64,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for SuccessorParams {
    fn default() -> Self {
        let p = ProxyParams::default();
        Self { l2: p.l2, epochs: p.epochs, lr: p.lr }
    }
}

/// Experiment plan file (TOML).
///
/// ```toml
/// manifest = "data/manifest.toml"
/// strategies = ["random", "pe", "hybrid:50:pe"]
/// budget = 300
/// step = 25
/// num_data_randomizations = 5
/// num_model_seeds = 5
/// metric = "accuracy"
/// output_dir = "runs/agnews"
///
/// [prompt]
/// cot_mode = "step_by_step"
///
/// [llm]
/// kind = "simulated"
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub manifest: PathBuf,
    pub strategies: Vec<StrategyEntry>,
    pub budget: usize,
    pub step: usize,
    #[serde(default = "one")]
    pub num_data_randomizations: usize,
    #[serde(default = "one")]
    pub num_model_seeds: usize,
    #[serde(default)]
    pub metric: Metric,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    /// Labeled-count spacing of evaluation checkpoints; defaults to `step`.
    #[serde(default)]
    pub eval_every: Option<usize>,
    #[serde(default)]
    pub prompt: PromptConfig,
    /// Inline endpoint description, used by LLM strategies.
    #[serde(default)]
    pub llm: Option<EndpointDescriptor>,
    /// Endpoint descriptor file, as an alternative to `llm`.
    #[serde(default)]
    pub llm_file: Option<PathBuf>,
    #[serde(default)]
    pub successor: SuccessorParams,
    #[serde(skip)]
    base_dir: PathBuf,
}

fn one() -> usize {
    1
}

impl ExperimentPlan {
    pub fn new(manifest: impl Into<PathBuf>, strategies: Vec<StrategySpec>, budget: usize, step: usize) -> Self {
        Self {
            manifest: manifest.into(),
            strategies: strategies.into_iter().map(StrategyEntry::Full).collect(),
            budget,
            step,
            num_data_randomizations: 1,
            num_model_seeds: 1,
            metric: Metric::default(),
            output_dir: None,
            seed: 0,
            eval_every: None,
            prompt: PromptConfig::default(),
            llm: None,
            llm_file: None,
            successor: SuccessorParams::default(),
            base_dir: PathBuf::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let raw = std::fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.to_owned(), source })?;
        let mut plan: Self =
            toml::from_str(&raw).map_err(|e| HarnessError::Plan(format!("{}: {e}", path.display())))?;
        plan.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        plan.validate()?;
        Ok(plan)
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = dir.into();
        self
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn specs(&self) -> Result<Vec<StrategySpec>, HarnessError> {
        self.strategies.iter().map(StrategyEntry::spec).collect()
    }

    pub fn eval_every(&self) -> usize {
        self.eval_every.unwrap_or(self.step)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Plan(m));
        if self.step == 0 || self.budget < self.step {
            return bad(format!("need budget >= step >= 1, got budget {} and step {}", self.budget, self.step));
        }
        if self.num_data_randomizations == 0 || self.num_model_seeds == 0 {
            return bad("seed counts must be at least 1".into());
        }
        if self.eval_every() == 0 {
            return bad("eval_every must be at least 1".into());
        }
        if self.strategies.is_empty() {
            return bad("plan lists no strategies".into());
        }
        if self.llm.is_some() && self.llm_file.is_some() {
            return bad("set either llm or llm_file, not both".into());
        }
        self.prompt.validate().map_err(|e| HarnessError::Plan(e.to_string()))?;
        let mut seen = std::collections::BTreeSet::new();
        for spec in self.specs()? {
            if !seen.insert(spec.label()) {
                return bad(format!("strategy {} is listed twice", spec.label()));
            }
            spec.validate(self.budget).map_err(|e| HarnessError::Plan(format!("{}: {e}", spec.label())))?;
        }
        Ok(())
    }

    pub fn endpoint(&self) -> Result<Option<EndpointDescriptor>, HarnessError> {
        match (&self.llm, &self.llm_file) {
            (Some(inline), _) => Ok(Some(inline.clone())),
            (None, Some(path)) => {
                Ok(Some(EndpointDescriptor::load(&self.resolve(path)).map_err(|e| HarnessError::Plan(e.to_string()))?))
            }
            (None, None) => Ok(None),
        }
    }

    /// SHA-256 of the plan's canonical JSON, ignoring where outputs go.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_string(&Self { output_dir: None, ..self.clone() }).expect("plan serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()).as_slice())
    }
}
