//! The active learning loop: one iteration picks a batch with a query
//! strategy, waits for labels, and folds them into the history.
//!
//! Iterations are split into [`Session::begin_iteration`] and
//! [`Session::submit_labels`] so a human annotator can sit between the two.
//! [`Session::run_iteration`] drives both halves with an [`Annotator`].

mod persist;
mod window;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{elapsed_ms, Clock};
use crate::corpus::Pool;
use crate::oracle_llm::{ChatExchange, GenerationSettings};
use crate::promptkit::PromptConfig;
use crate::seeds::derive_seed;
use crate::selection_parser::{top_up, SelectionResult, TopUpError};
use crate::strategies::{QueryContext, QueryStrategy, StrategyError, StrategySpec};

pub use persist::{load_session, save_session, EventLog, PersistError, SessionEvent, SessionStore, SCHEMA_VERSION};
pub use window::{compute_window, WindowError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration_number: usize,
    pub presented_indices: Vec<usize>,
    pub selection: SelectionResult,
    /// Every model call made for this iteration, including refused ones
    /// (recorded with an empty response).
    #[serde(default)]
    pub exchanges: Vec<ChatExchange>,
    pub strategy_id: String,
    pub wall_time_ms: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionHistory {
    pub iterations: Vec<IterationRecord>,
    pub labeled: BTreeMap<usize, String>,
    pub cursor_last_labeled: Option<usize>,
    pub cursor_last_presented: Option<usize>,
    /// Labeled count at which the strategy changed, for hybrid runs.
    #[serde(default)]
    pub switch_at_label: Option<usize>,
}

impl SessionHistory {
    pub fn labeled_set(&self) -> BTreeSet<usize> {
        self.labeled.keys().copied().collect()
    }

    pub fn labeled_count(&self) -> usize {
        self.labeled.len()
    }

    fn commit(&mut self, record: IterationRecord, labels: &BTreeMap<usize, String>) {
        if self.switch_at_label.is_none() {
            if let Some(previous) = self.iterations.last() {
                if previous.strategy_id != record.strategy_id {
                    self.switch_at_label = Some(self.labeled.len());
                }
            }
        }
        for (&index, label) in labels {
            self.labeled.insert(index, label.clone());
        }
        self.cursor_last_labeled = self.labeled.keys().next_back().copied();
        let presented_max = record.presented_indices.iter().copied().max();
        self.cursor_last_presented = self.cursor_last_presented.max(presented_max);
        self.iterations.push(record);
    }
}

/// One line of a labeled-set export, for training an external model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledRecord {
    pub index: usize,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_pair: Option<String>,
    pub label: String,
}

/// Labeled instances in index order.
pub fn labeled_records(pool: &Pool, history: &SessionHistory) -> Vec<LabeledRecord> {
    history
        .labeled
        .iter()
        .filter_map(|(&index, label)| {
            pool.get(index).map(|instance| LabeledRecord {
                index,
                text: instance.text.clone(),
                text_pair: instance.text_pair.clone(),
                label: label.clone(),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    /// Dataset manifest the pool comes from, when the session was created
    /// from one.
    #[serde(default)]
    pub manifest: Option<std::path::PathBuf>,
    #[serde(default)]
    pub prompt: PromptConfig,
    #[serde(default)]
    pub settings: GenerationSettings,
    pub strategy: StrategySpec,
    /// Total number of labels to collect.
    pub budget: usize,
    /// Instances selected per iteration.
    pub step: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), SessionError> {
        if self.budget == 0 {
            return Err(SessionError::Config("budget must be at least 1".into()));
        }
        if self.step == 0 {
            return Err(SessionError::Config("step must be at least 1".into()));
        }
        self.prompt.validate().map_err(|e| SessionError::Config(e.to_string()))?;
        self.settings.validate().map_err(|e| SessionError::Config(e.to_string()))?;
        self.strategy.validate(self.budget).map_err(|e| SessionError::Config(e.to_string()))?;
        Ok(())
    }
}

/// An iteration whose batch was chosen but not yet fully labeled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendingIteration {
    pub iteration_number: usize,
    pub presented_indices: Vec<usize>,
    pub selection: SelectionResult,
    pub exchanges: Vec<ChatExchange>,
    pub strategy_id: String,
    pub wall_time_ms: u64,
    pub labels: BTreeMap<usize, String>,
}

impl PendingIteration {
    pub fn unlabeled_items(&self) -> Vec<usize> {
        self.selection.indices.iter().copied().filter(|i| !self.labels.contains_key(i)).collect()
    }

    pub fn is_complete(&self) -> bool {
        self.selection.indices.iter().all(|i| self.labels.contains_key(i))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    AwaitingIteration,
    AwaitingLabels,
    Complete,
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid session configuration: {0}")]
    Config(String),
    #[error("an annotation task is already open")]
    OpenTask,
    #[error("no annotation task is open")]
    NoOpenTask,
    #[error("label budget of {0} reached")]
    BudgetExhausted(usize),
    #[error("pool exhausted")]
    PoolExhausted,
    #[error("index {0} is not part of the open task")]
    NotInTask(usize),
    #[error("label `{label}` for index {index} is not in the label space")]
    LabelDomain { index: usize, label: String },
    #[error("oracle failed: {0}")]
    Oracle(String),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error("strategy broke an invariant: {0}")]
    Invariant(String),
}

/// Label source for [`Session::run_iteration`].
pub trait Annotator {
    fn annotate(&self, pool: &Pool, indices: &[usize]) -> Result<Vec<String>, SessionError>;
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SubmitOutcome {
    Partial { remaining: Vec<usize> },
    Completed { iteration_number: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub config: SessionConfig,
    pub history: SessionHistory,
    #[serde(default)]
    pub pending: Option<PendingIteration>,
    /// Set when a strategy could not produce any candidate.
    #[serde(default)]
    pub exhausted: bool,
}

impl Session {
    pub fn new(id: impl Into<String>, config: SessionConfig) -> Result<Self, SessionError> {
        config.validate()?;
        Ok(Self { id: id.into(), config, history: SessionHistory::default(), pending: None, exhausted: false })
    }

    pub fn status(&self) -> SessionStatus {
        if self.pending.is_some() {
            SessionStatus::AwaitingLabels
        } else if self.exhausted || self.history.labeled_count() >= self.config.budget {
            SessionStatus::Complete
        } else {
            SessionStatus::AwaitingIteration
        }
    }

    pub fn remaining_budget(&self) -> usize {
        self.config.budget.saturating_sub(self.history.labeled_count())
    }

    /// Queries the strategy for the next batch and opens an annotation task.
    pub fn begin_iteration(
        &mut self,
        pool: &Pool,
        strategy: &mut dyn QueryStrategy,
        clock: &dyn Clock,
    ) -> Result<&PendingIteration, SessionError> {
        if self.pending.is_some() {
            return Err(SessionError::OpenTask);
        }
        let labeled_count = self.history.labeled_count();
        if labeled_count >= self.config.budget {
            return Err(SessionError::BudgetExhausted(self.config.budget));
        }
        let unlabeled = pool.len().saturating_sub(labeled_count);
        if self.exhausted || unlabeled == 0 {
            self.exhausted = true;
            return Err(SessionError::PoolExhausted);
        }

        let started = clock.now();
        let iteration_number = self.history.iterations.len() + 1;
        let k = strategy.iteration_size(labeled_count, self.config.step, self.config.budget).min(unlabeled);
        let ctx = QueryContext {
            pool,
            history: &self.history,
            k,
            seed: derive_seed(self.config.seed, "query", iteration_number as u64),
            iteration_number,
        };
        let outcome = match strategy.query(&ctx) {
            Ok(outcome) => outcome,
            Err(StrategyError::Window(WindowError::Exhausted)) => {
                self.exhausted = true;
                return Err(SessionError::PoolExhausted);
            }
            Err(e) => return Err(e.into()),
        };

        let labeled = self.history.labeled_set();
        let mut selection = outcome.selection;
        if selection.needs_top_up() {
            let seed = derive_seed(self.config.seed, "top-up", iteration_number as u64);
            selection = match top_up(&selection, &outcome.presented, &labeled, seed) {
                Ok(filled) => filled,
                Err(TopUpError::Insufficient { partial, .. }) => partial,
                Err(TopUpError::NotDeficient(_)) => selection,
            };
        }
        check_selection(&selection, &outcome.presented, &labeled)?;
        if selection.indices.is_empty() {
            self.exhausted = true;
            return Err(SessionError::PoolExhausted);
        }

        let pending = PendingIteration {
            iteration_number,
            presented_indices: outcome.presented,
            selection,
            exchanges: outcome.exchanges,
            strategy_id: outcome.strategy_id,
            wall_time_ms: elapsed_ms(started, clock.now()),
            labels: BTreeMap::new(),
        };
        Ok(self.pending.insert(pending))
    }

    /// Merges labels into the open task. The whole submission is rejected
    /// if any entry is invalid. Completing the task commits the iteration.
    pub fn submit_labels(
        &mut self,
        pool: &Pool,
        labels: &BTreeMap<usize, String>,
    ) -> Result<SubmitOutcome, SessionError> {
        let pending = self.pending.as_mut().ok_or(SessionError::NoOpenTask)?;
        for (&index, label) in labels {
            if !pending.selection.indices.contains(&index) {
                return Err(SessionError::NotInTask(index));
            }
            if !pool.contains_label(label) {
                return Err(SessionError::LabelDomain { index, label: label.clone() });
            }
        }
        for (&index, label) in labels {
            pending.labels.insert(index, label.clone());
        }
        if !pending.is_complete() {
            return Ok(SubmitOutcome::Partial { remaining: pending.unlabeled_items() });
        }

        let pending = self.pending.take().expect("checked above");
        let iteration_number = pending.iteration_number;
        let record = IterationRecord {
            iteration_number,
            presented_indices: pending.presented_indices,
            selection: pending.selection,
            exchanges: pending.exchanges,
            strategy_id: pending.strategy_id,
            wall_time_ms: pending.wall_time_ms,
        };
        self.history.commit(record, &pending.labels);
        Ok(SubmitOutcome::Completed { iteration_number })
    }

    pub fn run_iteration(
        &mut self,
        pool: &Pool,
        strategy: &mut dyn QueryStrategy,
        annotator: &dyn Annotator,
        clock: &dyn Clock,
    ) -> Result<IterationRecord, SessionError> {
        let indices = self.begin_iteration(pool, strategy, clock)?.selection.indices.clone();
        let labels = match annotator.annotate(pool, &indices) {
            Ok(labels) if labels.len() == indices.len() => labels,
            Ok(labels) => {
                self.pending = None;
                return Err(SessionError::Oracle(format!("expected {} labels, got {}", indices.len(), labels.len())));
            }
            Err(e) => {
                self.pending = None;
                return Err(e);
            }
        };
        let labels: BTreeMap<usize, String> = indices.into_iter().zip(labels).collect();
        self.submit_labels(pool, &labels)?;
        Ok(self.history.iterations.last().cloned().expect("iteration committed"))
    }

    /// Iterates until the budget is spent or the pool runs dry.
    pub fn run_to_budget(
        &mut self,
        pool: &Pool,
        strategy: &mut dyn QueryStrategy,
        annotator: &dyn Annotator,
        clock: &dyn Clock,
        mut after_iteration: impl FnMut(&Session) -> Result<(), SessionError>,
    ) -> Result<(), SessionError> {
        loop {
            match self.run_iteration(pool, strategy, annotator, clock) {
                Ok(_) => after_iteration(self)?,
                Err(SessionError::BudgetExhausted(_) | SessionError::PoolExhausted) => return Ok(()),
                Err(e) => return Err(e),
            }
        }
    }
}

fn check_selection(
    selection: &SelectionResult,
    presented: &[usize],
    labeled: &BTreeSet<usize>,
) -> Result<(), SessionError> {
    let presented: BTreeSet<usize> = presented.iter().copied().collect();
    let mut seen = BTreeSet::new();
    for &index in &selection.indices {
        if !presented.contains(&index) {
            return Err(SessionError::Invariant(format!("index {index} was not presented")));
        }
        if labeled.contains(&index) {
            return Err(SessionError::Invariant(format!("index {index} is already labeled")));
        }
        if !seen.insert(index) {
            return Err(SessionError::Invariant(format!("index {index} selected twice")));
        }
    }
    Ok(())
}
