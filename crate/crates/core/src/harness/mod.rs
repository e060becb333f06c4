//! Simulated experiments: every plan cell (data randomization x strategy)
//! runs a full session against a perfect annotator, and a successor model
//! fit on the labels collected so far is scored on the held-out split at
//! regular checkpoints.

mod metrics;
mod plan;
mod run;
mod synthetic;

use std::path::PathBuf;

use thiserror::Error;

use crate::corpus::{CorpusError, Pool};
use crate::oracle_llm::LlmError;
use crate::session::{Annotator, SessionError};
use crate::strategies::StrategyError;

pub use metrics::{compute_metrics, mean_sd, Metric};
pub use plan::{ExperimentPlan, StrategyEntry, SuccessorParams};
pub use run::{
    curves_csv, load_report, render_summary, run_experiment, run_experiment_with, write_outputs, AggregatePoint,
    CellReport, CellStatus, CurvePoint, ExperimentInputs, ExperimentOutput, LabelSet, MetricReport, StrategyReport,
};
pub use synthetic::SyntheticSpec;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("{predictions} predictions for {gold} gold labels")]
    Shape { predictions: usize, gold: usize },
    #[error("simulation error: {0}")]
    Simulation(String),
    #[error("malformed report: {0}")]
    Format(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

/// Gold labels of `indices`, verbatim.
pub fn simulate_oracle(pool: &Pool, indices: &[usize]) -> Result<Vec<String>, HarnessError> {
    indices
        .iter()
        .map(|&index| {
            let instance = pool
                .get(index)
                .ok_or_else(|| HarnessError::Simulation(format!("index {index} is outside the pool")))?;
            instance
                .gold_label
                .clone()
                .ok_or_else(|| HarnessError::Simulation(format!("instance {index} has no gold label")))
        })
        .collect()
}

/// Perfect annotator backed by the pool's gold labels.
#[derive(Clone, Copy, Debug, Default)]
pub struct SimulatedOracle;

impl Annotator for SimulatedOracle {
    fn annotate(&self, pool: &Pool, indices: &[usize]) -> Result<Vec<String>, SessionError> {
        simulate_oracle(pool, indices).map_err(|e| SessionError::Oracle(e.to_string()))
    }
}
