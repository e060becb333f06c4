//! Fixture loading shared by the integration tests and the acceptance
//! runner. Paths resolve against `crates/core` from any crate in the
//! workspace.
#![allow(dead_code)]

pub mod math;
pub mod text;
pub mod windows;

use std::path::{Path, PathBuf};

use serde::Deserialize;

use activellm_core::corpus::{Manifest, Pool};
use activellm_core::promptkit::{build_prompt, PromptConfig};
use activellm_core::selection_parser::SelectionStatus;
use activellm_core::session::SessionHistory;

pub fn core_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).parent().expect("crate lives in crates/").join("core")
}

pub fn fixture(name: &str) -> PathBuf {
    core_dir().join("tests/fixtures").join(name)
}

pub fn golden_path(name: &str) -> PathBuf {
    core_dir().join("tests/golden").join(format!("{name}.txt"))
}

/// The 5-review pool every golden prompt is rendered from.
pub fn prompt_pool() -> Pool {
    Manifest::load(&fixture("prompt_manifest.toml")).and_then(|m| m.load_pool()).expect("prompt fixture loads")
}

pub struct GoldenCase {
    pub name: &'static str,
    pub config: PromptConfig,
    pub presented: Vec<usize>,
    pub history: Option<SessionHistory>,
}

pub const GOLDEN_NAMES: [&str; 8] = ["A1", "A2", "A3", "B1", "B2", "B3", "C2", "B2+index_recap"];

pub fn golden_cases() -> Vec<GoldenCase> {
    GOLDEN_NAMES
        .iter()
        .map(|&name| {
            let config = PromptConfig {
                selection_size: 2,
                presented_batch_size: 5,
                ..PromptConfig::from_code(name).expect("known code")
            };
            let (presented, history) = if name.contains("recap") {
                let mut history = SessionHistory::default();
                history.labeled.insert(0, "negative".into());
                history.labeled.insert(1, "positive".into());
                (vec![2, 3, 4], Some(history))
            } else {
                ((0..5).collect(), None)
            };
            GoldenCase { name, config, presented, history }
        })
        .collect()
}

pub fn render(case: &GoldenCase, pool: &Pool) -> String {
    build_prompt(pool, &case.config, &case.presented, case.history.as_ref()).expect("golden config renders").text
}

#[derive(Debug, Deserialize)]
pub struct ParserCase {
    pub id: usize,
    pub family: String,
    pub response: String,
    /// `[start, len]` of the presented window.
    pub window: [usize; 2],
    pub requested: usize,
    pub indices: Vec<usize>,
    pub status: SelectionStatus,
}

impl ParserCase {
    pub fn presented(&self) -> Vec<usize> {
        (self.window[0]..self.window[0] + self.window[1]).collect()
    }
}

pub fn parser_cases() -> Vec<ParserCase> {
    let raw = std::fs::read_to_string(fixture("parser_cases.jsonl")).expect("parser fixture");
    raw.lines().map(|l| serde_json::from_str(l).expect("parser case")).collect()
}

#[derive(Debug, Deserialize)]
pub struct ScoreCase {
    pub p: Vec<f64>,
    pub least_confidence: f64,
    pub entropy: f64,
    pub margin: f64,
    pub members: Vec<Vec<f64>>,
    pub bald: f64,
}

pub fn score_cases() -> Vec<ScoreCase> {
    serde_json::from_str(&std::fs::read_to_string(fixture("score_oracle.json")).expect("score fixture"))
        .expect("score cases")
}
