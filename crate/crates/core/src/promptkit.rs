//! Prompt rendering for the LLM query model.
//!
//! A prompt is assembled from fixed template sections in this order: role
//! allocation, selection instructions, advice, guidelines, chain-of-thought
//! directive, recap, output format, and finally the enumerated instances.
//! Template wording lives in `templates/v1/` and is compiled into the binary;
//! any wording change must bump [`TEMPLATE_VERSION`] so fingerprints change.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Pool;
use crate::session::SessionHistory;

pub const TEMPLATE_VERSION: &str = "v1";

mod templates {
    pub const ROLE: &str = include_str!("../templates/v1/role.txt");
    pub const SELECTION: &str = include_str!("../templates/v1/selection.txt");
    pub const ADVICE: &str = include_str!("../templates/v1/advice.txt");
    pub const GUIDELINES: &str = include_str!("../templates/v1/guidelines.txt");
    pub const COT_STEP_BY_STEP: &str = include_str!("../templates/v1/cot_step_by_step.txt");
    pub const COT_EXPLAIN_EACH: &str = include_str!("../templates/v1/cot_explain_each.txt");
    pub const REITERATE: &str = include_str!("../templates/v1/reiterate.txt");
    pub const RECAP: &str = include_str!("../templates/v1/recap.txt");
    pub const INDEX_RECAP: &str = include_str!("../templates/v1/index_recap.txt");
    pub const OUTPUT_FORMAT: &str = include_str!("../templates/v1/output_format.txt");
    pub const INSTANCES_HEADER: &str = include_str!("../templates/v1/instances_header.txt");
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("invalid prompt configuration: {0}")]
    Config(String),
    #[error("index {0} is not in the pool")]
    UnknownIndex(usize),
    #[error("index {0} is presented more than once")]
    DuplicateIndex(usize),
    #[error("no instances to present")]
    EmptyBatch,
    #[error("template placeholder `{0}` has no value")]
    Placeholder(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CotMode {
    #[default]
    None,
    StepByStep,
    ExplainEach,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecapMode {
    #[default]
    NoRecap,
    Recap,
    IndexRecap,
}

impl fmt::Display for RecapMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RecapMode::NoRecap => "no_recap",
            RecapMode::Recap => "recap",
            RecapMode::IndexRecap => "index_recap",
        })
    }
}

impl FromStr for RecapMode {
    type Err = PromptError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "no_recap" | "none" => Ok(RecapMode::NoRecap),
            "recap" => Ok(RecapMode::Recap),
            "index_recap" => Ok(RecapMode::IndexRecap),
            other => Err(PromptError::Config(format!("unknown recap mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    pub selection_size: usize,
    pub presented_batch_size: usize,
    pub include_guidelines: bool,
    pub include_advice: bool,
    pub cot_mode: CotMode,
    pub recap_mode: RecapMode,
    /// Restate the selection size after the chain-of-thought directive.
    /// Always on for [`CotMode::ExplainEach`].
    pub reiterate_count_in_explain: bool,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            selection_size: 32,
            presented_batch_size: 200,
            include_guidelines: false,
            include_advice: false,
            cot_mode: CotMode::StepByStep,
            recap_mode: RecapMode::NoRecap,
            reiterate_count_in_explain: false,
        }
    }
}

impl PromptConfig {
    /// Parses a taxonomy code such as `B2`, `A3` or `C2+index_recap`.
    pub fn from_code(code: &str) -> Result<Self, PromptError> {
        let (base, recap) = match code.split_once('+') {
            Some((base, recap)) => (base, recap.parse()?),
            None => (code, RecapMode::NoRecap),
        };
        let bad = || PromptError::Config(format!("unknown configuration code `{code}`"));
        let base = base.trim();
        let split = base.len().checked_sub(1).filter(|&i| base.is_char_boundary(i)).ok_or_else(bad)?;
        let (letters, digit) = base.split_at(split);
        let (include_advice, include_guidelines) = match letters.to_ascii_uppercase().as_str() {
            "A" => (true, false),
            "B" => (false, false),
            "C" => (false, true),
            "AC" => (true, true),
            _ => return Err(bad()),
        };
        let cot_mode = match digit {
            "1" => CotMode::None,
            "2" => CotMode::StepByStep,
            "3" => CotMode::ExplainEach,
            _ => return Err(bad()),
        };
        Ok(Self { include_advice, include_guidelines, cot_mode, recap_mode: recap, ..Self::default() }.normalized())
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.selection_size == 0 {
            return Err(PromptError::Config("selection_size must be at least 1".into()));
        }
        if self.presented_batch_size == 0 {
            return Err(PromptError::Config("presented_batch_size must be at least 1".into()));
        }
        if self.selection_size > self.presented_batch_size {
            return Err(PromptError::Config(format!(
                "selection_size ({}) must not exceed presented_batch_size ({})",
                self.selection_size, self.presented_batch_size
            )));
        }
        Ok(())
    }

    pub fn normalized(mut self) -> Self {
        if self.cot_mode == CotMode::ExplainEach {
            self.reiterate_count_in_explain = true;
        }
        self
    }

    /// Stable hash of the canonical serialization, salted with the template
    /// version.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_string(&self.clone().normalized()).expect("config serializes");
        let digest = Sha256::digest(format!("{TEMPLATE_VERSION}\n{canonical}").as_bytes());
        hex::encode(digest.as_slice())
    }
}

/// Taxonomy code: letter for advice (A), plain (B) or guidelines (C), digit
/// for no CoT (1), step-by-step (2) or per-instance explanation (3). Feedback
/// modes and the combined advice-and-guidelines case extend the scheme.
pub fn name_config(config: &PromptConfig) -> String {
    let config = config.clone().normalized();
    let letter = match (config.include_advice, config.include_guidelines) {
        (true, false) => "A",
        (false, false) => "B",
        (false, true) => "C",
        (true, true) => "AC",
    };
    let digit = match config.cot_mode {
        CotMode::None => '1',
        CotMode::StepByStep => '2',
        CotMode::ExplainEach => '3',
    };
    let mut name = format!("{letter}{digit}");
    if config.reiterate_count_in_explain && config.cot_mode != CotMode::ExplainEach {
        name.push_str("+reiterate");
    }
    if config.recap_mode != RecapMode::NoRecap {
        name.push('+');
        name.push_str(&config.recap_mode.to_string());
    }
    name
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptArtifact {
    pub text: String,
    /// Selectable indices, in presentation order.
    pub presented_indices: Vec<usize>,
    pub config_fingerprint: String,
    /// Rough size, characters / 4. Reporting only.
    pub estimated_token_count: usize,
}

pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

fn fill(template: &str, values: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let Some(close) = after.find('}') else {
            out.push_str(&rest[open..]);
            rest = "";
            break;
        };
        let name = &after[..close];
        let value = values
            .iter()
            .find(|(key, _)| *key == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| PromptError::Placeholder(name.to_string()))?;
        out.push_str(value);
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    Ok(out.trim_end().to_string())
}

/// Renders the prompt. `presented` are the selectable indices in the order
/// they should be listed; in index-recap mode previously labeled instances
/// are listed as well (for reference) but are not part of
/// `presented_indices`.
pub fn build_prompt(
    pool: &Pool,
    config: &PromptConfig,
    presented: &[usize],
    history: Option<&SessionHistory>,
) -> Result<PromptArtifact, PromptError> {
    let config = config.clone().normalized();
    config.validate()?;
    if presented.is_empty() {
        return Err(PromptError::EmptyBatch);
    }
    let mut seen = BTreeSet::new();
    for &index in presented {
        if index >= pool.len() {
            return Err(PromptError::UnknownIndex(index));
        }
        if !seen.insert(index) {
            return Err(PromptError::DuplicateIndex(index));
        }
    }

    let labeled: Vec<usize> = match (config.recap_mode, history) {
        (RecapMode::NoRecap, _) => Vec::new(),
        (mode, None) => return Err(PromptError::Config(format!("{mode} requires the session history"))),
        (_, Some(history)) => history.labeled.keys().copied().collect(),
    };
    for &index in &labeled {
        if index >= pool.len() {
            return Err(PromptError::UnknownIndex(index));
        }
        if seen.contains(&index) {
            return Err(PromptError::Config(format!("index {index} is labeled and cannot be presented again")));
        }
    }

    let selection_size = config.selection_size.to_string();
    let mut sections = vec![
        fill(templates::ROLE, &[("task_name", pool.task_name())])?,
        fill(templates::SELECTION, &[("selection_size", &selection_size)])?,
    ];
    if config.include_advice {
        sections.push(fill(templates::ADVICE, &[])?);
    }
    if config.include_guidelines {
        let guidelines = pool
            .guidelines()
            .ok_or_else(|| PromptError::Config("guidelines requested but the pool has none".into()))?;
        sections.push(fill(templates::GUIDELINES, &[("guidelines", guidelines)])?);
    }
    match config.cot_mode {
        CotMode::None => {}
        CotMode::StepByStep => sections.push(fill(templates::COT_STEP_BY_STEP, &[])?),
        CotMode::ExplainEach => sections.push(fill(templates::COT_EXPLAIN_EACH, &[])?),
    }
    if config.reiterate_count_in_explain {
        sections.push(fill(templates::REITERATE, &[("selection_size", &selection_size)])?);
    }
    if !labeled.is_empty() {
        sections.push(recap_block(pool, config.recap_mode, &labeled)?);
    }
    sections.push(fill(templates::OUTPUT_FORMAT, &[])?);

    let listed: Vec<usize> = if config.recap_mode == RecapMode::IndexRecap && !labeled.is_empty() {
        let mut all: Vec<usize> = presented.iter().chain(labeled.iter()).copied().collect();
        all.sort_unstable();
        all
    } else {
        presented.to_vec()
    };
    let mut block = fill(templates::INSTANCES_HEADER, &[])?;
    for index in &listed {
        block.push('\n');
        block.push_str(&instance_line(pool, *index));
    }
    sections.push(block);

    let mut text = sections.join("\n\n");
    text.push('\n');
    Ok(PromptArtifact {
        estimated_token_count: estimate_tokens(&text),
        text,
        presented_indices: presented.to_vec(),
        config_fingerprint: config.fingerprint(),
    })
}

fn instance_line(pool: &Pool, index: usize) -> String {
    let instance = &pool.instances()[index];
    format!("Index {index}: {}", instance.display_text(pool.pair_separator()))
}

/// Recap section for feedback mode. Built from indices (and texts in full
/// recap mode) only; labels never appear here.
pub fn recap_block(pool: &Pool, mode: RecapMode, labeled: &[usize]) -> Result<String, PromptError> {
    let mut sorted = labeled.to_vec();
    sorted.sort_unstable();
    match mode {
        RecapMode::NoRecap => Ok(String::new()),
        RecapMode::Recap => {
            let lines: Vec<String> = sorted.iter().map(|&i| instance_line(pool, i)).collect();
            fill(templates::RECAP, &[("recap_instances", &lines.join("\n"))])
        }
        RecapMode::IndexRecap => {
            let list: Vec<String> = sorted.iter().map(usize::to_string).collect();
            fill(templates::INDEX_RECAP, &[("recap_indices", &list.join(", "))])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Instance;

    fn pool(n: usize) -> Pool {
        let instances = (0..n)
            .map(|i| Instance {
                index: i,
                text: format!("sample sentence number {i}"),
                text_pair: None,
                gold_label: Some("positive".into()),
                source_row: i,
            })
            .collect();
        Pool::new("sentiment", vec!["negative".into(), "positive".into()], Some("Be careful.".into()), instances)
            .unwrap()
    }

    fn history(labeled: &[usize]) -> SessionHistory {
        let mut h = SessionHistory::default();
        for &i in labeled {
            h.labeled.insert(i, "positive".into());
        }
        h
    }

    #[test]
    fn codes_round_trip() {
        for code in ["A1", "A2", "A3", "B1", "B2", "B3", "C1", "C2", "C3", "AC2", "B2+index_recap", "B2+recap"] {
            assert_eq!(name_config(&PromptConfig::from_code(code).unwrap()), code);
        }
        assert!(PromptConfig::from_code("D2").is_err());
        assert!(PromptConfig::from_code("B4").is_err());
        assert!(PromptConfig::from_code("BC2").is_err());
        assert!(PromptConfig::from_code("é").is_err());
        assert!(PromptConfig::from_code("B2+later").is_err());
    }

    #[test]
    fn taxonomy_names() {
        let b2 = PromptConfig {
            include_advice: false,
            include_guidelines: false,
            cot_mode: CotMode::StepByStep,
            ..Default::default()
        };
        assert_eq!(name_config(&b2), "B2");
        let a1 = PromptConfig { include_advice: true, cot_mode: CotMode::None, ..Default::default() };
        assert_eq!(name_config(&a1), "A1");
        let c3 = PromptConfig { include_guidelines: true, cot_mode: CotMode::ExplainEach, ..Default::default() };
        assert_eq!(name_config(&c3), "C3");
        let both = PromptConfig { include_guidelines: true, include_advice: true, ..Default::default() };
        assert_eq!(name_config(&both), "AC2");
    }

    #[test]
    fn step_by_step_prompt_lists_every_instance() {
        let pool = pool(3);
        let config = PromptConfig::from_code("B2").unwrap();
        let artifact = build_prompt(&pool, &config, &[0, 1, 2], None).unwrap();
        assert!(artifact.text.contains("think step by step"));
        for i in 0..3 {
            assert_eq!(artifact.text.matches(&format!("Index {i}: ")).count(), 1);
        }
        assert!(artifact.text.contains("select exactly 32 instances"));
    }

    #[test]
    fn advice_block_names_strategies() {
        let artifact = build_prompt(&pool(3), &PromptConfig::from_code("A1").unwrap(), &[0, 1, 2], None).unwrap();
        assert!(artifact.text.contains("representativeness, diversity, difficulty, stratification, balance"));
    }

    #[test]
    fn index_recap_lists_labeled_indices_without_labels() {
        let pool = pool(12);
        let config = PromptConfig::from_code("B2+index_recap").unwrap();
        let presented: Vec<usize> = (0..12).filter(|i| *i != 4 && *i != 9).collect();
        let artifact = build_prompt(&pool, &config, &presented, Some(&history(&[9, 4]))).unwrap();
        let recap = recap_block(&pool, RecapMode::IndexRecap, &[9, 4]).unwrap();
        assert!(recap.contains(": 4, 9."));
        assert!(artifact.text.contains(&recap));
        for label in pool.label_space() {
            assert!(!recap.contains(label.as_str()));
        }
        // labeled instances stay visible for reference but are not selectable
        assert!(artifact.text.contains("Index 4: "));
        assert!(!artifact.presented_indices.contains(&4));
    }

    #[test]
    fn recap_requires_history() {
        let config = PromptConfig::from_code("B2+recap").unwrap();
        assert!(matches!(build_prompt(&pool(3), &config, &[0], None), Err(PromptError::Config(_))));
        // an empty history is fine and renders no recap block
        let artifact = build_prompt(&pool(3), &config, &[0], Some(&SessionHistory::default())).unwrap();
        assert!(!artifact.text.contains("previous rounds"));
    }

    #[test]
    fn guidelines_required_when_requested() {
        let instances = pool(2).instances().to_vec();
        let bare = Pool::new("t", vec!["positive".into()], None, instances).unwrap();
        let config = PromptConfig::from_code("C2").unwrap();
        assert!(matches!(build_prompt(&bare, &config, &[0], None), Err(PromptError::Config(_))));
        let with = build_prompt(&pool(2), &config, &[0], None).unwrap();
        assert!(with.text.contains("Be careful."));
    }

    #[test]
    fn explain_each_restates_count_after_directive() {
        let config = PromptConfig { selection_size: 5, ..PromptConfig::from_code("B3").unwrap() };
        let text = build_prompt(&pool(6), &config, &[0, 1, 2, 3, 4, 5], None).unwrap().text;
        let directive = text.find("explain your thoughts").unwrap();
        let restated = text.find("Remember that you must select exactly 5 instances").unwrap();
        assert!(restated > directive);
    }

    #[test]
    fn rejects_bad_batches() {
        let config = PromptConfig::default();
        assert_eq!(build_prompt(&pool(3), &config, &[], None), Err(PromptError::EmptyBatch));
        assert_eq!(build_prompt(&pool(3), &config, &[3], None), Err(PromptError::UnknownIndex(3)));
        assert_eq!(build_prompt(&pool(3), &config, &[1, 1], None), Err(PromptError::DuplicateIndex(1)));
        let too_many = PromptConfig { selection_size: 10, presented_batch_size: 5, ..Default::default() };
        assert!(matches!(build_prompt(&pool(3), &too_many, &[0], None), Err(PromptError::Config(_))));
    }

    #[test]
    fn fingerprint_tracks_config() {
        let a = PromptConfig::from_code("B2").unwrap();
        let b = PromptConfig::from_code("B3").unwrap();
        assert_eq!(a.fingerprint(), a.clone().fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
    }

    #[test]
    fn missing_placeholder_is_an_error() {
        assert_eq!(fill("x {nope} y", &[]), Err(PromptError::Placeholder("nope".into())));
        assert_eq!(fill("{a}-{b}", &[("a", "1"), ("b", "2")]).unwrap(), "1-2");
    }
}
