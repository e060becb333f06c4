//! Extraction of selected indices from free-form model answers.
//!
//! The grammar, applied to the whole response:
//!
//! 1. Each line is normalized: a leading bullet (`-`, `*`, `+`, `•`) is
//!    removed; a leading enumerator such as `1.` or `2)` is removed when the
//!    rest of the line starts with an index item; and for lines that start
//!    with an index item (`Index 12`, `#12`, `[12]`, `12`) followed by `:`,
//!    a dash or `(` and then prose, the prose is dropped.
//! 2. Integer tokens are maximal digit runs not glued to letters and not
//!    part of a decimal number.
//! 3. Consecutive tokens form one list region when the text between them
//!    holds only separators (whitespace, `, ; : . [ ] ( ) { } * - + # | " '`),
//!    the word `and`, and the words `index`/`indices`/`idx` when those follow
//!    a separator character or a line break.
//! 4. The answer is the last region, skipping lone integers that sit inside
//!    a sentence (more words follow on the same line, as in "these cover 2
//!    topics"). If every region is such a lone integer, the last one is used.
//!
//! Values outside the presented batch and repeats are then dropped in
//! reading order, and an over-long list is cut to its first
//! `requested_count` entries.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStatus {
    Exact,
    Repaired,
    Deficient,
    Failed,
}

impl fmt::Display for SelectionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionStatus::Exact => "exact",
            SelectionStatus::Repaired => "repaired",
            SelectionStatus::Deficient => "deficient",
            SelectionStatus::Failed => "failed",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Diagnostic {
    DuplicatesRemoved {
        values: Vec<usize>,
    },
    /// Literal values that were not in the presented batch.
    OutOfRangeDropped {
        values: Vec<String>,
    },
    Truncated {
        dropped: Vec<usize>,
    },
    CountMismatch {
        found: usize,
        requested: usize,
    },
    NoListFound,
    ToppedUp {
        filled: usize,
    },
    /// The model gave no usable answer and the batch was filled at random.
    LlmFallback {
        reason: String,
    },
    /// No labels yet to train the query model on; random draw.
    ColdStart,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::DuplicatesRemoved { values } => write!(f, "duplicates-removed: {values:?}"),
            Diagnostic::OutOfRangeDropped { values } => write!(f, "out-of-range-dropped: [{}]", values.join(", ")),
            Diagnostic::Truncated { dropped } => write!(f, "truncated: {dropped:?}"),
            Diagnostic::CountMismatch { found, requested } => write!(f, "count-mismatch: {found} of {requested}"),
            Diagnostic::NoListFound => f.write_str("no-list-found"),
            Diagnostic::ToppedUp { filled } => write!(f, "topped-up: {filled}"),
            Diagnostic::LlmFallback { reason } => write!(f, "llm-fallback: {reason}"),
            Diagnostic::ColdStart => f.write_str("cold-start"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub indices: Vec<usize>,
    pub requested_count: usize,
    pub status: SelectionStatus,
    pub diagnostics: Vec<Diagnostic>,
}

impl SelectionResult {
    /// A selection produced directly by a strategy, no parsing involved.
    pub fn direct(indices: Vec<usize>, requested_count: usize) -> Self {
        let status = if indices.len() == requested_count { SelectionStatus::Exact } else { SelectionStatus::Deficient };
        let diagnostics = if status == SelectionStatus::Deficient {
            vec![Diagnostic::CountMismatch { found: indices.len(), requested: requested_count }]
        } else {
            Vec::new()
        };
        Self { indices, requested_count, status, diagnostics }
    }

    pub fn failed(requested_count: usize, diagnostic: Diagnostic) -> Self {
        Self { indices: Vec::new(), requested_count, status: SelectionStatus::Failed, diagnostics: vec![diagnostic] }
    }

    /// `"3, 7, 15"`. Parsing this string yields the same indices.
    pub fn canonical(&self) -> String {
        self.indices.iter().map(usize::to_string).collect::<Vec<_>>().join(", ")
    }

    pub fn needs_top_up(&self) -> bool {
        matches!(self.status, SelectionStatus::Deficient | SelectionStatus::Failed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Token {
    start: usize,
    end: usize,
}

fn item_line_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^(?:\*\*)?(?:(?:index|idx|instance)\s*|#)?\[?\d+\]?(?:\*\*)?").expect("valid regex")
    })
}

fn enumerator_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\d+[.)]\s+").expect("valid regex"))
}

fn normalize_line(line: &str) -> String {
    let mut rest = line.trim_start();
    for bullet in ['-', '*', '+', '•', '–'] {
        if let Some(stripped) = rest.strip_prefix(bullet) {
            if stripped.starts_with(char::is_whitespace) {
                rest = stripped.trim_start();
                break;
            }
        }
    }
    if let Some(m) = enumerator_regex().find(rest) {
        let after = &rest[m.end()..];
        if item_line_regex().is_match(after) {
            rest = after;
        }
    }
    if let Some(m) = item_line_regex().find(rest) {
        let tail = &rest[m.end()..];
        let trimmed = tail.trim_start();
        let delimited = trimmed.starts_with([':', '-', '–', '—', '(']);
        if delimited && trimmed.chars().any(char::is_alphabetic) {
            return rest[..m.end()].to_string();
        }
    }
    rest.to_string()
}

fn integer_tokens(text: &str) -> Vec<Token> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if !bytes[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        let end = i;
        let before = text[..start].chars().next_back();
        let before2 = before.and_then(|c| text[..start - c.len_utf8()].chars().next_back());
        let after = text[end..].chars().next();
        let after2 = after.and_then(|c| text[end + c.len_utf8()..].chars().next());

        let glued_before = before.is_some_and(|c| c.is_alphanumeric() || c == '_');
        let decimal_before = before == Some('.') && before2.is_some_and(|c| c.is_ascii_digit());
        let glued_after = after.is_some_and(|c| c.is_alphabetic() || c == '_');
        let decimal_after = after == Some('.') && after2.is_some_and(|c| c.is_ascii_digit());
        if !(glued_before || decimal_before || glued_after || decimal_after) {
            tokens.push(Token { start, end });
        }
    }
    tokens
}

const GAP_PUNCTUATION: &[char] =
    &[',', ';', ':', '.', '[', ']', '(', ')', '{', '}', '*', '-', '+', '#', '|', '"', '\'', '`', '&', '•', '–'];

fn is_separator_gap(gap: &str) -> bool {
    let mut after_break = false;
    let mut chars = gap.char_indices().peekable();
    while let Some((pos, c)) = chars.next() {
        if c == '\n' {
            after_break = true;
        } else if c.is_whitespace() {
        } else if GAP_PUNCTUATION.contains(&c) {
            after_break = true;
        } else if c.is_alphabetic() {
            let mut end = pos + c.len_utf8();
            while let Some(&(p, next)) = chars.peek() {
                if !next.is_alphabetic() {
                    break;
                }
                end = p + next.len_utf8();
                chars.next();
            }
            let word = gap[pos..end].to_lowercase();
            match word.as_str() {
                "and" => {}
                "index" | "indices" | "idx" if after_break => {}
                _ => return false,
            }
        } else {
            return false;
        }
    }
    true
}

/// Literal integers of the answer list, in reading order.
pub fn extract_list(response: &str) -> Option<Vec<String>> {
    let text: String = response.lines().map(normalize_line).collect::<Vec<_>>().join("\n");
    let tokens = integer_tokens(&text);
    if tokens.is_empty() {
        return None;
    }
    let mut regions: Vec<Vec<Token>> = vec![vec![tokens[0]]];
    for pair in tokens.windows(2) {
        let gap = &text[pair[0].end..pair[1].start];
        if is_separator_gap(gap) {
            regions.last_mut().expect("non-empty").push(pair[1]);
        } else {
            regions.push(vec![pair[1]]);
        }
    }
    let in_prose = |region: &Vec<Token>| {
        let end = region[0].end;
        region.len() == 1 && text[end..].lines().next().is_some_and(|rest| rest.chars().any(char::is_alphabetic))
    };
    let chosen = regions.iter().rev().find(|r| !in_prose(r)).unwrap_or_else(|| regions.last().expect("non-empty"));
    Some(chosen.iter().map(|t| text[t.start..t.end].to_string()).collect())
}

pub fn parse_selection(response: &str, presented: &[usize], requested_count: usize) -> SelectionResult {
    let Some(literals) = extract_list(response) else {
        return SelectionResult::failed(requested_count, Diagnostic::NoListFound);
    };
    let allowed: HashSet<usize> = presented.iter().copied().collect();
    let mut seen = HashSet::new();
    let mut indices = Vec::new();
    let mut duplicates = Vec::new();
    let mut out_of_range = Vec::new();
    for literal in literals {
        match literal.parse::<usize>() {
            Ok(value) if allowed.contains(&value) => {
                if seen.insert(value) {
                    indices.push(value);
                } else {
                    duplicates.push(value);
                }
            }
            _ => out_of_range.push(literal),
        }
    }

    let mut diagnostics = Vec::new();
    if !duplicates.is_empty() {
        diagnostics.push(Diagnostic::DuplicatesRemoved { values: duplicates });
    }
    if !out_of_range.is_empty() {
        diagnostics.push(Diagnostic::OutOfRangeDropped { values: out_of_range });
    }
    if indices.len() > requested_count {
        let dropped = indices.split_off(requested_count);
        diagnostics.push(Diagnostic::Truncated { dropped });
    }
    let status = if indices.len() < requested_count {
        diagnostics.push(Diagnostic::CountMismatch { found: indices.len(), requested: requested_count });
        SelectionStatus::Deficient
    } else if diagnostics.is_empty() {
        SelectionStatus::Exact
    } else {
        SelectionStatus::Repaired
    };
    SelectionResult { indices, requested_count, status, diagnostics }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TopUpError {
    #[error("selection is {0}; only deficient or failed selections are topped up")]
    NotDeficient(SelectionStatus),
    #[error("only {available} candidates remain, {shortfall} short of the requested count")]
    Insufficient { available: usize, shortfall: usize, partial: SelectionResult },
}

/// Fills missing slots with a seeded random draw from the presented batch,
/// skipping anything already selected or labeled.
pub fn top_up(
    result: &SelectionResult,
    presented: &[usize],
    already_labeled: &BTreeSet<usize>,
    seed: u64,
) -> Result<SelectionResult, TopUpError> {
    if !result.needs_top_up() {
        return Err(TopUpError::NotDeficient(result.status));
    }
    let taken: HashSet<usize> = result.indices.iter().copied().collect();
    let mut candidates: Vec<usize> =
        presented.iter().copied().filter(|i| !taken.contains(i) && !already_labeled.contains(i)).collect();
    candidates.dedup();
    candidates.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let missing = result.requested_count.saturating_sub(result.indices.len());
    let filled = missing.min(candidates.len());
    let mut out = result.clone();
    out.indices.extend_from_slice(&candidates[..filled]);
    out.diagnostics.push(Diagnostic::ToppedUp { filled });
    out.status = SelectionStatus::Repaired;
    if filled < missing {
        out.status = SelectionStatus::Deficient;
        return Err(TopUpError::Insufficient { available: filled, shortfall: missing - filled, partial: out });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn range(n: usize) -> Vec<usize> {
        (0..n).collect()
    }

    #[test]
    fn cot_prose_then_final_list() {
        let r = parse_selection("I think step by step… Final selection: [3, 7, 15]", &range(200), 3);
        assert_eq!(r.indices, vec![3, 7, 15]);
        assert_eq!(r.status, SelectionStatus::Exact);
        assert!(r.diagnostics.is_empty());
    }

    #[test]
    fn duplicates_make_it_deficient() {
        let r = parse_selection("3, 3, 7", &range(200), 3);
        assert_eq!(r.indices, vec![3, 7]);
        assert_eq!(r.status, SelectionStatus::Deficient);
        assert!(r.diagnostics.contains(&Diagnostic::DuplicatesRemoved { values: vec![3] }));
    }

    #[test]
    fn out_of_range_dropped() {
        let r = parse_selection("Indices 5 and 900", &range(200), 2);
        assert_eq!(r.indices, vec![5]);
        assert_eq!(r.status, SelectionStatus::Deficient);
        assert!(r.diagnostics.contains(&Diagnostic::OutOfRangeDropped { values: vec!["900".into()] }));
    }

    #[test]
    fn no_integers_fails() {
        let r = parse_selection("I cannot help with that.", &range(10), 2);
        assert_eq!(r.status, SelectionStatus::Failed);
        assert_eq!(r.diagnostics, vec![Diagnostic::NoListFound]);
    }

    #[test]
    fn overlong_lists_truncate_to_prefix() {
        let r = parse_selection("1, 2, 3, 4", &range(10), 2);
        assert_eq!(r.indices, vec![1, 2]);
        assert_eq!(r.status, SelectionStatus::Repaired);
        assert!(r.diagnostics.contains(&Diagnostic::Truncated { dropped: vec![3, 4] }));
    }

    #[test]
    fn explained_items_and_final_restatement() {
        let response = "1. Index 12: a clear negative review.\n2. Index 40: sarcastic, hard to classify.\n3. Index 7 - short and neutral.\n\nSelected indices: 12, 40, 7";
        assert_eq!(parse_selection(response, &range(50), 3).indices, vec![12, 40, 7]);
        let items_only = "1. Index 12: a clear negative review.\n2. Index 40: sarcastic.\n3. Index 7 - neutral.";
        assert_eq!(parse_selection(items_only, &range(50), 3).indices, vec![12, 40, 7]);
    }

    #[test]
    fn count_phrases_are_not_list_items() {
        let r = parse_selection("Here are the 32 indices: 4, 9, 11", &range(50), 3);
        assert_eq!(r.indices, vec![4, 9, 11]);
        let r = parse_selection("Final: [3, 7, 15]. These cover 2 topics.", &range(50), 3);
        assert_eq!(r.indices, vec![3, 7, 15]);
    }

    #[test]
    fn lone_final_answer_beats_reasoning_lists() {
        let response = "1. Index 2: long text.\n2. Index 8: sarcastic.\nThat is all.\n\nFinal answer: 5";
        let r = parse_selection(response, &range(10), 3);
        assert_eq!(r.indices, vec![5]);
        assert_eq!(r.status, SelectionStatus::Deficient);
    }

    #[test]
    fn decimals_and_glued_numbers_ignored() {
        let r = parse_selection("Using GPT4 at 0.7 temperature, B2 prompt: 5 8", &range(50), 2);
        assert_eq!(r.indices, vec![5, 8]);
    }

    #[test]
    fn bullets_and_markdown() {
        let r = parse_selection("- **Index 3**\n- **Index 8**\n* #21", &range(50), 3);
        assert_eq!(r.indices, vec![3, 8, 21]);
    }

    #[test]
    fn huge_values_are_out_of_range() {
        let r = parse_selection("99999999999999999999999, 3", &range(5), 1);
        assert_eq!(r.indices, vec![3]);
        assert_eq!(r.status, SelectionStatus::Repaired);
    }

    #[test]
    fn top_up_fills_from_remaining() {
        let r = parse_selection("3, 7", &range(10), 3);
        let filled = top_up(&r, &range(10), &BTreeSet::new(), 11).unwrap();
        assert_eq!(filled.indices.len(), 3);
        assert_eq!(&filled.indices[..2], &[3, 7]);
        assert_eq!(filled.status, SelectionStatus::Repaired);
        assert!(filled.diagnostics.contains(&Diagnostic::ToppedUp { filled: 1 }));
        assert_eq!(filled, top_up(&r, &range(10), &BTreeSet::new(), 11).unwrap());
    }

    #[test]
    fn top_up_failed_uses_only_candidates() {
        let r = SelectionResult::failed(2, Diagnostic::NoListFound);
        let filled = top_up(&r, &[0, 1], &BTreeSet::new(), 5).unwrap();
        let mut sorted = filled.indices.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1]);
    }

    #[test]
    fn top_up_reports_shortfall() {
        let r = SelectionResult::failed(3, Diagnostic::NoListFound);
        let labeled: BTreeSet<usize> = [1].into();
        match top_up(&r, &[0, 1], &labeled, 5) {
            Err(TopUpError::Insufficient { shortfall, partial, .. }) => {
                assert_eq!(shortfall, 2);
                assert_eq!(partial.indices, vec![0]);
            }
            other => panic!("unexpected {other:?}"),
        }
        let exact = parse_selection("0", &[0, 1], 1);
        assert_eq!(top_up(&exact, &[0, 1], &BTreeSet::new(), 0), Err(TopUpError::NotDeficient(SelectionStatus::Exact)));
    }

    #[test]
    fn canonical_round_trip() {
        let r = parse_selection("pick 9 then 4: 9, 4, 1", &range(10), 3);
        assert_eq!(parse_selection(&r.canonical(), &range(10), 3).indices, r.indices);
    }
}
