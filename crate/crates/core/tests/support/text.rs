//! Prompt snapshots and parser checks.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use activellm_core::promptkit::name_config;
use activellm_core::selection_parser::{parse_selection, SelectionStatus};

use super::{golden_cases, golden_path, parser_cases, prompt_pool, render};

/// Every named config renders byte-for-byte as its golden file. With
/// `update` set the files are rewritten instead.
pub fn prompts_match_golden_files(update: bool) {
    let pool = prompt_pool();
    for case in golden_cases() {
        assert_eq!(name_config(&case.config), case.name);
        let text = render(&case, &pool);
        let path = golden_path(case.name);
        if update {
            std::fs::write(&path, &text).unwrap();
            continue;
        }
        let golden = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(text == golden, "{} differs from {}", case.name, path.display());
    }
}

pub fn taxonomy_markers() {
    let pool = prompt_pool();
    for case in golden_cases() {
        let text = render(&case, &pool);
        let name = case.name;
        assert_eq!(text.contains("think step by step"), name.as_bytes()[1] == b'2', "{name}");
        assert_eq!(text.contains("consider the following active learning strategies"), name.starts_with('A'), "{name}");
        assert_eq!(text.contains("The annotation guidelines are:"), name.starts_with('C'), "{name}");
        if name.starts_with('C') {
            assert!(text.contains(pool.guidelines().unwrap()));
        }
        if case.history.is_some() {
            for label in pool.label_space() {
                assert!(!text.contains(label.as_str()), "{name} leaks label `{label}`");
            }
            assert!(text.contains("previous rounds: 0, 1."));
        }
    }
}

pub fn sections_keep_their_order() {
    let pool = prompt_pool();
    let a3 = golden_cases().into_iter().find(|c| c.name == "A3").unwrap();
    let text = render(&a3, &pool);
    let markers = [
        "You are the query component",
        "select exactly 2 instances",
        "consider the following active learning strategies",
        "explain your thoughts",
        "Remember that you must select exactly 2",
        "Output format:",
        "Unlabeled instances:",
        "Index 4:",
    ];
    let positions: Vec<usize> = markers.iter().map(|m| text.find(m).unwrap_or_else(|| panic!("missing {m}"))).collect();
    assert!(positions.windows(2).all(|w| w[0] < w[1]), "{positions:?}");
}

pub fn curated_parser_cases() {
    let cases = parser_cases();
    assert_eq!(cases.len(), 200);
    let mut failures = Vec::new();
    for case in &cases {
        let result = parse_selection(&case.response, &case.presented(), case.requested);
        if result.indices != case.indices || result.status != case.status {
            failures.push(format!(
                "case {} ({}): got {:?} {:?}, want {:?} {:?}",
                case.id, case.family, result.status, result.indices, case.status, case.indices
            ));
        }
    }
    assert!(failures.is_empty(), "{} mismatches:\n{}", failures.len(), failures.join("\n"));
}

const PIECES: &[&str] = &[
    "Index ",
    "index",
    "indices",
    "#",
    "[",
    "]",
    "(",
    ")",
    ",",
    ", ",
    ";",
    ":",
    ".",
    "\n",
    "\n\n",
    " and ",
    "- ",
    "* ",
    "**",
    "1. ",
    "2) ",
    "Selected indices: ",
    "0.5",
    "3.14",
    "item7",
    "x9y",
    "é",
    "日本",
    "٣",
    "🙂",
    "\u{200b}",
    "—",
    "–",
    "\"",
    "'",
    "{",
    "}",
    "|",
    "+",
    "`",
    "\t",
    "Final answer",
    "I'm sorry",
    "-",
    "0",
    "00",
    "007",
    "18446744073709551616",
];

fn random_text(rng: &mut ChaCha8Rng) -> String {
    let mut out = String::new();
    for _ in 0..rng.random_range(0..60) {
        match rng.random_range(0..4) {
            0 => out.push_str(&rng.random_range(0..400u32).to_string()),
            1 => out.push_str(PIECES[rng.random_range(0..PIECES.len())]),
            2 => out.push(char::from_u32(rng.random_range(0x20..0x2FFF)).unwrap_or('?')),
            _ => out.push(rng.random_range(b' '..=b'~') as char),
        }
    }
    out
}

/// Seeded random strings: the parser never panics, never returns anything
/// outside the window, never repeats an index and reports a status that
/// agrees with the output length.
pub fn parser_fuzz(count: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF022);
    for n in 0..count {
        let text = random_text(&mut rng);
        let start = rng.random_range(0..200);
        let presented: Vec<usize> = (start..start + rng.random_range(1..200)).collect();
        let requested = rng.random_range(1..=presented.len().min(40));
        let result = parse_selection(&text, &presented, requested);
        let allowed: HashSet<usize> = presented.iter().copied().collect();
        let unique: HashSet<usize> = result.indices.iter().copied().collect();
        assert!(result.indices.iter().all(|i| allowed.contains(i)), "case {n}: {text:?}");
        assert_eq!(unique.len(), result.indices.len(), "case {n}: duplicates for {text:?}");
        assert!(result.indices.len() <= requested, "case {n}");
        assert_eq!(result.requested_count, requested);
        match result.status {
            SelectionStatus::Exact | SelectionStatus::Repaired => assert_eq!(result.indices.len(), requested),
            SelectionStatus::Deficient => assert!(result.indices.len() < requested),
            SelectionStatus::Failed => assert!(result.indices.is_empty()),
        }
    }
}
