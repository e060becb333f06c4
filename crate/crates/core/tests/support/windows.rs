//! Window rules exercised through real sessions: an LLM stand-in picks at
//! random from whatever it is shown, and every iteration's presented batch
//! is checked against the history that existed before it.

use std::collections::BTreeSet;
use std::sync::Arc;

use proptest::prelude::*;
use proptest::test_runner::TestRunner;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;

use activellm_core::clock::FixedClock;
use activellm_core::harness::{SimulatedOracle, SyntheticSpec};
use activellm_core::oracle_llm::{ChatRequest, EndpointError, GenerationSettings, LlmClient, ResponderEndpoint};
use activellm_core::promptkit::{CotMode, PromptConfig, RecapMode};
use activellm_core::seeds::derive_seed;
use activellm_core::session::{Session, SessionConfig};
use activellm_core::strategies::{ActiveLlmStrategy, StrategyId, StrategySpec};

/// Picks `select exactly N` indices among the listed instances that are not
/// named as previously labeled.
fn picker(seed: u64) -> ResponderEndpoint<impl Fn(&ChatRequest) -> Result<String, EndpointError> + Send + Sync> {
    let count = Regex::new(r"select exactly (\d+)").unwrap();
    let line = Regex::new(r"(?m)^Index (\d+):").unwrap();
    let recap = Regex::new(r"in previous rounds: ([\d, ]+)\.").unwrap();
    ResponderEndpoint::new("picker", move |request| {
        let prompt = request.prompt();
        let k: usize = count.captures(prompt).unwrap()[1].parse().unwrap();
        let listed = &prompt[prompt.find("Unlabeled instances:").unwrap()..];
        let excluded: BTreeSet<usize> =
            recap.captures(prompt).map(|c| c[1].split(", ").map(|v| v.parse().unwrap()).collect()).unwrap_or_default();
        let candidates: Vec<usize> =
            line.captures_iter(listed).map(|c| c[1].parse().unwrap()).filter(|i| !excluded.contains(i)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, prompt, 0));
        let picks: Vec<String> = sample(&mut rng, candidates.len(), k.min(candidates.len()))
            .iter()
            .map(|i| candidates[i].to_string())
            .collect();
        Ok(format!("Selected indices: {}", picks.join(", ")))
    })
}

fn recap_list(prompt: &str) -> Option<BTreeSet<usize>> {
    let recap = Regex::new(r"in previous rounds: ([\d, ]+)\.").unwrap();
    recap.captures(prompt).map(|c| c[1].split(", ").map(|v| v.parse().unwrap()).collect())
}

pub fn check_run(
    n: usize,
    batch: usize,
    k: usize,
    iterations: usize,
    mode: RecapMode,
    seed: u64,
) -> Result<(), TestCaseError> {
    let (pool, _) = SyntheticSpec { seed, ..SyntheticSpec::default() }.split("window", n);
    let prompt = PromptConfig {
        selection_size: k,
        presented_batch_size: batch,
        cot_mode: CotMode::None,
        recap_mode: mode,
        ..PromptConfig::default()
    };
    let config = SessionConfig {
        manifest: None,
        prompt: prompt.clone(),
        settings: GenerationSettings::default(),
        strategy: StrategySpec::new(StrategyId::ActiveLlm),
        budget: k * iterations,
        step: k,
        seed,
    };
    let clock = Arc::new(FixedClock::default());
    let client = Arc::new(LlmClient::new(Arc::new(picker(seed))).with_clock(clock.clone()));
    let mut strategy = ActiveLlmStrategy::new(client, prompt, GenerationSettings::default());
    let mut session = Session::new("w", config).unwrap();

    for iteration in 1..=iterations {
        let before = session.history.clone();
        if before.labeled.len() == n {
            break;
        }
        let record = session.run_iteration(&pool, &mut strategy, &SimulatedOracle, clock.as_ref()).unwrap();
        let presented = &record.presented_indices;
        prop_assert!(!presented.is_empty());
        prop_assert!(presented.iter().all(|i| !before.labeled.contains_key(i)), "labeled index presented again");
        prop_assert!(record.selection.indices.iter().all(|i| presented.contains(i)));
        let unlabeled = |lo: usize, hi: usize| -> Vec<usize> {
            (lo..hi.min(n)).filter(|i| !before.labeled.contains_key(i)).collect()
        };
        match mode {
            RecapMode::NoRecap | RecapMode::Recap => {
                let start = before.cursor_last_labeled.map_or(0, |last| last + 1);
                let following = unlabeled(start, start + batch);
                if following.is_empty() {
                    // Nothing left after the last labeled instance: wrap to the front.
                    prop_assert_eq!(presented, &unlabeled(0, n).into_iter().take(batch).collect::<Vec<_>>());
                } else {
                    prop_assert_eq!(presented, &following, "window must start right after the last labeled instance");
                }
            }
            RecapMode::IndexRecap => {
                prop_assert_eq!(presented, &unlabeled(0, iteration * batch));
                let listed = recap_list(&record.exchanges[0].prompt_text);
                if before.labeled.is_empty() {
                    prop_assert!(listed.is_none());
                } else {
                    let labeled: BTreeSet<usize> = before.labeled.keys().copied().collect();
                    prop_assert_eq!(listed, Some(labeled), "recap must list exactly the labeled set");
                }
            }
        }
        let picked: usize = session.history.iterations.iter().map(|r| r.selection.indices.len()).sum();
        prop_assert_eq!(session.history.labeled_count(), picked);
        prop_assert!(picked <= (iteration * k).min(n));
    }
    Ok(())
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(ProptestConfig { cases, failure_persistence: None, ..ProptestConfig::default() })
}

/// Random pools of up to 500 instances, batches of 50/100/200 and 1 to 10
/// iterations under no recap and recap.
pub fn windows_follow_the_last_labeled_instance(cases: u32) {
    let strategy = (
        1usize..=500,
        prop::sample::select(vec![50usize, 100, 200]),
        1usize..=30,
        1usize..=10,
        any::<bool>(),
        any::<u64>(),
    );
    runner(cases)
        .run(&strategy, |(n, batch, k, iterations, recap, seed)| {
            let mode = if recap { RecapMode::Recap } else { RecapMode::NoRecap };
            check_run(n, batch, k.min(batch), iterations, mode, seed)
        })
        .unwrap_or_else(|e| panic!("{e}"));
}

pub fn index_recap_lists_exactly_the_labeled_set(cases: u32) {
    let strategy =
        (1usize..=500, prop::sample::select(vec![50usize, 100, 200]), 1usize..=30, 1usize..=10, any::<u64>());
    runner(cases)
        .run(&strategy, |(n, batch, k, iterations, seed)| {
            check_run(n, batch, k.min(batch), iterations, RecapMode::IndexRecap, seed)
        })
        .unwrap_or_else(|e| panic!("{e}"));
}
