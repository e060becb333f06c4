use std::collections::BTreeMap;
use std::sync::Arc;

use activellm_core::clock::FixedClock;
use activellm_core::corpus::Pool;
use activellm_core::harness::{SimulatedOracle, SyntheticSpec};
use activellm_core::oracle_llm::{scripted_mock, GenerationSettings, LlmClient, ScriptStep, SimulatedSelector};
use activellm_core::promptkit::{CotMode, PromptConfig};
use activellm_core::selection_parser::SelectionStatus;
use activellm_core::session::{
    load_session, save_session, PersistError, Session, SessionConfig, SessionError, SessionStatus, SubmitOutcome,
};
use activellm_core::strategies::{ActiveLlmStrategy, StrategyId, StrategySpec};

fn pool() -> Pool {
    SyntheticSpec::default().split("flow", 60).0
}

fn prompt() -> PromptConfig {
    PromptConfig { selection_size: 4, presented_batch_size: 12, cot_mode: CotMode::None, ..PromptConfig::default() }
}

fn config(budget: usize) -> SessionConfig {
    SessionConfig {
        manifest: None,
        prompt: prompt(),
        settings: GenerationSettings::default(),
        strategy: StrategySpec::new(StrategyId::ActiveLlm),
        budget,
        step: 4,
        seed: 11,
    }
}

fn selector_strategy(clock: &Arc<FixedClock>) -> ActiveLlmStrategy {
    let client = LlmClient::new(Arc::new(SimulatedSelector::new(5))).with_clock(clock.clone());
    ActiveLlmStrategy::new(Arc::new(client), prompt(), GenerationSettings::default())
}

#[test]
fn refusal_is_reasked_once() {
    let pool = pool();
    let clock = Arc::new(FixedClock::default());
    let mock = scripted_mock([ScriptStep::Refusal("policy".into()), "Selected indices: 1, 5, 7, 9".into()]).unwrap();
    let client = LlmClient::new(mock.clone()).with_clock(clock.clone());
    let mut strategy = ActiveLlmStrategy::new(Arc::new(client), prompt(), GenerationSettings::default());
    let mut session = Session::new("r", config(8)).unwrap();
    let record = session.run_iteration(&pool, &mut strategy, &SimulatedOracle, clock.as_ref()).unwrap();
    assert_eq!(record.exchanges.len(), 2);
    assert_eq!(record.exchanges[0].response_text, "");
    assert_eq!(record.selection.indices, vec![1, 5, 7, 9]);
    assert_eq!(record.selection.status, SelectionStatus::Exact);
    assert_eq!(mock.remaining(), 0);
}

#[test]
fn iterations_never_repeat_an_instance() {
    let pool = pool();
    let clock = Arc::new(FixedClock::default());
    let mut strategy = selector_strategy(&clock);
    let mut session = Session::new("d", config(40)).unwrap();
    session.run_to_budget(&pool, &mut strategy, &SimulatedOracle, clock.as_ref(), |_| Ok(())).unwrap();
    assert_eq!(session.status(), SessionStatus::Complete);
    let mut seen = std::collections::BTreeSet::new();
    for record in &session.history.iterations {
        for &i in &record.selection.indices {
            assert!(seen.insert(i), "index {i} selected twice");
        }
    }
    assert_eq!(seen.len(), 40);
    assert_eq!(session.history.labeled.len(), 40);
}

#[test]
fn partial_submissions_merge_and_reject_bad_entries() {
    let pool = pool();
    let clock = Arc::new(FixedClock::default());
    let mut strategy = selector_strategy(&clock);
    let mut session = Session::new("p", config(8)).unwrap();
    let task = session.begin_iteration(&pool, &mut strategy, clock.as_ref()).unwrap().selection.indices.clone();
    assert!(matches!(session.begin_iteration(&pool, &mut strategy, clock.as_ref()), Err(SessionError::OpenTask)));

    let gold = |i: usize| pool.instances()[i].gold_label.clone().unwrap();
    let not_selected = (0..pool.len()).find(|i| !task.contains(i)).unwrap();
    let bad = BTreeMap::from([(task[0], gold(task[0])), (not_selected, gold(not_selected))]);
    assert!(matches!(session.submit_labels(&pool, &bad), Err(SessionError::NotInTask(_))));
    let bad = BTreeMap::from([(task[0], "unknown".to_string())]);
    assert!(matches!(session.submit_labels(&pool, &bad), Err(SessionError::LabelDomain { .. })));

    let first = BTreeMap::from([(task[0], gold(task[0]))]);
    assert_eq!(session.submit_labels(&pool, &first).unwrap(), SubmitOutcome::Partial { remaining: task[1..].to_vec() });
    let rest: BTreeMap<usize, String> = task[1..].iter().map(|&i| (i, gold(i))).collect();
    assert_eq!(session.submit_labels(&pool, &rest).unwrap(), SubmitOutcome::Completed { iteration_number: 1 });
    assert_eq!(session.history.labeled.len(), 4);
    assert!(matches!(session.submit_labels(&pool, &rest), Err(SessionError::NoOpenTask)));
}

#[test]
fn saved_sessions_round_trip_and_detect_tampering() {
    let pool = pool();
    let clock = Arc::new(FixedClock::default());
    let mut strategy = selector_strategy(&clock);
    let mut session = Session::new("s", config(12)).unwrap();
    session.run_iteration(&pool, &mut strategy, &SimulatedOracle, clock.as_ref()).unwrap();
    session.begin_iteration(&pool, &mut strategy, clock.as_ref()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    save_session(&session, &path).unwrap();
    assert_eq!(load_session(&path).unwrap(), session);

    let raw = std::fs::read_to_string(&path).unwrap();
    let first = session.history.iterations[0].selection.indices[0];
    let label = &session.history.labeled[&first];
    let tampered = raw.replacen(&format!("\"{first}\": \"{label}\""), &format!("\"{first}\": \"zzz\""), 1);
    assert_ne!(tampered, raw);
    std::fs::write(&path, tampered).unwrap();
    assert!(matches!(load_session(&path), Err(PersistError::Integrity { .. })));

    let bumped = raw.replacen("\"schema_version\": 1", "\"schema_version\": 99", 1);
    assert_ne!(bumped, raw);
    std::fs::write(&path, bumped).unwrap();
    assert!(matches!(load_session(&path), Err(PersistError::Migration { found: 99, .. })));
}

#[test]
fn resumed_session_matches_uninterrupted_run() {
    let pool = pool();
    let clock = Arc::new(FixedClock::default());
    let mut straight = Session::new("x", config(12)).unwrap();
    let mut strategy = selector_strategy(&clock);
    for _ in 0..3 {
        straight.run_iteration(&pool, &mut strategy, &SimulatedOracle, clock.as_ref()).unwrap();
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.json");
    let mut first = Session::new("x", config(12)).unwrap();
    let mut strategy = selector_strategy(&clock);
    for _ in 0..2 {
        first.run_iteration(&pool, &mut strategy, &SimulatedOracle, clock.as_ref()).unwrap();
    }
    save_session(&first, &path).unwrap();
    drop(first);

    let mut resumed = load_session(&path).unwrap();
    let mut strategy = selector_strategy(&clock);
    resumed.run_iteration(&pool, &mut strategy, &SimulatedOracle, clock.as_ref()).unwrap();
    assert_eq!(resumed, straight);
    assert_eq!(resumed.status(), SessionStatus::Complete);
}
