//! Shipped scenario files and generated suites, run end to end.

use std::path::PathBuf;

use chainflow_core::engine::Design;
use chainflow_sim::batch::{run_batch, Mode};
use chainflow_sim::{generate, run, run_seeded, Scenario, ScenarioError};

fn shipped(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name);
    Scenario::load(&path).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn assert_passed(s: &Scenario) {
    let r = run(s).unwrap_or_else(|e| panic!("{}: {e}", s.name));
    for a in &r.assertions {
        assert!(a.passed, "{} seed {}: {} failed: {}", s.name, s.seed, a.name, a.evidence);
    }
    assert!(r.quiescent, "{} did not settle", s.name);
}

#[test]
fn shipped_scenarios_pass() {
    for name in ["random-0.json", "deferred-choice-race.json", "mirrored-0.json", "forced-fork.json", "latency-k2.json"] {
        assert_passed(&shipped(name));
    }
}

#[test]
fn shipped_files_are_canonical() {
    for name in ["random-0.json", "forced-fork.json"] {
        let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name);
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(shipped(name).to_canonical(), bytes, "{name}");
    }
}

#[test]
fn same_seed_same_trace() {
    let s = generate::random(3, 11);
    let a = run(&s).unwrap();
    let b = run(&s).unwrap();
    assert_eq!(a.trace_jsonl(), b.trace_jsonl());
    let c = run_seeded(&s, 12).unwrap();
    assert_ne!(a.trace_jsonl(), c.trace_jsonl());
}

#[test]
fn forks_reorganize_and_match_replay() {
    let r = run(&generate::forced_fork(4)).unwrap();
    assert!(r.metrics.reorgs > 0, "partition produced no reorganization");
    assert!(r.metrics.replay_checks > 0);
    assert!(r.metrics.replay_mismatches.is_empty(), "{:?}", r.metrics.replay_mismatches);
    assert!(r.passed());
}

#[test]
fn deferred_choice_races_both_designs() {
    for design in [Design::Actions, Design::States] {
        for seed in 0..10 {
            assert_passed(&generate::deferred_choice_race(seed, design));
        }
    }
}

#[test]
fn mined_blocks_meet_difficulty() {
    let r = run(&generate::random(1, 5)).unwrap();
    assert!(r.metrics.blocks_mined > 0);
    assert_eq!(r.metrics.pow_violations, 0);
}

#[test]
fn batch_modes_agree() {
    let scenarios: Vec<Scenario> = (0..6).map(|i| generate::random(i, 2)).collect();
    let seq = run_batch(&scenarios, Mode::Sequential);
    let par = run_batch(&scenarios, Mode::best());
    for (a, b) in seq.iter().zip(&par) {
        assert_eq!(a.as_ref().unwrap().trace_jsonl(), b.as_ref().unwrap().trace_jsonl());
    }
}

#[test]
fn malformed_scenario_names_the_field() {
    let mut v: serde_json::Value = serde_json::from_slice(&generate::forced_fork(1).to_canonical()).unwrap();
    v["nodes"][1]["mining_rate"] = serde_json::json!(0.5);
    match Scenario::from_json(v.to_string().as_bytes()) {
        Err(ScenarioError::Parse { path, .. }) => assert_eq!(path, "nodes[1].mining_rate"),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn undeclared_node_is_rejected() {
    let mut s = generate::forced_fork(1);
    s.actions[0].node = "ghost".into();
    assert!(matches!(s.validate(), Err(ScenarioError::UnknownNode(n)) if n == "ghost"));
}
