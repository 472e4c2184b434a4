use std::process::Command;

fn simctl() -> Command {
    Command::new(env!("CARGO_BIN_EXE_simctl"))
}

fn temp(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("simctl-test-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn run_writes_trace_and_metrics() {
    let scenario = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/forced-fork.json");
    let (trace, csv) = (temp("fork.jsonl"), temp("fork.csv"));
    let out = simctl()
        .args(["run", scenario, "--seed", "9", "--trace"])
        .arg(&trace)
        .arg("--metrics")
        .arg(&csv)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("seed=9"));
    assert!(stdout.contains("PASS converged_heads"));

    let lines = std::fs::read_to_string(&trace).unwrap();
    let last: serde_json::Value = serde_json::from_str(lines.lines().last().unwrap()).unwrap();
    assert!(last["final"]["quiescent"].as_bool().unwrap());
    for l in lines.lines() {
        serde_json::from_str::<serde_json::Value>(l).unwrap();
    }
    let table = std::fs::read_to_string(&csv).unwrap();
    assert!(table.starts_with("scenario,seed,"));
    assert_eq!(table.lines().count(), 2);
}

#[test]
fn generate_then_run_round_trips() {
    let path = temp("race.json");
    let gen = simctl().args(["generate", "race", "--seed", "5", "--out"]).arg(&path).status().unwrap();
    assert!(gen.success());
    let out = simctl().arg("run").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn bad_input_exits_with_two() {
    let path = temp("broken.json");
    std::fs::write(&path, br#"{"name": "x", "nodes": 3}"#).unwrap();
    let out = simctl().arg("run").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nodes"));
}

#[test]
fn oracle_sweep_reports_no_mismatches() {
    let out = simctl().args(["oracle", "--nets", "40", "--seed", "3"]).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("0 mismatches"));
}
