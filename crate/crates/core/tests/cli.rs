use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;
use umf::scenario::{load_scenario, run_scenario};

const SCENARIOS: [&str; 7] = ["la1", "la2a", "la2b", "la3", "la4", "detach", "gateway"];

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("fixtures/scenarios/{name}.json"))
}

fn umf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_umf")).args(args).output().unwrap()
}

fn path_str(p: &std::path::Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn scenarios_replay_byte_for_byte() {
    for name in SCENARIOS {
        let spec = load_scenario(fixture(name)).unwrap();
        let a = run_scenario(&spec, None).unwrap().trace.to_jsonl();
        let b = run_scenario(&spec, None).unwrap().trace.to_jsonl();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn trace_files_from_separate_processes_match() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    let la4 = fixture("la4");
    for out in [&a, &b] {
        let o = umf(&["run", path_str(&la4), "--seed", "7", "--trace", path_str(out)]);
        assert_eq!(o.status.code(), Some(0));
    }
    let (ta, tb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(!ta.is_empty());
    assert_eq!(ta, tb);
    for (i, line) in String::from_utf8(ta).unwrap().lines().enumerate() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["seq"], i as u64);
    }
}

#[test]
fn passing_scenarios_exit_zero() {
    let paths: Vec<PathBuf> = SCENARIOS.iter().map(|n| fixture(n)).collect();
    let mut args = vec!["run", "--jobs", "4"];
    args.extend(paths.iter().map(|p| path_str(p)));
    let o = umf(&args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert_eq!(stdout.lines().filter(|l| l.starts_with("ok ")).count(), SCENARIOS.len());
}

#[test]
fn failed_assertion_exits_one() {
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(fixture("la1")).unwrap()).unwrap();
    v["assertions"]
        .as_array_mut()
        .unwrap()
        .push(serde_json::json!({"kind": "require_event", "event": "leader_elected"}));
    let file = tempfile::NamedTempFile::new().unwrap();
    std::fs::write(file.path(), v.to_string()).unwrap();
    let o = umf(&["run", path_str(file.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8(o.stdout).unwrap().contains("FAIL require_event(leader_elected)"));
}

#[test]
fn unreadable_scenario_exits_two() {
    let o = umf(&["run", "/nonexistent/scenario.json"]);
    assert_eq!(o.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.json");
    std::fs::write(&junk, "{ not json").unwrap();
    assert_eq!(umf(&["run", path_str(&junk)]).status.code(), Some(2));
}

#[test]
fn memory_dump_holds_each_store() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("memory.json");
    let o = umf(&["run", path_str(&fixture("la2a")), "--memory-dump", path_str(&dump)]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(dump).unwrap()).unwrap();
    assert!(v["chatdb"].as_array().unwrap().iter().any(|r| r["table"] == "weather"));
}

#[test]
fn election_timeout_exits_one() {
    let o = umf(&["elect", "--nodes", "3", "--drop", "1.0", "--seed", "1", "--max-ticks", "40"]);
    assert_eq!(o.status.code(), Some(1));
    let last = String::from_utf8(o.stdout).unwrap().lines().last().unwrap().to_string();
    assert_eq!(serde_json::from_str::<Value>(&last).unwrap()["outcome"], "timeout");
}

#[test]
fn election_summary_names_the_leader() {
    let o = umf(&["elect", "--nodes", "5", "--seed", "4"]);
    assert_eq!(o.status.code(), Some(0));
    let last = String::from_utf8(o.stdout).unwrap().lines().last().unwrap().to_string();
    let v: Value = serde_json::from_str(&last).unwrap();
    assert_eq!(v["outcome"], "elected");
    assert!(v["leader"].as_u64().unwrap() < 5);
}
