use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crate-sim"))
        .args(args)
        .env_remove("CRATE_SCENARIO_DIR")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn bundled_scenarios_all_pass() {
    let dir = scenario_dir();
    let mut names: Vec<String> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .map(|p| p.file_stem().unwrap().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let mut args = vec!["run", "--jobs", "4", "--scenario-dir", dir.to_str().unwrap()];
    args.extend(names.iter().map(String::as_str));
    let out = sim(&args);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    let text = stdout(&out);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS ")).count(), names.len());
    let order: Vec<&str> = text.lines().map(|l| l.split_whitespace().nth(1).unwrap()).collect();
    assert_eq!(order, names.iter().map(String::as_str).collect::<Vec<_>>());
}

#[test]
fn names_resolve_through_the_environment() {
    let out = Command::new(env!("CARGO_BIN_EXE_crate-sim"))
        .args(["run", "honest_chain"])
        .env("CRATE_SCENARIO_DIR", scenario_dir())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).starts_with("PASS honest_chain"));
}

#[test]
fn traces_are_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let path = scenario_dir().join("cross_pair.toml");
    let mut traces = Vec::new();
    for i in 0..2 {
        let t = tmp.path().join(format!("t{i}.ndjson"));
        let out = sim(&["run", path.to_str().unwrap(), "--trace", t.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0));
        traces.push(std::fs::read(&t).unwrap());
    }
    assert!(!traces[0].is_empty());
    assert_eq!(traces[0], traces[1]);
    for line in String::from_utf8(traces.remove(0)).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("seq").is_some() && v.get("event").is_some());
    }
}

#[test]
fn several_scenarios_trace_into_a_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = scenario_dir();
    let out_dir = tmp.path().join("traces");
    let out = sim(&[
        "run",
        "--scenario-dir",
        dir.to_str().unwrap(),
        "honest_chain",
        "local_only",
        "--trace",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out_dir.join("honest_chain.ndjson").exists());
    assert!(out_dir.join("local_only.ndjson").exists());
}

#[test]
fn unmet_expectation_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenario_dir().join("honest_chain.toml"))
        .unwrap()
        .replace("rounds = 4", "rounds = 5");
    let path = tmp.path().join("wrong.toml");
    std::fs::write(&path, text).unwrap();
    let out = sim(&["run", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).starts_with("FAIL "));
}

#[test]
fn malformed_or_missing_scenarios_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    std::fs::write(&path, "version = 1\nname = 3\n").unwrap();
    assert_eq!(sim(&["run", path.to_str().unwrap()]).status.code(), Some(2));
    let missing = tmp.path().join("absent.toml");
    assert_eq!(sim(&["run", missing.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn seed_override_is_reported() {
    let path = scenario_dir().join("dag_split.toml");
    let out = sim(&["run", path.to_str().unwrap(), "--seed", "9", "--metrics"]);
    let text = stdout(&out);
    assert!(text.lines().next().unwrap().contains("(seed 9)"), "{text}");
    let metrics: serde_json::Value = serde_json::from_str(text.lines().nth(1).unwrap()).unwrap();
    assert!(metrics["instances"].is_array());
}
