use std::path::PathBuf;

use crate_core::executor::JointOutcome;
use crate_core::scenario::{fuzz_scenario, load_scenario, parse_scenario, run_scenario, ScenarioError};

fn dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

#[test]
fn bundled_scenarios_meet_their_expectations() {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let sc = load_scenario(&path).unwrap();
            let rep = run_scenario(&sc, None).unwrap();
            assert!(rep.passed(), "{}: {:?}", sc.name, rep.failures);
            names.push(sc.name);
        }
    }
    assert!(names.len() >= 10, "found only {names:?}");
}

#[test]
fn runs_are_deterministic() {
    for seed in [0, 7, 430] {
        let sc = fuzz_scenario(seed);
        let a = run_scenario(&sc, None).unwrap();
        let b = run_scenario(&sc, None).unwrap();
        assert_eq!(a.trace.to_ndjson(), b.trace.to_ndjson());
        assert_eq!(a.final_digests, b.final_digests);
    }
}

// A dropped first action leaves one rollup with only local work, so its VSM
// accepts locally while the other pre-commits. The paired side must abort.
#[test]
fn paired_follower_beside_local_leader_aborts() {
    for seed in [430, 494] {
        let rep = run_scenario(&fuzz_scenario(seed), None).unwrap();
        for b in &rep.batches {
            assert!(b.settled, "seed {seed} batch {}", b.batch);
            assert!(!matches!(b.two_pc.outcome, JointOutcome::Stuck | JointOutcome::Inconsistent));
            assert!(!b.safety_violation());
        }
    }
}

#[test]
fn unknown_fields_are_config_errors() {
    let text = "version = 1\nname = \"x\"\ngsc = \"chain\"\nbogus = 3\n";
    assert!(matches!(parse_scenario(text, "x.toml"), Err(ScenarioError::Parse { .. })));
}

#[test]
fn fuzzed_scenarios_round_trip_through_toml() {
    for seed in 0..20 {
        let sc = fuzz_scenario(seed);
        let text = toml::to_string(&sc).unwrap();
        let back = parse_scenario(&text, "fuzz.toml").unwrap();
        assert_eq!(back, sc);
    }
}
