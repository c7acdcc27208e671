use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use crosatfl::compute::{sample_profiles, ProfileDistributions};
use crosatfl::engine::ProfileSource;
use crosatfl::starmask::{MaskedPolicy, PolicyDims};
use crosatfl_cli::scenario::{InstanceFile, Scenario};
use crosatfl_cli::TABLE_ROWS;
use serde_json::Value;

fn bin(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crosatfl"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn default_scenario() -> String {
    std::fs::canonicalize("../../scenarios/default.toml")
        .unwrap()
        .display()
        .to_string()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn assert_schema(name: &str, doc: &Value) {
    let path = PathBuf::from("../../schemas").join(format!("{name}.schema.json"));
    let schema = read_json(&path);
    let compiled = jsonschema::JSONSchema::compile(&schema).unwrap();
    assert!(compiled.is_valid(doc), "{name} output does not match its schema");
}

#[test]
fn invalid_scenario_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[session]\nedge_rounds = 0\n").unwrap();
    let out = bin(&["simulate", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));

    std::fs::write(dir.path().join("typo.toml"), "[session]\nedge_round = 3\n").unwrap();
    assert_eq!(bin(&["simulate", "typo.toml"], dir.path()).status.code(), Some(1));
    assert_eq!(bin(&["simulate", "missing.toml"], dir.path()).status.code(), Some(1));
}

#[test]
fn infeasible_clustering_exits_2_with_k_min() {
    let dir = tempfile::tempdir().unwrap();
    let mut profiles = sample_profiles(4, 0.5, 1, &ProfileDistributions::default()).unwrap();
    for (i, p) in profiles.iter_mut().enumerate() {
        p.id = i * 3;
        p.fan_out = 1;
    }
    let mut s = Scenario::default();
    s.session.client_count = profiles.len();
    s.session.profiles = ProfileSource::Inline { profiles };
    std::fs::write(dir.path().join("s.toml"), s.to_toml()).unwrap();
    let out = bin(&["cluster", "s.toml", "--out", "c.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let report = read_json(&dir.path().join("c.json"));
    assert_eq!(report["feasible"], Value::Bool(false));
    let k_min = report["k_min"].as_u64().unwrap();
    assert!(String::from_utf8_lossy(&out.stderr).contains(&format!("at least {k_min} clusters")));
    assert_schema("cluster", &report);
}

#[test]
fn diverging_training_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("i.toml"), "[family]\ncount = 2\nclients = 8\n").unwrap();
    let out = bin(
        &["train-policy", "i.toml", "--episodes", "50", "--learning-rate", "1e300", "--out", "p.bin"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulate_outputs_match_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let sc = default_scenario();
    for method in ["crosatfl", "fedsyn", "no-skip"] {
        let out = bin(&["simulate", &sc, "--method", method, "--out-dir", method], dir.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let d = dir.path().join(method);
        let ledger = read_json(&d.join("ledger.json"));
        assert_schema("ledger", &ledger);
        assert_eq!(ledger["method"], Value::String(method.into()));
        for f in ["events.csv", "metrics.csv", "skips.csv"] {
            let text = std::fs::read_to_string(d.join(f)).unwrap();
            assert!(text.lines().count() >= 1, "{method}: {f} has no header");
        }
        let metrics = std::fs::read_to_string(d.join("metrics.csv")).unwrap();
        assert_eq!(metrics.lines().count(), 41);
        if method == "fedsyn" {
            assert!(!d.join("partition.json").exists());
        } else {
            assert_schema("partition", &read_json(&d.join("partition.json")));
        }
    }
}

#[test]
fn cluster_outputs_match_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(&["cluster", &default_scenario(), "--out", "c.json"], dir.path());
    assert!(out.status.success());
    let report = read_json(&dir.path().join("c.json"));
    assert_schema("cluster", &report);
    assert_eq!(report["partition"]["k"].as_u64(), Some(9));
    let bad = bin(&["cluster", &default_scenario(), "--policy", "random", "--out", "x.json"], dir.path());
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn zero_episodes_keeps_the_initial_policy() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("i.toml"), "[family]\ncount = 3\nclients = 8\n").unwrap();
    let out = bin(&["train-policy", "i.toml", "--episodes", "0", "--seed", "11", "--out", "p.bin"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (policy, header) = MaskedPolicy::from_bytes(&std::fs::read(dir.path().join("p.bin")).unwrap()).unwrap();
    assert_eq!(header.episodes, 0);
    let c = InstanceFile::parse("").unwrap().constraints;
    assert_eq!(policy, MaskedPolicy::new(PolicyDims::for_constraints(&c), 11));
    let trace = std::fs::read_to_string(dir.path().join("p.bin.trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1);
    assert_schema("train-report", &read_json(&dir.path().join("p.bin.eval.json")));
}

#[test]
fn trained_policy_matches_or_beats_the_constructor() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("i.toml"), "[family]\ncount = 20\nclients = 12\n").unwrap();
    let out = bin(&["train-policy", "i.toml", "--episodes", "300", "--out", "p.bin"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = std::fs::read_to_string(dir.path().join("p.bin.trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 301);
    let report = read_json(&dir.path().join("p.bin.eval.json"));
    assert_schema("train-report", &report);
    assert_eq!(report["instances"].as_u64(), Some(20));
    assert!(report["win_fraction"].as_f64().unwrap() >= 0.5, "{report}");
}

#[test]
fn trained_policy_drives_cluster() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("i.toml"), "[family]\ncount = 4\nclients = 10\n[constraints]\nk_max = 10\n").unwrap();
    assert!(bin(&["train-policy", "i.toml", "--episodes", "40", "--out", "p.bin"], dir.path()).status.success());
    let out = bin(&["cluster", &default_scenario(), "--policy", "trained:p.bin", "--out", "c.json"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&dir.path().join("c.json"));
    assert_schema("cluster", &report);
    assert_eq!(report["feasible"], Value::Bool(true));
}

#[test]
fn compare_reports_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(&["compare", &default_scenario(), "--out", "cmp"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cmp = read_json(&dir.path().join("cmp/comparison.json"));
    assert_schema("comparison", &cmp);
    for row in TABLE_ROWS {
        assert!(cmp["table"][row].is_object(), "row {row} missing");
    }
    let ratio = cmp["gs_count_ratio"].as_f64().unwrap();
    assert!((ratio - 3200.0 / 18.0).abs() < 1e-9);
    let wait = &cmp["table"]["Waiting Time (Hours)"];
    assert!(wait["crosatfl"].as_f64().unwrap() < wait["fedsyn"].as_f64().unwrap());
    let csv = std::fs::read_to_string(dir.path().join("cmp/comparison.csv")).unwrap();
    assert_eq!(csv.lines().count(), TABLE_ROWS.len() + 1);
}
