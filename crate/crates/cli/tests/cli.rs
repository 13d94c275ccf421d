use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn geoshare(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geoshare")).args(args).output().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn share_writes_report_timing_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let run = geoshare(&["share", "--out", out, "--seed", "2", "--csv"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let report = read_json(&dir.path().join("report.json"));
    assert_eq!(report["config"]["seed"], 2);
    assert_eq!(report["methods"][0]["method"], "geo-sharing");
    let timing = read_json(&dir.path().join("timing.json"));
    assert_eq!(timing["command"], "share");
    let csv = std::fs::read_to_string(dir.path().join("methods.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("method,"));
    assert_eq!(lines.count(), report["methods"].as_array().unwrap().len());
}

#[test]
fn mode_flag_selects_paper_literal() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let run = geoshare(&["share", "--out", out, "--mode", "paper-literal"]);
    assert!(run.status.success());
    let report = read_json(&dir.path().join("report.json"));
    assert_eq!(report["config"]["sharing"]["align"]["mode"], "paper-literal");
    assert!(report["geo_sharing"]["compression_ratio"].is_null());
}

#[test]
fn train_saves_a_loadable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert!(geoshare(&["train", "--out", out]).status.success());
    let report = read_json(&dir.path().join("train.json"));
    let (manifest, params) = geoshare::net::checkpoint::load(&dir.path().join("checkpoint")).unwrap();
    assert_eq!(report["config"]["seed"].as_u64().unwrap(), manifest.seed);
    let hash = geoshare::harness::json_hash(&params).unwrap();
    assert_eq!(report["params_hash"].as_str().unwrap(), hash);
}

#[test]
fn config_file_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = geoshare::harness::ExperimentConfig::default();
    config.ablation.beta_values = vec![1e-3, 1.0];
    config.ablation.t_values = vec![];
    let path = dir.path().join("config.json");
    std::fs::write(&path, serde_json::to_string(&config).unwrap()).unwrap();
    let out = dir.path().join("out");
    let run = geoshare(&["ablate", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let tables = read_json(&out.join("ablation.json"))["tables"].clone();
    let tables = tables.as_array().unwrap();
    assert_eq!(tables.len(), 1);
    assert_eq!(tables[0]["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn oracle_suites_pass() {
    let dir = tempfile::tempdir().unwrap();
    let run = geoshare(&["oracle", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(stdout.contains("PASS") && !stdout.contains("FAIL"), "{stdout}");
}

#[test]
fn bad_input_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(geoshare(&["bogus"]).status.code(), Some(1));
    assert_eq!(geoshare(&["share", "--config", "/nonexistent.json"]).status.code(), Some(1));
    // the default ablation section lists no sweep values
    let run = geoshare(&["ablate", "--out", out]);
    assert_eq!(run.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&run.stderr).contains("configuration error"));
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"seed": "not a number"}"#).unwrap();
    assert_eq!(geoshare(&["share", "--config", bad.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn help_exits_cleanly() {
    let run = geoshare(&["--help"]);
    assert_eq!(run.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&run.stdout).contains("oracle"));
}
