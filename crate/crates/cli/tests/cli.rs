use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = r#"
seed = 4
[synth]
stage1_clips = 12
stage1_test_clips = 6
seq_tracks = 3
eval_tracks = 2
pair_tracks = 2
val_tracks = 1
min_duration_s = 2.5
max_duration_s = 3.0
[stage1]
epochs = 2
hidden = 8
[stage2]
epochs = 2
[stage3]
epochs = 1
sweep = [0.1, 1.0]
[extract]
tracks = 1
[run]
cross_entropy = false
extract_oracle = false
"#;

fn dser(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dser"))
        .args(args)
        .env("RUST_LOG", "error")
        .env_remove("DSER_SEED")
        .output()
        .unwrap()
}

fn error_line(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("stderr has a line");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("{line:?}: {e}"))
}

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.toml");
    std::fs::write(&path, TINY).unwrap();
    path.display().to_string()
}

#[test]
fn missing_input_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let res = dser(&["stage1-train", "--out", &out, "--data", "/nonexistent.jsonl"]);
    assert_eq!(res.status.code(), Some(1));
    let line = error_line(&res);
    assert_eq!(line["status"], "error");
    assert_eq!(line["kind"], "validation");
    assert_eq!(line["exit_code"], 1);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[stage1]\nepoch = 3\n").unwrap();
    let res = dser(&[
        "synth-gen",
        "--config",
        &cfg.display().to_string(),
        "--out",
        &dir.path().display().to_string(),
    ]);
    assert_eq!(res.status.code(), Some(1));
    assert_eq!(error_line(&res)["kind"], "validation");
}

#[test]
fn bad_seed_variable_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let res = Command::new(env!("CARGO_BIN_EXE_dser"))
        .args(["synth-gen", "--out", &dir.path().display().to_string()])
        .env("DSER_SEED", "minus one")
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn stride_longer_than_window_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let res = dser(&[
        "seq-gen", "--out", &out, "--model", "m.json", "--tracks", "t.jsonl", "--window", "1.0", "--stride", "1.5",
    ]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn tiny_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    let res = dser(&["run-all", "--config", &cfg, "--out", &out.display().to_string()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    for f in [
        "stage1_dirichlet.json",
        "stage1_dirichlet_log.csv",
        "stage1_eval.csv",
        "seq_dirichlet.jsonl",
        "stage2_dirichlet.json",
        "pairs.jsonl",
        "stage3.json",
        "eval_mae.csv",
        "beta_sweep.csv",
        "manifest.json",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }

    let mut mae = csv::Reader::from_path(out.join("eval_mae.csv")).unwrap();
    let rows: Vec<Vec<String>> = mae
        .records()
        .map(|r| r.unwrap().iter().map(str::to_string).collect())
        .collect();
    assert_eq!(rows.len(), 6);
    let ce_stage3 = rows.iter().find(|r| r[1] == "stage3" && r[2] == "ce").unwrap();
    assert_eq!(ce_stage3[4], "n/a");

    let sweep = std::fs::read_to_string(out.join("beta_sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 3);

    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["runs"]["run-all"]["seed"], 4);
    assert_eq!(manifest["runs"]["run-all"]["config_hash"].as_str().unwrap().len(), 64);

    // Single-stage commands accept the run-all outputs.
    let eval = dir.path().join("eval");
    let res = dser(&[
        "eval-mae",
        "--config",
        &cfg,
        "--out",
        &eval.display().to_string(),
        "--gt",
        &out.join("eval_gt.jsonl").display().to_string(),
        "--stage2-dirichlet",
        &out.join("stage2_dirichlet.json").display().to_string(),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(eval.join("eval_mae.csv").is_file());
}

#[test]
fn grad_check_reports_every_suite() {
    let res = dser(&["grad-check", "--instances", "2"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stdout));
    let text = String::from_utf8_lossy(&res.stdout);
    assert!(text.lines().filter(|l| l.starts_with("ok\t")).count() >= 6, "{text}");
    assert!(!text.contains("FAIL"));
}
