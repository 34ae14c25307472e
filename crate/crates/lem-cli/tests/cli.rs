//! Command-line contract tests: flags, exit codes, determinism.

use std::path::Path;
use std::process::Command;

fn lem() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lem"))
}

fn write_config(dir: &Path, out_dir: &Path, horizon: usize) -> std::path::PathBuf {
    let config = serde_json::json!({
        "data": {
            "out_dir": out_dir.display().to_string(),
            "synth": { "n_bars": 600, "regime": "iid", "frequency_minutes": 15, "seed": 3 }
        },
        "features": {
            "lookback_steps": 4,
            "horizon_steps": horizon,
            "normalization_window": 96,
            "seasonal_mode": "intraday"
        },
        "encoder": { "hidden_size": 4, "num_heads": 2 },
        "decision": { "mlp_width": 4 },
        "training": {
            "learning_rate": 0.001,
            "batch_size": 32,
            "max_epochs": 1,
            "seed": 3,
            "precision": "single"
        }
    });
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

#[test]
fn unknown_subcommand_and_flag_exit_one_with_usage() {
    let out = lem().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
    assert!(!out.stderr.is_empty(), "usage goes to stderr");

    let out = lem().args(["synth", "--bogus-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_config_is_a_validation_error() {
    let out = lem().args(["synth", "--config", "/nonexistent/c.json"]).output().unwrap();
    // Unreadable config counts as bad input.
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_is_deterministic_under_seed_flag() {
    let dir = tempfile::tempdir().unwrap();
    let run_a = dir.path().join("a");
    let run_b = dir.path().join("b");
    let config_a = write_config(dir.path(), &run_a, 4);

    let out = lem()
        .args(["synth", "--config", config_a.to_str().unwrap(), "--seed", "7"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let config_b = dir.path().join("config_b.json");
    let mut cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&config_a).unwrap()).unwrap();
    cfg["data"]["out_dir"] = serde_json::json!(run_b.display().to_string());
    std::fs::write(&config_b, serde_json::to_string(&cfg).unwrap()).unwrap();
    let out = lem()
        .args(["synth", "--config", config_b.to_str().unwrap(), "--seed", "7"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));

    let bytes_a = std::fs::read(run_a.join("data/syn_15m.csv")).unwrap();
    let bytes_b = std::fs::read(run_b.join("data/syn_15m.csv")).unwrap();
    assert_eq!(bytes_a, bytes_b, "same seed, same files");
}

#[test]
fn evaluate_refuses_mismatched_horizon_with_shape_diff() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let config = write_config(dir.path(), &run, 4);

    for step in ["synth", "prepare", "train"] {
        let out = lem().args([step, "--config", config.to_str().unwrap()]).output().unwrap();
        assert_eq!(
            out.status.code(),
            Some(0),
            "{step}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }

    // Same run directory, horizon changed: the checkpoint no longer matches.
    let out = lem()
        .args([
            "evaluate",
            "--config",
            config.to_str().unwrap(),
            "--set",
            "features.horizon_steps=6",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("horizon"), "names the mismatched dimension: {stderr}");
    assert!(stderr.contains("[6]") && stderr.contains("[4]"), "shows the shape diff: {stderr}");
}

#[test]
fn train_without_prepare_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let config = write_config(dir.path(), &run, 4);
    let out = lem().args(["synth", "--config", config.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let out = lem().args(["train", "--config", config.to_str().unwrap()]).output().unwrap();
    assert_ne!(out.status.code(), Some(0));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("prepare"), "points at the missing step: {stderr}");
}

#[test]
fn missing_artifact_mid_pipeline_is_a_runtime_failure() {
    // `report` without a stored evaluation hits an I/O error: exit code 2.
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    std::fs::create_dir_all(&run).unwrap();
    let config = write_config(dir.path(), &run, 4);
    let out = lem().args(["report", "--config", config.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn set_overrides_reach_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let config = write_config(dir.path(), &run, 4);
    let out = lem()
        .args([
            "synth",
            "--config",
            config.to_str().unwrap(),
            "--set",
            "data.synth.n_bars=700",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(run.join("data/syn_15m.csv")).unwrap();
    assert_eq!(csv.lines().count(), 701, "700 bars plus header");
}
