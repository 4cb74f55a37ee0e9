//! End-to-end checks of the command-line interface: exit codes, file
//! outputs, config merging, and the self-validation subcommands.

use std::path::Path;
use std::process::{Command, Output};

fn akgrank(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_akgrank"))
        .args(args)
        .env_remove("AKGRANK_SEED")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write(path: &Path, contents: &str) {
    std::fs::write(path, contents).unwrap();
}

#[test]
fn missing_budget_is_a_usage_error() {
    let out = akgrank(&["simulate", "--items", "4"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--budget"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = akgrank(&["simulate", "--items", "4", "--budget", "3", "--frobnicate"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn small_simulation_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("results");
    let out = akgrank(&[
        "simulate", "--items", "3", "--budget", "5", "--trials", "2", "--policy", "akg",
        "--seed", "1", "--out", out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    for name in ["accuracy.csv", "frequency.csv", "report.json"] {
        assert!(out_dir.join(name).exists(), "{name} missing");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["items"], 3);
    assert_eq!(report["budget"], 5);
    assert_eq!(report["policy"], "akg");
    let acc = std::fs::read_to_string(out_dir.join("accuracy.csv")).unwrap();
    assert!(acc.starts_with("policy,stage,mean,stderr\n"));
    assert_eq!(acc.lines().count(), 6); // header + one row per stage
}

#[test]
fn single_stage_two_items_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = akgrank(&[
        "simulate", "--items", "2", "--budget", "1", "--trials", "1", "--policy", "akg",
        "--seed", "1", "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let acc = std::fs::read_to_string(dir.path().join("accuracy.csv")).unwrap();
    assert_eq!(acc.lines().count(), 2);
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.json");
    write(
        &config_path,
        r#"{"items": 3, "budget": 4, "trials": 5, "seed": 42, "policy": "random"}"#,
    );
    let out_dir = dir.path().join("results");
    let out = akgrank(&[
        "simulate",
        "--config", config_path.to_str().unwrap(),
        "--trials", "2",
        "--out", out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["trials"], 2, "flag must override the config file");
    assert_eq!(report["seed"], 42);
    assert_eq!(report["policy"], "random");
}

#[test]
fn env_var_provides_the_fallback_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_akgrank"))
        .args([
            "simulate", "--items", "2", "--budget", "2", "--out",
            dir.path().to_str().unwrap(),
        ])
        .env("AKGRANK_SEED", "77")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["seed"], 77);
}

#[test]
fn identical_invocations_are_byte_identical() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    for dir in [&dir_a, &dir_b] {
        let out = akgrank(&[
            "simulate", "--items", "4", "--budget", "6", "--trials", "3", "--seed", "9",
            "--out", dir.path().to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0);
    }
    for name in ["accuracy.csv", "frequency.csv", "report.json"] {
        assert_eq!(
            std::fs::read(dir_a.path().join(name)).unwrap(),
            std::fs::read(dir_b.path().join(name)).unwrap(),
            "{name} not reproducible"
        );
    }
}

#[test]
fn help_lists_every_simulate_flag() {
    let out = akgrank(&["simulate", "--help"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    for flag in [
        "--items", "--workers", "--budget", "--trials", "--policy", "--seed", "--batch",
        "--world", "--eval", "--out", "--threads", "--config",
    ] {
        assert!(text.contains(flag), "help missing {flag}");
    }
    assert!(text.contains("default"));
}

const POOL: &str = "item_a,item_b,worker,outcome\n0,1,0,1\n0,2,0,-1\n1,2,1,1\n0,1,1,1\n";
const LEVELS: &str = "item,level\n0,2\n1,1\n2,3\n";

#[test]
fn replay_runs_against_a_recorded_pool() {
    let dir = tempfile::tempdir().unwrap();
    let pool = dir.path().join("pool.csv");
    let levels = dir.path().join("levels.csv");
    write(&pool, POOL);
    write(&levels, LEVELS);
    let out_dir = dir.path().join("results");
    let out = akgrank(&[
        "replay",
        "--pool", pool.to_str().unwrap(),
        "--levels", levels.to_str().unwrap(),
        "--budget", "4",
        "--seed", "3",
        "--out", out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["items"], 3);
    assert_eq!(report["truncated_trials"], 0);
    assert_eq!(report["checkpoints"].as_array().unwrap().len(), 4);
}

#[test]
fn replay_budget_beyond_pool_truncates() {
    let dir = tempfile::tempdir().unwrap();
    let pool = dir.path().join("pool.csv");
    write(&pool, POOL);
    let out_dir = dir.path().join("results");
    let out = akgrank(&[
        "replay",
        "--pool", pool.to_str().unwrap(),
        "--budget", "10",
        "--out", out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["truncated_trials"], 1);
}

#[test]
fn replay_duplicate_row_fails_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let pool = dir.path().join("pool.csv");
    write(&pool, "item_a,item_b,worker,outcome\n0,1,0,1\n0,1,0,-1\n");
    let out = akgrank(&[
        "replay", "--pool", pool.to_str().unwrap(), "--budget", "2",
        "--out", dir.path().join("r").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn replay_heterogeneous_respects_worker_cells() {
    let dir = tempfile::tempdir().unwrap();
    let pool = dir.path().join("pool.csv");
    let levels = dir.path().join("levels.csv");
    write(&pool, POOL);
    write(&levels, LEVELS);
    let out_dir = dir.path().join("results");
    let out = akgrank(&[
        "replay",
        "--pool", pool.to_str().unwrap(),
        "--levels", levels.to_str().unwrap(),
        "--budget", "4",
        "--workers", "1",
        "--out", out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["workers"], 2);
    let counts = report["mean_worker_counts"].as_array().unwrap();
    let total: f64 = counts.iter().map(|v| v.as_f64().unwrap()).sum();
    assert_eq!(total, 4.0);
}

#[test]
fn oracle_check_passes_and_detects_perturbation() {
    let out = akgrank(&["oracle-check", "--cases", "6", "--seed", "2"]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("OK"));

    let out = akgrank(&["oracle-check", "--cases", "6", "--seed", "2", "--perturb-mm", "1e-3"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn lop_check_passes_and_guards_large_item_counts() {
    let out = akgrank(&["lop-check", "--cases", "15", "--seed", "4"]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("OK"));

    let out = akgrank(&["lop-check", "--cases", "2", "--max-items", "7"]);
    assert_eq!(code(&out), 2);

    let out = akgrank(&["lop-check", "--cases", "2", "--max-items", "7", "--force", "--seed", "4"]);
    assert_eq!(code(&out), 0);

    let out = akgrank(&["lop-check", "--cases", "2", "--max-items", "10", "--force"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn simulate_world_presets_parse() {
    let dir = tempfile::tempdir().unwrap();
    let out = akgrank(&[
        "simulate", "--items", "10", "--budget", "3", "--world", "close-extremes",
        "--seed", "1", "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let world = dir.path().join("world.json");
    write(&world, r#"{"rho": [0.4, 0.7, 1.0]}"#);
    let out = akgrank(&[
        "simulate", "--items", "4", "--workers", "3", "--budget", "5",
        "--world", world.to_str().unwrap(),
        "--seed", "1", "--out", dir.path().join("het").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn invalid_combinations_exit_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    // Distance policy has no worker-aware variant.
    let out = akgrank(&[
        "simulate", "--items", "4", "--workers", "2", "--budget", "5",
        "--policy", "distance", "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);

    // Batch larger than the number of pairs.
    let out = akgrank(&[
        "simulate", "--items", "3", "--budget", "5", "--batch", "10",
        "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);

    // Tie-tolerant evaluation without a replay pool.
    let out = akgrank(&[
        "simulate", "--items", "3", "--budget", "5", "--eval", "ties",
        "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}
