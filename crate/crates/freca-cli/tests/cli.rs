//! End-to-end tests of the `freca` binary: artifact emission,
//! deterministic reruns, exit codes, and flag/env handling.

use std::path::Path;
use std::process::{Command, Output};

fn freca(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_freca"))
        .args(args)
        .current_dir(cwd)
        .env_remove("FRECA_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn write_small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("exp.toml");
    std::fs::write(
        &path,
        "case = \"case3\"\nrounds = 2\n\n[data]\nsource = \"synthetic\"\nnum_classes = 10\ninput_dim = 16\ncluster_spread = 0.3\nsamples = 600\n\n[partition]\nscheme = \"iid\"\nclients = 8\nsamples_per_client = 20\n",
    )
    .unwrap();
    path
}

#[test]
fn run_emits_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_config(dir.path());
    let out = freca(
        &["run", config.to_str().unwrap(), "--out", "artifacts"],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for file in [
        "per_round.csv",
        "summary.csv",
        "report.json",
        "manifest.json",
        "chart.svg",
    ] {
        assert!(
            dir.path().join("artifacts").join(file).exists(),
            "missing {file}"
        );
    }
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("utility evaluations"));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_config(dir.path());
    for target in ["a", "b"] {
        let out = freca(
            &["run", config.to_str().unwrap(), "--out", target],
            dir.path(),
        );
        assert!(out.status.success());
    }
    for file in ["per_round.csv", "report.json", "summary.csv", "chart.svg"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between reruns");
    }
}

#[test]
fn flag_overrides_reach_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_config(dir.path());
    let out = freca(
        &[
            "run",
            config.to_str().unwrap(),
            "--out",
            "o",
            "--rounds",
            "1",
            "--seed",
            "5",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let report = std::fs::read_to_string(dir.path().join("o").join("report.json")).unwrap();
    assert!(report.contains("\"rounds\": 1"));
    assert!(report.contains("\"master_seed\": 5"));
}

#[test]
fn env_var_overrides_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_config(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_freca"))
        .args(["run", config.to_str().unwrap(), "--out", "ignored"])
        .current_dir(dir.path())
        .env("FRECA_OUT_DIR", dir.path().join("from-env"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("from-env").join("report.json").exists());
    assert!(!dir.path().join("ignored").exists());
}

#[test]
fn report_subcommand_recreates_chart() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_config(dir.path());
    assert!(
        freca(&["run", config.to_str().unwrap(), "--out", "o"], dir.path())
            .status
            .success()
    );
    std::fs::remove_file(dir.path().join("o").join("chart.svg")).unwrap();
    let out = freca(&["report", "o"], dir.path());
    assert!(out.status.success());
    assert!(dir.path().join("o").join("chart.svg").exists());
}

#[test]
fn validate_prints_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_config(dir.path());
    let out = freca(&["validate", config.to_str().unwrap()], dir.path());
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("config ok"));
    assert!(stdout.contains("case = \"case3\""));
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "case = \"case1\"\nlerning_rate = 0.1\n").unwrap();
    let out = freca(&["run", bad.to_str().unwrap(), "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("lerning_rate"), "{stderr}");

    let missing = dir.path().join("missing.toml");
    let out = freca(&["validate", missing.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    // Valid config whose data pool is too small to partition.
    let config = dir.path().join("starved.toml");
    std::fs::write(
        &config,
        "case = \"case3\"\n\n[data]\nsource = \"synthetic\"\nnum_classes = 10\ninput_dim = 16\ncluster_spread = 0.3\nsamples = 100\n\n[partition]\nscheme = \"iid\"\nclients = 8\nsamples_per_client = 40\n",
    )
    .unwrap();
    let out = freca(&["run", config.to_str().unwrap(), "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    // `report` on a directory with no report.json is a runtime error too.
    let out = freca(&["report", "nowhere"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}
