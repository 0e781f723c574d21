//! Binary-level behavior: exit codes, file outputs, and flag handling.

use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "[train]\nepochs = 2\ntrain_samples = 400\ntest_samples = 200\nhidden_width = 16\nbatch_size = 100\n";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pilotnet"))
}

fn run_with_config(args: &[&str], config: &str, out: &Path) -> Output {
    let dir = out.parent().unwrap();
    let config_path = dir.join("run.ini");
    std::fs::write(&config_path, config).unwrap();
    bin()
        .args(args)
        .arg("--config")
        .arg(&config_path)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

#[test]
fn help_and_usage_errors() {
    let help = bin().arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("baseline"));

    let unknown = bin().arg("frobnicate").output().unwrap();
    assert_eq!(unknown.status.code(), Some(2));
}

#[test]
fn missing_config_file_exits_2() {
    let out = bin()
        .args(["baseline", "--config", "/definitely/not/here.ini"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot read"));
}

#[test]
fn malformed_config_reports_the_line_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.ini");
    std::fs::write(&path, "[system]\nusers = frog\n").unwrap();
    let out = bin()
        .args(["train", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn strict_paper_rejects_explicit_budgets() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("conflict.ini");
    std::fs::write(&path, "[system]\nbudget_offsets_db = 3,0,-3\n").unwrap();
    let out = bin()
        .args(["train", "--strict-paper", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn divergent_training_exits_3_with_partial_report() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let config = format!("{TINY}learning_rate = 50\n");
    let out = run_with_config(&["train"], &config, &out_dir);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["diverged"], serde_json::Value::Bool(true));
}

#[test]
fn verify_fault_injection_exits_4() {
    let out = bin().args(["verify", "--inject-fault"]).output().unwrap();
    assert_eq!(out.status.code(), Some(4));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("FAIL pilot_structure"), "{stdout}");
    assert!(stdout.contains("PASS vectorization"), "{stdout}");
}

#[test]
fn baseline_writes_hashed_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = run_with_config(
        &[
            "baseline",
            "--samples",
            "500",
            "--snr-list",
            "5,15",
            "--fair-baseline",
        ],
        TINY,
        &out_dir,
    );
    assert_eq!(out.status.code(), Some(0));

    let csv = std::fs::read_to_string(out_dir.join("baseline.csv")).unwrap();
    let mut lines = csv.lines();
    let hash_line = lines.next().unwrap();
    assert!(hash_line.starts_with("# config "));
    assert_eq!(hash_line.len(), "# config ".len() + 64);
    assert_eq!(
        lines.next().unwrap(),
        "snr_db,mse_closed_form,mse_monte_carlo,normalized,samples"
    );
    assert_eq!(lines.count(), 2);

    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "baseline");
    assert_eq!(manifest["outputs"][0], "baseline.csv");
    assert_eq!(
        manifest["config_sha256"].as_str().unwrap(),
        &hash_line["# config ".len()..]
    );
}

#[test]
fn sweep_writes_one_row_per_operating_point() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = run_with_config(&["sweep", "--snr-list", "5,25"], TINY, &out_dir);
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.lines().nth(1).unwrap().starts_with("snr_db,"));
}

#[test]
fn trained_checkpoint_loads_back_into_a_model() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = run_with_config(&["train", "--seed", "9"], TINY, &out_dir);
    assert_eq!(out.status.code(), Some(0));

    let checkpoint = pilotnet::checkpoint::load(&out_dir.join("model.ckpt")).unwrap();
    assert_eq!(checkpoint.seed, 9);
    let model = checkpoint.into_model().unwrap();
    assert_eq!(model.pilots().len(), 3);
    for pilot in model.pilots() {
        assert!(pilot.is_feasible());
    }
}

#[test]
fn seed_flag_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(
        run_with_config(&["train", "--seed", "1"], TINY, &a)
            .status
            .code(),
        Some(0)
    );
    assert_eq!(
        run_with_config(&["train", "--seed", "2"], TINY, &b)
            .status
            .code(),
        Some(0)
    );
    let x = std::fs::read(a.join("curves.csv")).unwrap();
    let y = std::fs::read(b.join("curves.csv")).unwrap();
    assert_ne!(x, y);
}
