//! Exit-code and artifact contract of the `qmeter` binary.

use std::path::Path;
use std::process::Command;

fn qmeter() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qmeter"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn malformed_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "{ not json");
    let out = qmeter().arg("run").arg("--config").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(!out.stderr.is_empty());
}

#[test]
fn missing_config_file_exits_two() {
    let out = qmeter()
        .arg("run")
        .arg("--config")
        .arg("/nonexistent/qmeter.json")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_field_is_named_in_the_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(
        dir.path(),
        r#"{"scenario": "kernel-audit", "seed": 1, "dt": -0.5,
            "kernel": {"type": "gaussian", "s_q": 0.1}}"#,
    );
    let out = qmeter().arg("run").arg("--config").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("dt"), "error does not name the field: {err}");
}

#[test]
fn quantum_limit_run_exits_zero_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(
        dir.path(),
        r#"{
            "scenario": "quantum-limit",
            "seed": 9,
            "model": {"type": "damped_oscillator", "mass": 1.0, "omega0": 1.0, "gamma": 0.1},
            "omega_grid": {"start": 0.2, "stop": 2.0, "count": 181}
        }"#,
    );
    let out_dir = dir.path().join("out");
    let out = qmeter()
        .arg("run")
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(&out_dir)
        .arg("--format")
        .arg("json")
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    let report: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(report["scenario"], "quantum-limit");
    assert_eq!(report["pass"], true);
    assert!(report["wall_time_s"].as_f64().unwrap() > 0.0);
    // console output carries timing, the disk artifact must not
    let disk: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap())
            .unwrap();
    assert!(disk.get("wall_time_s").is_none());
    assert_eq!(disk["pass"], true);
    let csv = std::fs::read_to_string(out_dir.join("quantum_limit.csv")).unwrap();
    let header = csv.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(
        header,
        "omega,total,intrinsic,imprecision,backaction,cross,added,bound,margin"
    );
}

#[test]
fn text_report_lists_every_check() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(
        dir.path(),
        r#"{
            "scenario": "kernel-audit",
            "seed": 4,
            "dt": 0.01,
            "kernel": {"type": "gaussian", "s_q": 0.02, "s_qf": 0.1}
        }"#,
    );
    let out_dir = dir.path().join("out");
    let out = qmeter()
        .arg("run")
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("overall: pass"), "{stdout}");
    assert!(stdout.contains("uncertainty_product_margin"), "{stdout}");
    assert!(stdout.contains("grid_vs_analytic_s_f"), "{stdout}");
}

#[test]
fn truncation_overflow_exits_one() {
    // a near-projective kernel on a small basis overflows the guard
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(
        dir.path(),
        r#"{
            "scenario": "sme",
            "seed": 2,
            "dt": 0.05,
            "duration": 1.0,
            "n_traj": 4,
            "fock_dim": 12,
            "model": {"type": "oscillator", "mass": 1.0, "omega0": 1.0},
            "kernel": {"type": "gaussian", "s_q": 0.0005}
        }"#,
    );
    let out = qmeter()
        .arg("run")
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(1),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn unknown_scenario_field_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(
        dir.path(),
        r#"{"scenario": "sequence", "seed": 1, "dtt": 0.1}"#,
    );
    let out = qmeter().arg("run").arg("--config").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("dtt"), "unknown field not named: {err}");
}
