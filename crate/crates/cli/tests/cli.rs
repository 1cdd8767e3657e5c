//! End-to-end tests of the nilgeo binary: exit codes, JSON report shape,
//! and seed reproducibility.

use serde_json::Value;
use std::process::{Command, Output};

fn nilgeo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nilgeo"))
        .args(args)
        .env("NILGEO_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn validate_algebra_bundled() {
    for name in [
        "heisenberg",
        "heisenberg_riemannian",
        "hxr_riemannian",
        "free23",
        "engel_riemannian",
    ] {
        let out = nilgeo(&["validate-algebra", name]);
        let j = stdout_json(&out);
        assert_eq!(j["valid"], Value::Bool(true), "{name}");
        assert!(j["algebra_hash"].as_str().unwrap().len() == 16);
    }
}

#[test]
fn validate_algebra_rejects_garbage() {
    let out = nilgeo(&["validate-algebra", "no_such_algebra"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn distance_matches_vertical_oracle() {
    // d((0,0,1)) = 2 sqrt(pi) = 3.5449... in the Heisenberg group.
    let out = nilgeo(&[
        "distance",
        "--algebra",
        "heisenberg",
        "--target",
        "0,0,1",
        "--seed",
        "1",
    ]);
    let j = stdout_json(&out);
    let upper = j["estimate"]["upper"].as_f64().unwrap();
    let oracle = 2.0 * std::f64::consts::PI.sqrt();
    assert!(
        (upper - oracle).abs() <= 1e-3,
        "upper {upper} vs {oracle}"
    );
    let lower = j["abelianized_lower"].as_f64().unwrap();
    assert!(lower <= upper + 1e-12);
}

#[test]
fn distance_seed_reproducible() {
    let args = [
        "distance",
        "--algebra",
        "free23",
        "--target",
        "1,2,0.5,0.3,-0.2",
        "--seed",
        "7",
        "--modes",
        "6",
        "--starts",
        "4",
    ];
    let a = stdout_json(&nilgeo(&args));
    let b = stdout_json(&nilgeo(&args));
    assert_eq!(a, b, "same seed must give identical reports");
}

#[test]
fn perturb_reports_certificate() {
    let dir = std::env::temp_dir().join("nilgeo_cli_test_perturb");
    std::fs::create_dir_all(&dir).unwrap();
    let control = dir.join("control.json");
    std::fs::write(
        &control,
        r#"{"fourier": {"1": [[0.0, -0.5], [1.0, 0.0]]}}"#,
    )
    .unwrap();
    let out = nilgeo(&[
        "perturb",
        "--algebra",
        "heisenberg",
        "--control",
        control.to_str().unwrap(),
        "--zeta",
        "0.3",
    ]);
    let j = stdout_json(&out);
    assert_eq!(j["endpoint_ok"], Value::Bool(true));
    assert_eq!(j["orthogonality_ok"], Value::Bool(true));
    assert_eq!(j["energy_ok"], Value::Bool(true));
    let cert = &j["certificate"];
    assert!(cert["energy"].as_f64().unwrap() <= cert["energy_bound"].as_f64().unwrap());
}

#[test]
fn experiment_gap_scan_runs_and_writes_csv() {
    let dir = std::env::temp_dir().join("nilgeo_cli_test_gap");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"scales": [2.0, 4.0, 6.0], "random_per_scale": 0, "mismatch": 1.0}"#,
    )
    .unwrap();
    let csv = dir.join("rows.csv");
    let out_path = dir.join("report.json");
    let out = nilgeo(&[
        "experiment",
        "gap_scan",
        "--algebra",
        "heisenberg_riemannian",
        "--config",
        cfg.to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
        "--seed",
        "3",
        "--modes",
        "8",
        "--starts",
        "6",
    ]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let j: Value =
        serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(j["summary"]["pass"], Value::Bool(true));
    assert!(!j["rows"].as_array().unwrap().is_empty());
    let csv_text = std::fs::read_to_string(&csv).unwrap();
    assert!(csv_text.lines().count() >= 2, "csv has header and rows");
}

#[test]
fn experiment_unknown_name_exits_one() {
    let out = nilgeo(&["experiment", "no_such", "--algebra", "heisenberg"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("unknown experiment"), "stderr: {err}");
}

#[test]
fn infeasible_target_exits_two() {
    // The Engel group is step 3; its asymptotic cone solver cannot reach a
    // far-out vertical point with a starved budget.
    let out = nilgeo(&[
        "distance",
        "--algebra",
        "engel_riemannian",
        "--asymptotic",
        "--target",
        "0,0,0,50",
        "--modes",
        "2",
        "--starts",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
