use std::process::Command;

use fracvolterra::cli::{parse_config, run_experiment};

const FBM: &str = "experiment = fbm_validate
seed = 12
[fbm]
hurst = 0.75
[params]
alpha = 0.3
[grid]
steps = 64
[run]
paths = 10000
workers = 4
";

#[test]
fn fbm_validate_within_four_standard_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = parse_config(FBM).unwrap();
    cfg.output = Some(dir.path().to_path_buf());
    let manifest = run_experiment(&cfg).unwrap();
    assert!(manifest.complete);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["passed"], true, "{summary}");
    assert!(summary["max_abs_error"].as_f64().unwrap() <= summary["tolerance"].as_f64().unwrap());
    let csv = std::fs::read_to_string(dir.path().join("paths.csv")).unwrap();
    assert_eq!(csv.lines().count(), 10_001);
}

#[test]
fn binary_run_and_validate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    std::fs::write(&cfg, FBM.replace("paths = 10000", "paths = 20")).unwrap();
    let out = dir.path().join("out");
    let bin = env!("CARGO_BIN_EXE_fracvolterra");

    let status = Command::new(bin)
        .args(["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--workers", "2", "--seed", "5"])
        .status()
        .unwrap();
    assert!(status.success());
    for name in ["paths.csv", "metrics_long.csv", "covariance.csv", "summary.json", "manifest.json"] {
        assert!(out.join(name).exists(), "{name}");
    }

    let validated = Command::new(bin).args(["validate", cfg.to_str().unwrap()]).output().unwrap();
    assert!(validated.status.success());
    assert!(String::from_utf8_lossy(&validated.stdout).contains("hash "));

    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, FBM.replace("alpha = 0.3", "alpha = 0.2").replace("seed = 12\n", "")).unwrap();
    let rejected = Command::new(bin).args(["validate", bad.to_str().unwrap()]).output().unwrap();
    assert_eq!(rejected.status.code(), Some(2));
    let err = String::from_utf8_lossy(&rejected.stderr);
    assert!(err.contains("α must exceed 1−H=0.25") && err.contains("seed"), "{err}");
}
