use std::path::Path;
use std::process::Command;

use qsaddle::harness::{read_metrics, ExperimentReport, Summary};

fn qsaddle(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_qsaddle"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

const CONFIG: &str = r#"
[run]
rounds = 300
workers = 2
batch = 2

[optimizer]
method = "dqgan"
eta = 0.05

[compressor]
kind = "stochastic_bits"
bits = 4
norm = "max"

[problem]
kind = "quadratic"
dim_theta = 2
dim_phi = 3
matrix = "random"
sigma = 0.3
"#;

#[test]
fn run_writes_reproducible_outputs() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
    for out in ["a", "b"] {
        let status = qsaddle(&["run", "--config", "run.toml", "--seed", "5", "--out", out], dir.path());
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    }
    let a = std::fs::read(dir.path().join("a/metrics.csv")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b/metrics.csv")).unwrap());

    let report: ExperimentReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a/summary.json")).unwrap()).unwrap();
    assert_eq!(report.config.run.seed, 5);
    assert_eq!(Summary::from_records(&read_metrics(a.as_slice()).unwrap()), report.summary);
    assert_eq!(report.summary.total_bits_up, 300 * 2 * 4 * 5);
    assert!(report.bounds.error_feedback_bound.is_some());

    let other = qsaddle(&["run", "--config", "run.toml", "--seed", "6", "--out", "c"], dir.path());
    assert!(other.status.success());
    assert_ne!(a, std::fs::read(dir.path().join("c/metrics.csv")).unwrap());
}

#[test]
fn divergence_and_errors_have_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let diverged = qsaddle(
        &[
            "run",
            "--override", "problem.kind=dirac",
            "--override", "optimizer.method=gd",
            "--override", "optimizer.eta=0.5",
            "--override", "run.rounds=1000",
        ],
        dir.path(),
    );
    assert_eq!(diverged.status.code(), Some(2));
    let records = read_metrics(std::fs::File::open(dir.path().join("out/metrics.csv")).unwrap()).unwrap();
    // ‖w_t‖² = 2·1.25^t first exceeds 10¹² at t = 121.
    assert_eq!(records.len(), 121);

    let bad = qsaddle(&["run", "--override", "optimizer.eta=-1"], dir.path());
    assert_eq!(bad.status.code(), Some(1));
    let missing = qsaddle(&["run", "--config", "nope.toml"], dir.path());
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn bounds_certify_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), CONFIG).unwrap();

    let bounds = qsaddle(&["bounds", "--config", "run.toml"], dir.path());
    assert!(bounds.status.success());
    let value: serde_json::Value = serde_json::from_slice(&bounds.stdout).unwrap();
    // d = 5 < 4·7², so δ = 1 − 5/196.
    assert!((value["delta"].as_f64().unwrap() - (1.0 - 5.0 / 196.0)).abs() < 1e-15);

    let certify = qsaddle(&["certify", "--config", "run.toml", "--samples", "500"], dir.path());
    assert!(certify.status.success());
    let value: serde_json::Value = serde_json::from_slice(&certify.stdout).unwrap();
    let empirical = value["empirical_delta"].as_f64().unwrap();
    assert!((1.0 - 5.0 / 196.0..=1.0).contains(&empirical));

    let sweep = qsaddle(
        &["sweep", "--config", "run.toml", "--workers", "1,3", "--replicates", "2", "--override", "run.rounds=50"],
        dir.path(),
    );
    assert!(sweep.status.success(), "{}", String::from_utf8_lossy(&sweep.stderr));
    let table = std::fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(dir.path().join("out/workers_3/seed_1/metrics.csv").exists());
}
