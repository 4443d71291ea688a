//! End-to-end checks of the `hypercert` binary: exit codes, stderr prefixes,
//! and the smoke paths each subcommand promises.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_hypercert")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(dir)
        .output()
        .expect("failed to launch hypercert")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn gen_tiny(dir: &Path) {
    let out = run_in(
        dir,
        &[
            "gen-data", "--model", "er", "--n", "15", "--p", "0.3", "--m-cap", "4", "--r-cap",
            "6", "--pool", "10", "--classes", "2", "--d", "5", "--seed", "11", "--out",
            "data.jsonl",
        ],
    );
    assert!(out.status.success(), "gen-data failed: {}", stderr_of(&out));
    assert!(dir.join("data.jsonl").exists());
    assert!(dir.join("data.jsonl.manifest.json").exists());
}

fn train_tiny(dir: &Path, arch: &str, out_weights: &str) {
    let out = run_in(
        dir,
        &[
            "train", "--arch", arch, "--dataset", "data.jsonl", "--l", "2", "--epochs", "1",
            "--hidden", "6", "--batch", "4", "--seed", "11", "--out-weights", out_weights,
        ],
    );
    assert!(out.status.success(), "train failed: {}", stderr_of(&out));
}

#[test]
fn no_arguments_is_a_usage_error() {
    let out = Command::new(bin()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_of(&out);
    assert!(err.starts_with("USAGE:"), "stderr: {err}");
    assert!(err.contains("Usage") || err.contains("subcommand"), "stderr: {err}");
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = Command::new(bin()).arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).starts_with("USAGE:"));
}

#[test]
fn help_exits_zero() {
    let out = Command::new(bin()).arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout_of(&out).contains("gen-data"));
}

#[test]
fn bad_model_name_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "gen-data", "--model", "smallworld", "--n", "10", "--p", "0.3", "--m-cap", "3",
            "--r-cap", "5", "--pool", "4", "--classes", "2", "--seed", "1", "--out", "x.jsonl",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).starts_with("USAGE:"));
}

#[test]
fn missing_dataset_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    gen_tiny(dir.path());
    train_tiny(dir.path(), "unigcn", "w.json");
    let out = run_in(
        dir.path(),
        &[
            "certify", "--arch", "unigcn", "--weights", "w.json", "--dataset", "nope.jsonl",
            "--out", "cert.json",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).starts_with("DATA:"));
}

#[test]
fn arch_mismatch_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    gen_tiny(dir.path());
    train_tiny(dir.path(), "unigcn", "w.json");
    let out = run_in(
        dir.path(),
        &[
            "certify", "--arch", "hgnn", "--weights", "w.json", "--dataset", "data.jsonl",
            "--out", "cert.json",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_of(&out);
    assert!(err.starts_with("USAGE:"), "stderr: {err}");
}

#[test]
fn certify_on_barely_trained_weights_writes_a_parsable_certificate() {
    let dir = tempfile::tempdir().unwrap();
    gen_tiny(dir.path());
    train_tiny(dir.path(), "unigcn", "w.json");
    let out = run_in(
        dir.path(),
        &[
            "certify", "--arch", "unigcn", "--weights", "w.json", "--dataset", "data.jsonl",
            "--out", "cert.json",
        ],
    );
    assert!(out.status.success(), "certify failed: {}", stderr_of(&out));
    let text = std::fs::read_to_string(dir.path().join("cert.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(v["total_bound"].as_f64().unwrap().is_finite() || v["total_bound"].is_string());
    assert_eq!(v["provenance"]["mode"], "appendix");
}

#[test]
fn perturb_verify_reports_full_satisfaction() {
    let dir = tempfile::tempdir().unwrap();
    gen_tiny(dir.path());
    train_tiny(dir.path(), "unigcn", "w.json");
    let out = run_in(
        dir.path(),
        &[
            "perturb-verify", "--arch", "unigcn", "--weights", "w.json", "--dataset",
            "data.jsonl", "--trials", "10", "--rho", "0.5", "--seed", "3", "--out",
            "perturb.csv",
        ],
    );
    assert!(out.status.success(), "perturb-verify failed: {}", stderr_of(&out));
    assert!(stdout_of(&out).contains("satisfaction rate 1.0000"));
    assert!(dir.path().join("perturb.csv").exists());
}

#[test]
fn correlate_and_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    gen_tiny(dir.path());
    // five copies of the dataset give the report a series long enough to smooth
    let mut datasets = Vec::new();
    for i in 0..5 {
        let name = format!("copy{i}.jsonl");
        std::fs::copy(dir.path().join("data.jsonl"), dir.path().join(&name)).unwrap();
        std::fs::copy(
            dir.path().join("data.jsonl.manifest.json"),
            dir.path().join(format!("{name}.manifest.json")),
        )
        .unwrap();
        datasets.push(name);
    }
    let config = serde_json::json!({
        "datasets": datasets,
        "architectures": ["unigcn"],
        "l_values": [2],
        "train": {"epochs": 1, "hidden": 6, "batch": 4},
        "loss_mode": "average",
        "bound_mode": "appendix",
        "weights_mode": "trained",
        "out_dir": "study",
        "seed": 11,
        "delta": 0.1
    });
    std::fs::write(dir.path().join("study.json"), config.to_string()).unwrap();
    let out = run_in(dir.path(), &["correlate", "--study-config", "study.json"]);
    assert!(out.status.success(), "correlate failed: {}", stderr_of(&out));
    let study_csv = dir.path().join("study").join("study.csv");
    assert!(study_csv.exists());
    let out = run_in(
        dir.path(),
        &[
            "report", "--study-csv", "study/study.csv", "--smooth-window", "5",
            "--smooth-order", "2", "--out", "report.csv",
        ],
    );
    assert!(out.status.success(), "report failed: {}", stderr_of(&out));
    let report = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(report.starts_with("dataset,arch,l,empirical,empirical_smooth"));
    assert_eq!(report.lines().count(), 6); // header + 5 rows
}

#[test]
fn gen_data_is_idempotent_per_seed() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    gen_tiny(dir_a.path());
    gen_tiny(dir_b.path());
    let a = std::fs::read(dir_a.path().join("data.jsonl")).unwrap();
    let b = std::fs::read(dir_b.path().join("data.jsonl")).unwrap();
    assert_eq!(a, b);
}
