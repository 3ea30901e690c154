//! End-to-end tests of the `mol` binary: exit codes, determinism, and the
//! schemas of the files each subcommand writes.

use std::path::Path;
use std::process::{Command, Output};

fn mol(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mol"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_success(out: &Output, context: &str) {
    assert!(
        out.status.success(),
        "{context} failed (status {:?}):\n{}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read_json(path: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("read {}: {e}", path.display()));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("parse {}: {e}", path.display()))
}

#[test]
fn usage_errors_exit_with_code_2() {
    let out = mol(&["generate", "--family", "nosuch", "--n-obs", "2", "--n", "64"]);
    assert_eq!(out.status.code(), Some(2), "unknown family should be a usage error");

    let out = mol(&["generate-cloud", "--manifold", "klein-bottle"]);
    assert_eq!(out.status.code(), Some(2), "unknown manifold should be a usage error");

    let out = mol(&["invert", "--forward", "surrogate"]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "surrogate inversion without a checkpoint should be a usage error"
    );

    let out = mol(&["bench", "--sizes", "400,900"]);
    assert_eq!(out.status.code(), Some(2), "bench needs at least 3 sizes");
}

#[test]
fn generate_cloud_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let run = mol(&[
            "generate-cloud",
            "--manifold",
            "torus",
            "--n",
            "80",
            "--seed",
            "5",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_success(&run, "generate-cloud");
    }
    let csv_a = std::fs::read(a.join("cloud.csv")).unwrap();
    let csv_b = std::fs::read(b.join("cloud.csv")).unwrap();
    assert_eq!(csv_a, csv_b, "same seed must give identical clouds");
    assert!(a.join("cloud_manifest.json").exists());
    assert!(a.join("report.json").exists());
}

#[test]
fn generate_train_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = dir.path().join("cloud");
    let run = mol(&[
        "generate-cloud",
        "--manifold",
        "torus",
        "--grid-side",
        "9",
        "--out",
        cloud.to_str().unwrap(),
    ]);
    assert_success(&run, "generate-cloud");

    let dataset = dir.path().join("dataset");
    let run = mol(&[
        "generate",
        "--cloud",
        cloud.to_str().unwrap(),
        "--family",
        "linear",
        "--n-obs",
        "6",
        "--estimator",
        "gmls",
        "--seed",
        "3",
        "--out",
        dataset.to_str().unwrap(),
    ]);
    assert_success(&run, "generate");
    let manifest = read_json(&dataset.join("manifest.json"));
    assert_eq!(manifest["n_samples"], 6);
    assert_eq!(manifest["cloud_size"], 81);

    let model = dir.path().join("model");
    let run = mol(&[
        "train",
        "--mode",
        "deeponet",
        "--dataset",
        dataset.to_str().unwrap(),
        "--epochs",
        "30",
        "--latent-p",
        "8",
        "--out",
        model.to_str().unwrap(),
    ]);
    assert_success(&run, "train");
    assert!(model.join("checkpoint.ckpt").exists());
    let history = std::fs::read_to_string(model.join("history.csv")).unwrap();
    // Header, epoch-0 row, and the closing row at least.
    assert!(history.lines().count() >= 3, "history too short:\n{history}");
    let report = read_json(&model.join("report.json"));
    assert_eq!(report["epochs_run"], 30);
    assert_eq!(report["aborted"], false);

    let eval = dir.path().join("eval.json");
    let run = mol(&[
        "eval",
        "--checkpoint",
        model.join("checkpoint.ckpt").to_str().unwrap(),
        "--dataset",
        dataset.to_str().unwrap(),
        "--out",
        eval.to_str().unwrap(),
    ]);
    assert_success(&run, "eval");
    let report = read_json(&eval);
    let err = report["mean_l2_relative_error"].as_f64().unwrap();
    assert!(err.is_finite() && err >= 0.0, "bad eval error {err}");
}

#[test]
fn generate_same_seed_is_bitwise_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let run = mol(&[
            "generate",
            "--manifold",
            "torus",
            "--n",
            "100",
            "--family",
            "mixed",
            "--n-obs",
            "4",
            "--estimator",
            "dm",
            "--seed",
            "11",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_success(&run, "generate");
    }
    for file in ["kappa_sensors.csv", "solutions.csv", "kappa_cloud.csv"] {
        let fa = std::fs::read(a.join(file)).unwrap();
        let fb = std::fs::read(b.join(file)).unwrap();
        assert_eq!(fa, fb, "{file} differs between identical runs");
    }
}

#[test]
fn invert_local_kernel_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("inv");
    let run = mol(&[
        "invert",
        "--forward",
        "local-kernel",
        "--grid-side",
        "8",
        "--sigma",
        "0.05",
        "--iters",
        "60",
        "--burn-in",
        "20",
        "--seed",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_success(&run, "invert");
    let report = read_json(&out.join("summary.json"));
    let summary = &report["summary"];
    let accept = summary["acceptance_rate"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&accept), "acceptance {accept}");
    assert_eq!(summary["forward_kind"], "local_kernel");
    let kappa_err = summary["kappa_rel_error"].as_f64().unwrap();
    assert!(kappa_err.is_finite() && kappa_err > 0.0);
    for file in ["kappa_mean.csv", "kappa_std.csv", "u_reconstructed.csv"] {
        assert!(out.join(file).exists(), "{file} missing");
    }
    // 64 posterior-mean values plus the header.
    let mean = std::fs::read_to_string(out.join("kappa_mean.csv")).unwrap();
    assert_eq!(mean.lines().count(), 65);
}

#[test]
fn bench_writes_timings_and_slopes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    let run = mol(&[
        "bench",
        "--sizes",
        "64,100,144",
        "--reps",
        "2",
        "--train-quick",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_success(&run, "bench");
    let timings = std::fs::read_to_string(out.join("timings.csv")).unwrap();
    assert!(timings.starts_with("N,method,seconds_per_step"));
    // Header + 3 sizes x 2 methods.
    assert_eq!(timings.lines().count(), 7, "unexpected timings:\n{timings}");
    let report = read_json(&out.join("report.json"));
    assert!(report["local_kernel_slope"].as_f64().unwrap().is_finite());
    assert!(report["surrogate_slope"].as_f64().unwrap().is_finite());
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    std::fs::write(
        &config,
        r#"{"generate-cloud.manifold": "torus", "generate-cloud.n": 70, "generate-cloud.seed": 9}"#,
    )
    .unwrap();
    let a = dir.path().join("a");
    let run = mol(&[
        "--config",
        config.to_str().unwrap(),
        "generate-cloud",
        "--out",
        a.to_str().unwrap(),
    ]);
    assert_success(&run, "generate-cloud with config");
    let report = read_json(&a.join("report.json"));
    assert_eq!(report["n"], 70);

    // A CLI flag beats the config value.
    let b = dir.path().join("b");
    let run = mol(&[
        "--config",
        config.to_str().unwrap(),
        "generate-cloud",
        "--n",
        "50",
        "--out",
        b.to_str().unwrap(),
    ]);
    assert_success(&run, "generate-cloud with override");
    let report = read_json(&b.join("report.json"));
    assert_eq!(report["n"], 50);
}
