//! Exit codes and artifacts of the `sonoclass` binary.

use std::path::Path;
use std::process::{Command, Output};

const TINY_CONFIG: &str = r#"{
  "preprocess": {"target_height": 64, "target_width": 64},
  "backbone": {"name": "tiny_test_cnn", "weights_source": "random"},
  "head": {"conv_filters": 16, "dense_units": 8},
  "train": {"epochs": 1, "batch_size": 4}
}"#;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sonoclass"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn empty_dataset_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("empty")).unwrap();
    let o = run(&["analyze", "--data-dir", &s(&dir.path().join("empty")), "--out-dir", &s(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no images found"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    let o = run(&["explain", "--out-dir", &out, "--image", "x.png", "--method", "gradcam"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["evaluate", "--out-dir", &out, "--data-dir", &out, "--checkpoint", &s(&dir.path().join("nope"))]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = run(&["train", "--out-dir", &out, "--backbone", "vit"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("vit"));
}

#[test]
fn config_errors_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"head": {"dropout_rate": 1.5}}"#).unwrap();
    let o = run(&["analyze", "--config", &s(&cfg), "--out-dir", &s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("head.dropout_rate"), "{}", stderr(&o));
}

#[test]
fn malformed_metrics_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("broken.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let o = run(&["compare", "--out-dir", &s(dir.path()), &s(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("broken.json"));
}

#[test]
fn compare_sorts_rows() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    std::fs::write(&a, r#"{"model_name": "A", "accuracy": 0.7, "precision": 0.7, "recall": 0.7}"#).unwrap();
    std::fs::write(&b, r#"{"accuracy": 0.9, "precision": 0.9, "recall": 0.9}"#).unwrap();
    let o = run(&["compare", "--out-dir", &s(dir.path()), &s(&a), &s(&b)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("comparison.csv")).unwrap();
    let names: Vec<_> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap().to_string()).collect();
    assert_eq!(names, ["b", "A"]);
}

#[test]
fn train_then_predict_with_a_corrupt_file() {
    let dir = tempfile::tempdir().unwrap();
    let (data, out) = (dir.path().join("data"), dir.path().join("out"));
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, TINY_CONFIG).unwrap();
    let o = run(&["make-synthetic", "--out-dir", &s(&data), "--n-healthy", "5", "--n-unhealthy", "5", "--size", "32"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = run(&["train", "--config", &s(&cfg), "--data-dir", &s(&data), "--out-dir", &s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(out.join("history.csv")).unwrap().lines().count(), 2);
    assert!(out.join("checkpoint/model.json").is_file());

    std::fs::write(data.join("Healthy/zz_corrupt.png"), b"not an image").unwrap();
    let o = run(&["predict", "--config", &s(&cfg), "--data-dir", &s(&data), "--out-dir", &s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let preds = std::fs::read_to_string(out.join("predictions.csv")).unwrap();
    assert_eq!(preds.lines().next(), Some("path,probability,predicted_label"));
    assert_eq!(preds.lines().count(), 11);
    let errors = std::fs::read_to_string(out.join("predictions.errors.csv")).unwrap();
    assert!(errors.contains("zz_corrupt.png"));

    let o = run(&["benchmark", "--config", &s(&cfg), "--data-dir", &s(&data), "--out-dir", &s(&out), "--sample-size", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let timing: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("timing.json")).unwrap()).unwrap();
    assert!(timing["inference_seconds_per_image"].as_f64().unwrap() > 0.0);
}
