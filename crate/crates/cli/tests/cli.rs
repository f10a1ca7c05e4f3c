use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn catrelax(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_catrelax")).args(args).output().expect("binary runs")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

fn error_json(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let last = text.lines().last().expect("stderr has an error line");
    serde_json::from_str(last).expect("error line is JSON")
}

fn write_config(dir: &Path, json: &str) -> String {
    let p = dir.join("config.json");
    fs::write(&p, json).unwrap();
    p.display().to_string()
}

const TINY_SBN: &str = r#"{
    "task": "sbn",
    "data": {"type": "fixture"},
    "estimators": ["gs", "st"],
    "learning_rates": [0.01],
    "steps": 20, "batch_size": 10, "eval_every": 10,
    "eval_m": 4, "eval_examples": 6
}"#;

#[test]
fn density_writes_grid_and_means() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"task": "density", "density": {"probs": [0.3, 0.7], "taus": [0.5, 2.0], "resolution": 20, "samples": 1000}}"#,
    );
    let out = dir.path().join("out");
    let o = catrelax(&["density", "--config", &cfg, "--seed", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = stdout_json(&o);
    assert_eq!(summary["status"], "ok");
    assert_eq!(summary["grid_rows"], 19 * 2);
    let csv = fs::read_to_string(out.join("density.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("tau,y1,y2,density"));
    assert_eq!(csv.lines().count(), 19 * 2 + 1);
    assert_eq!(fs::read_to_string(out.join("means.csv")).unwrap().lines().count(), 3);
}

#[test]
fn grad_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = catrelax(&["grad-check", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout_json(&o)["max_relative_error"].as_f64().unwrap() < 1e-5);
    assert!(dir.path().join("gradcheck.json").exists());
}

#[test]
fn train_sbn_is_reproducible_from_config_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY_SBN);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = catrelax(&["train-sbn", "--config", &cfg, "--seed", "7", "--out", out.to_str().unwrap(), "--workers", "2"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let summary = stdout_json(&o);
        assert_eq!(summary["cells"], 2);
        assert_eq!(summary["failed_cells"], 0);
        out
    };
    let (a, b) = (run("a"), run("b"));
    for cell in ["gs_lr1e-2_s0", "st_lr1e-2_s0"] {
        let read = |d: &Path| fs::read_to_string(d.join("cells").join(cell).join("metrics.csv")).unwrap();
        assert_eq!(read(&a), read(&b));
        assert!(read(&a).starts_with("step,split,metric,value\n"));
    }
    assert_eq!(
        fs::read_to_string(a.join("selection.csv")).unwrap(),
        fs::read_to_string(b.join("selection.csv")).unwrap()
    );
    assert!(a.join("config.json").exists());
}

#[test]
fn speed_reports_each_class_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"task": "speed", "data": {"type": "fixture"}, "batch_size": 10,
            "speed": {"classes": [2, 3], "warmup_steps": 1, "min_steps": 2, "min_seconds": 0.0}}"#,
    );
    let out = dir.path().join("out");
    let o = catrelax(&["speed", "--config", &cfg, "--out", out.to_str().unwrap(), "--scale", "0.05"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(out.join("speed.csv")).unwrap().lines().count(), 5);
    assert_eq!(stdout_json(&o)["speedups"].as_array().unwrap().len(), 2);
}

#[test]
fn missing_config_file_is_a_config_error() {
    let o = catrelax(&["train-vae", "--config", "/nonexistent/config.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"], "config");
}

#[test]
fn config_for_another_task_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY_SBN);
    let o = catrelax(&["train-vae", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    let e = error_json(&o);
    assert_eq!(e["error"], "config");
    assert!(e["message"].as_str().unwrap().contains("sbn"));
}

#[test]
fn invalid_scale_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY_SBN);
    let o = catrelax(&["train-sbn", "--config", &cfg, "--scale", "0", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"], "config");
}

#[test]
fn absent_mnist_directory_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"task": "vae", "data": {"type": "mnist", "dir": "/nonexistent/mnist"}, "steps": 1}"#,
    );
    let o = catrelax(&["train-vae", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"], "missing_dataset");
}

#[test]
fn usage_errors_are_json() {
    let o = catrelax(&["train-sbn", "--seed", "not-a-number"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"], "usage");
    let o = catrelax(&["frobnicate"]);
    assert_eq!(error_json(&o)["error"], "usage");
}

#[test]
fn shipped_configs_parse_and_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            catrelax::harness::ExperimentConfig::from_file(&path)
                .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 4);
}
