use std::path::Path;
use std::process::{Command, Output};

use oneshot_pde::experiment::{Backend, ExperimentConfig};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oneshot-pde")).args(args).output().expect("binary runs")
}

fn error_kind(out: &Output) -> String {
    let v: serde_json::Value = serde_json::from_slice(&out.stderr).expect("stderr is one JSON object");
    v["error"].as_str().unwrap().to_string()
}

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let mut c = ExperimentConfig::preset("poisson").unwrap();
    c.dense = 201;
    c.resolutions = vec![21];
    c.test.sigmas = vec![0.05];
    c.test.count = 2;
    c.operators.truncate(1);
    c.operators[0].width = 8;
    c.operators[0].backends = vec![Backend::Fpi, Backend::Cloinn];
    c.loinn.iterations = Some(100);
    c.budget_scale = 0.002;
    c.out = dir.join("run");
    let path = dir.join("tiny.json");
    std::fs::write(&path, c.to_json()).unwrap();
    path
}

#[test]
fn unknown_preset_is_a_config_error() {
    let out = run(&["reproduce", "heat"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_kind(&out), "config");
}

#[test]
fn step_commands_need_a_config() {
    let out = run(&["gen-data"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_kind(&out), "config");
}

#[test]
fn evaluate_before_training_reports_io() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = run(&["evaluate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_kind(&out), "io");
}

#[test]
fn pipeline_steps_write_their_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    for step in ["gen-data", "train-local", "evaluate"] {
        let out = run(&[step, "--config", cfg]);
        assert!(out.status.success(), "{step}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let run_dir = dir.path().join("run");
    for file in ["data/n21/u0.csv", "operators/n21_poisson_g1.json", "results/summary.csv", "results/summary.md"] {
        assert!(run_dir.join(file).is_file(), "missing {file}");
    }
    let csv = std::fs::read_to_string(run_dir.join("results/summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "header plus fpi and cloinn rows:\n{csv}");

    let out = run(&["predict", "--config", cfg, "--sigma", "0.05"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let written = String::from_utf8(out.stdout).unwrap();
    assert!(written.lines().count() >= 2);
    assert!(written.lines().all(|p| Path::new(p).is_file()));
}
