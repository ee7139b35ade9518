use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = r#"{
    "env": {"seed_count": 100, "validation_size": 30, "test_size": 120},
    "warmup": {"pool_size": 200},
    "rl": {"updates": 3, "smoothing_window": 2},
    "synthesis": {"size": 50},
    "correlate": {"pool_size": 100, "subset_size": 20, "trials": 10}
}"#;

fn ifsynth(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ifsynth"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("input.json");
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn empty_config_echoes_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "{}");
    let o = ifsynth(dir.path(), &["warmup", "--config", &cfg, "-q"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = json(&dir.path().join("report.json"));
    let default = serde_json::to_value(ifsynth::config::ExperimentConfig::default()).unwrap();
    assert_eq!(report["config"], default);
    assert_eq!(json(&dir.path().join("config.json")), default);
    assert_eq!(report["warmup"]["val_loss_by_epoch"].as_array().unwrap().len(), 4);
}

#[test]
fn invariant_violation_fails_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"grpo": {"clip_eps": 1.5}}"#);
    let o = ifsynth(dir.path(), &["warmup", "--config", &cfg]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("clip_eps out of range"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("error: warmup:"), "{err}");
}

#[test]
fn unknown_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"rl": {"update": 3}}"#);
    let o = ifsynth(dir.path(), &["gen-corpus", "--config", &cfg]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("`update`"), "{}", stderr(&o));
}

#[test]
fn missing_config_file_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = ifsynth(dir.path(), &["gen-corpus", "--config", "/nonexistent/x.json"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("cannot read"), "{}", stderr(&o));
}

#[test]
fn seed_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"seed": 7}"#);
    let seed = |args: &[&str]| {
        let o = ifsynth(dir.path(), args);
        assert!(o.status.success(), "{}", stderr(&o));
        let c = json(&dir.path().join("config.json"));
        assert_eq!(c["seed"], c["env"]["master_seed"]);
        c["seed"].as_u64().unwrap()
    };
    assert_eq!(seed(&["gen-corpus", "-q", "--config", &cfg, "--seed", "9"]), 9);
    assert_eq!(seed(&["gen-corpus", "-q", "--config", &cfg]), 7);
    assert_eq!(seed(&["gen-corpus", "-q"]), 42);
}

#[test]
fn missing_stage_input_is_prefixed() {
    let dir = tempfile::tempdir().unwrap();
    let o = ifsynth(dir.path(), &["train-prompter"]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.starts_with("error: train-prompter:") && err.contains("trajectory.json"), "{err}");
}

#[test]
fn stages_in_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    for verb in ["gen-corpus", "warmup", "score", "train-prompter", "synthesize", "sft", "eval", "correlate"] {
        let o = ifsynth(dir.path(), &[verb, "--config", &cfg, "-q"]);
        assert!(o.status.success(), "{verb}: {}", stderr(&o));
    }
    let d = dir.path();
    let csv = std::fs::read_to_string(d.join("influence.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "candidate_id,raw_score,normalized_score,variant,trajectory_id");
    assert_eq!(lines.count(), 200);

    let stats = std::fs::read_to_string(d.join("stats.csv")).unwrap();
    assert_eq!(stats.lines().count(), 4);
    let rollouts = std::fs::read_to_string(d.join("rollouts.jsonl")).unwrap();
    assert_eq!(rollouts.lines().count(), 3 * 8 * 5);

    for f in ["dataset_pre.jsonl", "dataset_post.jsonl"] {
        assert_eq!(std::fs::read_to_string(d.join(f)).unwrap().lines().count(), 50);
    }
    let eval = json(&d.join("eval.json"));
    let acc = eval["test_accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    let report = json(&d.join("report.json"));
    for section in ["warmup", "rl", "synthesis", "sft", "correlation"] {
        assert!(!report[section].is_null(), "{section} missing");
    }
    assert!(report["correlation"].get("pearson_r").is_some());
    assert_eq!(report["correlation"]["pairs"].as_array().unwrap().len(), 10);
}

#[test]
fn zero_updates_copy_initial_policy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"rl": {"updates": 0}, "warmup": {"pool_size": 100}}"#);
    assert!(ifsynth(dir.path(), &["warmup", "--config", &cfg, "-q"]).status.success());
    let o = ifsynth(dir.path(), &["train-prompter", "--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("no updates requested"), "{}", stderr(&o));
    let policy = json(&dir.path().join("policy.json"));
    let initial = json(&dir.path().join("policy_initial.json"));
    assert_eq!(policy, initial);
}

#[test]
fn report_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let cfg = write_config(d.path(), SMALL);
        let o = ifsynth(d.path(), &["report", "--config", &cfg, "-q"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["config.json", "report.json", "stats.csv", "rollouts.jsonl", "trajectory.json", "dataset_post.jsonl"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
}
