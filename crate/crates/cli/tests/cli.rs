use std::path::Path;
use std::process::{Command, Output};

use cablegraph_cli::config::{apply_assignment, parse_assignment};
use cablegraph_cli::{Checkpoint, RunConfig};
use cablegraph_core::gnn::{Model, ModelConfig};
use cablegraph_core::graphgen::GraphConfig;
use proptest::prelude::*;
use serde_json::{json, Value};

fn cablegraph(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cablegraph"))
        .current_dir(dir)
        .env_remove("CABLEGRAPH_CONFIG")
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn error_of(out: &Output) -> Value {
    assert_eq!(out.status.code(), Some(1), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().rev().find(|l| l.starts_with('{')).expect("json error line");
    serde_json::from_str::<Value>(line).unwrap()["error"].clone()
}

fn tiny_config(dir: &Path) -> String {
    let cfg = json!({
        "seed": 1,
        "data": {"grid": [{"friction_mu": 0.5, "ground_stiffness": 1e4}],
                 "trajectories_per_dataset": 2, "test_per_dataset": 1, "duration": 0.8},
        "model": {"latent_width": 8, "hidden_width": 8, "message_passes": 1},
        "train": {"epochs": 1},
        "eval": {"n_sh": 1, "t_sh": 20},
        "paths": {"data_dir": dir.join("data"), "checkpoint_dir": dir.join("ckpt"), "report_dir": dir.join("reports")}
    });
    let path = dir.join("config.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    path.display().to_string()
}

#[test]
fn missing_checkpoint_is_a_json_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    assert!(cablegraph(dir.path(), &["--config", &cfg, "gen-data"]).status.success());
    let out = cablegraph(dir.path(), &["--config", &cfg, "eval", "--checkpoint", "nope.ckpt"]);
    let err = error_of(&out);
    assert_eq!(err["kind"], "missing");
    assert!(err["message"].as_str().unwrap().contains("nope.ckpt"));
}

#[test]
fn train_without_data_names_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let err = error_of(&cablegraph(dir.path(), &["--config", &cfg, "train"]));
    assert_eq!(err["kind"], "missing");
    assert!(err["message"].as_str().unwrap().contains("manifest"));
}

#[test]
fn unknown_override_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = error_of(&cablegraph(dir.path(), &["--set", "train.epochz=3", "gen-data"]));
    assert_eq!(err["kind"], "config");
    assert!(err["message"].as_str().unwrap().contains("train.epochz"));
}

#[test]
fn invalid_value_is_rejected_before_work() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let err = error_of(&cablegraph(dir.path(), &["--config", &cfg, "--set", "model.latent_width=0", "gen-data"]));
    assert_eq!(err["kind"], "core");
    assert!(!dir.path().join("data").exists());
}

#[test]
fn corrupt_checkpoint_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, b"CGCKPT\0\0garbage").unwrap();
    let err = error_of(&cablegraph(dir.path(), &["inspect", bad.to_str().unwrap()]));
    assert_eq!(err["kind"], "checkpoint");
}

#[test]
fn usage_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = cablegraph(dir.path(), &["eval"]);
    assert!(!out.status.success());
    let out = cablegraph(dir.path(), &["eval", "--oracle", "--checkpoint", "x"]);
    assert!(!out.status.success());
}

#[test]
fn generate_train_inspect_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = cablegraph(dir.path(), &["--config", &cfg, "gen-data"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("data/manifest.json").exists());
    assert!(dir.path().join("data/dataset_0/traj_000.json").exists());
    assert!(dir.path().join("reports/gen-data.config.json").exists());

    let out = cablegraph(dir.path(), &["--config", &cfg, "train"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = dir.path().join("ckpt/model.ckpt");
    let loaded = Checkpoint::load(&ckpt).unwrap();
    assert_eq!(loaded.epochs_completed(), 1);
    assert!(dir.path().join("reports/train_loss.csv").exists());

    let out = cablegraph(dir.path(), &["--config", &cfg, "train", "--resume", ckpt.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(Checkpoint::load(&ckpt).unwrap().epochs_completed(), 2);

    let out = cablegraph(dir.path(), &["inspect", ckpt.to_str().unwrap()]);
    assert!(out.status.success());
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(summary.to_string().contains("latent_width"));

    let out = cablegraph(dir.path(), &["--config", &cfg, "eval", "--oracle"]);
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("reports/eval_metrics.csv")).unwrap();
    assert!(csv.lines().count() >= 2);
}

#[test]
fn checkpoint_bytes_round_trip() {
    let config = ModelConfig {
        latent_width: 8,
        hidden_width: 8,
        message_passes: 1,
        ..ModelConfig::default()
    };
    let model = Model::new(config, GraphConfig::default(), 4).unwrap();
    let ckpt = Checkpoint::new(model, Default::default(), None);
    let bytes = ckpt.to_bytes().unwrap();
    let back = Checkpoint::from_bytes(&bytes, Path::new("m")).unwrap();
    assert_eq!(back, ckpt);
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3], Path::new("m")).is_err());
    assert!(Checkpoint::from_bytes(b"not a checkpoint", Path::new("m")).is_err());
}

#[test]
fn seed_flag_overrides_file_and_propagates() {
    let cfg = RunConfig::load(None, &["seed=5".into(), "train.epochs=7".into()], Some(9)).unwrap();
    assert_eq!(cfg.seed, 9);
    assert_eq!(cfg.train.seed, 9);
    assert_eq!(cfg.mppi.seed, 9);
    assert_eq!(cfg.train.epochs, 7);
    assert_eq!(cfg.graph.n, cfg.model.n);
}

proptest! {
    #[test]
    fn numeric_assignments_land_where_named(epochs in 1usize..500, lr in 1e-6..1e-1f64, width in 1usize..256) {
        let sets = vec![
            format!("train.epochs={epochs}"),
            format!("train.optimizer.learning_rate={lr:e}"),
            format!("model.latent_width={width}"),
        ];
        let cfg = RunConfig::load(None, &sets, None).unwrap();
        prop_assert_eq!(cfg.train.epochs, epochs);
        prop_assert_eq!(cfg.train.optimizer.learning_rate, lr);
        prop_assert_eq!(cfg.model.latent_width, width);
    }

    #[test]
    fn unknown_keys_never_apply(key in "[a-z]{1,8}") {
        prop_assume!(key != "seed");
        let template = serde_json::to_value(RunConfig::default()).unwrap();
        prop_assume!(template.get(&key).is_none());
        let (path, value) = parse_assignment(&format!("{key}=1")).unwrap();
        let mut doc = json!({});
        prop_assert!(apply_assignment(&mut doc, &template, &path, value).is_err());
        prop_assert_eq!(doc, json!({}));
    }
}
