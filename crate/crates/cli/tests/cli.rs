use std::path::Path;
use std::process::{Command, Output};

use bindelta::models::{initialize, load_bundle};
use bindelta_cli::ExperimentConfig;

fn bindelta(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bindelta"));
    cmd.args(args).env_remove(bindelta_cli::OUT_ENV);
    if let Some(root) = env_out {
        cmd.env(bindelta_cli::OUT_ENV, root);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn small_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const SMALL: &str = r#"{
    "variant": "M_G+",
    "K": 4,
    "epochs": 2,
    "data": {"source": "synthetic", "n_samples": 300, "feature_dim": 12,
             "noise_std": 0.01, "symmetry_order": 1,
             "distribution": {"kind": "uniform"}, "seed": 3}
}"#;

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(code(&bindelta(&["train", "--bogus"], None)), 1);
    assert_eq!(code(&bindelta(&["frobnicate"], None)), 1);
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), r#"{"variant": "M_G", "epoch": 3}"#);
    let o = bindelta(&["train", "--config", &cfg], None);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("epoch"));
}

#[test]
fn bad_variant_and_empty_sweep_are_usage_errors() {
    assert_eq!(code(&bindelta(&["train", "--variant", "M_X"], None)), 1);
    assert_eq!(code(&bindelta(&["ablate", "--sweep", "K="], None)), 1);
}

#[test]
fn missing_csv_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(
        dir.path(),
        r#"{"variant": "C", "K": 4, "data": {"source": "csv", "path": "/nonexistent/x.csv"}}"#,
    );
    let out = dir.path().join("run");
    let o = bindelta(&["train", "--config", &cfg, "--out", out.to_str().unwrap()], None);
    assert_eq!(code(&o), 2);
}

#[test]
fn train_writes_manifest_history_and_bundle_under_the_env_root() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), SMALL);
    let root = dir.path().join("runs");
    let o = bindelta(&["train", "--config", &cfg, "--seed", "5"], Some(&root));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let run = root.join("train-M_G+-seed5");
    for f in ["manifest.json", "report.json", "report.csv", "cat_0/history.csv", "cat_0/bundle/manifest.json"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["seed"], 5);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    let history = std::fs::read_to_string(run.join("cat_0/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);

    let e = bindelta(&["eval", "--bundle", run.to_str().unwrap()], None);
    assert_eq!(code(&e), 0, "{}", String::from_utf8_lossy(&e.stderr));
    let report = std::fs::read_to_string(run.join("report.csv")).unwrap();
    assert_eq!(String::from_utf8_lossy(&e.stdout), report);
}

#[test]
fn zero_epochs_saves_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = small_config(dir.path(), SMALL);
    let out = dir.path().join("run");
    let o = bindelta(
        &["train", "--config", &cfg_path, "--epochs", "0", "--out", out.to_str().unwrap()],
        None,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (saved, _) = load_bundle(&out.join("cat_0/bundle")).unwrap();

    let cfg = ExperimentConfig::load(Path::new(&cfg_path)).unwrap();
    let ds = cfg.load_dataset().unwrap();
    let (tr, _) = bindelta::data::split(&ds, cfg.val_fraction, cfg.seed).unwrap();
    let expected = initialize(&cfg.model_variant().unwrap(), &tr, &cfg.train_config(cfg.seed)).unwrap();
    assert_eq!(saved, expected);
}

#[test]
fn discretize_reports_one_floor_per_k() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), SMALL);
    let out = dir.path().join("disc");
    let o = bindelta(
        &["discretize", "--config", &cfg, "--K", "1,4,16", "--out", out.to_str().unwrap()],
        None,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let floors: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(out.join("floor.json")).unwrap()).unwrap();
    let medians: Vec<f64> = floors.iter().map(|f| f["median_deg"].as_f64().unwrap()).collect();
    assert_eq!(medians.len(), 3);
    assert!(medians[0] > medians[1] && medians[1] > medians[2], "{medians:?}");
    assert!(out.join("dictionaries/cat_0_K16.json").exists());
}

#[test]
fn ablate_writes_a_two_row_table_per_setting() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), SMALL);
    let out = dir.path().join("abl");
    let o = bindelta(
        &[
            "ablate", "--config", &cfg, "--sweep", "alpha=0.1,10", "--trials", "2", "--epochs", "1",
            "--out", out.to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "setting,metric,0,mean,std");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("alpha=0.1,MedErr,") && lines[4].starts_with("alpha=10,Acc,"));
}

#[test]
fn selftest_passes_and_catches_an_injected_fault() {
    let ok = bindelta(&["selftest", "--gradient-points", "5"], None);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stdout));
    let stdout = String::from_utf8_lossy(&ok.stdout);
    assert!(stdout.lines().filter(|l| l.contains("models.gradients.")).count() == 11);

    let bad = bindelta(&["selftest", "--gradient-points", "1", "--inject-fault", "log-near-pi"], None);
    assert_eq!(code(&bad), 3);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("so3.log_exp_roundtrip_near_pi"));
}
