use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use darc_cli::RunManifest;

fn darc_lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_darc-lab")).args(args).output().expect("binary runs")
}

fn run_dir(out: &Output) -> PathBuf {
    PathBuf::from(String::from_utf8(out.stdout.clone()).unwrap().trim().lines().last().unwrap())
}

fn csv_digests(dir: &Path) -> Vec<(String, String)> {
    RunManifest::read(dir)
        .unwrap()
        .outputs
        .into_iter()
        .filter(|o| o.path.ends_with(".csv"))
        .map(|o| (o.path, o.sha256))
        .collect()
}

#[test]
fn rerun_is_digest_identical_in_a_fresh_directory() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().to_str().unwrap();
    let a = darc_lab(&["train-solver", "--out", out, "--seed", "3"]);
    let b = darc_lab(&["train-solver", "--out", out, "--seed", "3"]);
    assert!(a.status.success() && b.status.success());
    let (da, db) = (run_dir(&a), run_dir(&b));
    assert_ne!(da, db);
    assert!(da.file_name().unwrap().to_str().unwrap().contains("-seed3-train-solver"));
    let digests = csv_digests(&da);
    assert!(digests.iter().any(|(p, _)| p == "training_curve.csv"));
    assert_eq!(digests, csv_digests(&db));
}

#[test]
fn manifest_config_reproduces_the_run() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("runs");
    let out = out.to_str().unwrap();
    let first = darc_lab(&["coupled-sim", "--out", out, "--set", "coupled_sim.iterations=7", "--set", "coupled_sim.eta=0.3"]);
    assert!(first.status.success());
    let dir = run_dir(&first);
    let manifest = RunManifest::read(&dir).unwrap();
    assert_eq!(manifest.config.coupled_sim.iterations, 7);
    assert_eq!(manifest.overrides.len(), 2);
    assert!(manifest.overrides.iter().all(|p| p.source == "flag"));

    let cfg_path = root.path().join("replay.toml");
    std::fs::write(&cfg_path, manifest.config.to_toml()).unwrap();
    let replay = darc_lab(&["coupled-sim", "--out", out, "--config", cfg_path.to_str().unwrap()]);
    assert!(replay.status.success());
    assert_eq!(csv_digests(&dir), csv_digests(&run_dir(&replay)));
}

#[test]
fn invalid_config_exits_with_a_json_error() {
    let root = tempfile::tempdir().unwrap();
    let out = darc_lab(&["train-solver", "--out", root.path().to_str().unwrap(), "--set", "model.gamma=1.5"]);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["status"], "error");
    assert!(err["message"].as_str().unwrap().contains("model.gamma"), "{err}");
    assert_eq!(std::fs::read_dir(root.path()).unwrap().count(), 0);
}

#[test]
fn theorem_hypotheses_are_rejected_before_running() {
    let root = tempfile::tempdir().unwrap();
    let out = darc_lab(&["theorem-check", "--out", root.path().to_str().unwrap(), "--set", "theorem.delta=2.0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_field_is_rejected() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("bad.toml");
    std::fs::write(&cfg, "[model]\nnum_opts = 4\n").unwrap();
    let out = darc_lab(&["grad-check", "--out", root.path().to_str().unwrap(), "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gen_corpus_then_stats() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().to_str().unwrap();
    let gen = darc_lab(&["gen-corpus", "--out", out, "--size", "200", "--offset-min", "-0.5", "--offset-max", "0.5"]);
    assert!(gen.status.success());
    let corpus = run_dir(&gen).join("corpus.jsonl");
    let stats = darc_lab(&["corpus-stats", corpus.to_str().unwrap(), "--out", out, "--bins", "4"]);
    assert!(stats.status.success(), "{}", String::from_utf8_lossy(&stats.stderr));
    let dir = run_dir(&stats);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("corpus_stats.json")).unwrap()).unwrap();
    assert_eq!(v["count"], 200);
}
