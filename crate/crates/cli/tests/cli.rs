use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn dynacal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dynacal")).args(args).output().expect("spawn dynacal")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Every regular file in `dir` except the manifest, with its bytes.
fn outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file() && p.file_name().unwrap() != "manifest.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn assert_rerun_identical(out: &Path, tmp: &Path, name: &str) {
    let again = tmp.join(format!("{name}_rerun"));
    let o = dynacal(&["rerun", s(&out.join("manifest.json")), "--out", s(&again)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (a, b) = (outputs(out), outputs(&again));
    assert!(!a.is_empty());
    assert_eq!(a.iter().map(|f| &f.0).collect::<Vec<_>>(), b.iter().map(|f| &f.0).collect::<Vec<_>>());
    for (x, y) in a.iter().zip(&b) {
        assert!(x.1 == y.1, "{name}: {} differs on rerun", x.0);
    }
    assert!(again.join("manifest.json").is_file());
}

fn gen_oblique(tmp: &Path, seed: u64, count: usize) -> PathBuf {
    let out = tmp.join(format!("gen_{seed}_{count}"));
    let o = dynacal(&["gen", "oblique", "--seed", &seed.to_string(), "--count", &count.to_string(), "--frames", "40", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

fn train_zero(tmp: &Path, data: &Path) -> PathBuf {
    let out = tmp.join("train");
    let o = dynacal(&["train", "--data", s(data), "--epochs", "0", "--seed", "5", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

#[test]
fn gen_oblique_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let a = gen_oblique(tmp.path(), 7, 1);
    let b = tmp.path().join("again");
    let o = dynacal(&["gen", "oblique", "--seed", "7", "--frames", "40", "--out", s(&b)]);
    assert_eq!(code(&o), 0);
    assert!(a.join("oblique_0007.jsonl").is_file());
    assert!(a.join("manifest.json").is_file());
    assert_eq!(outputs(&a), outputs(&b));
    assert_rerun_identical(&a, tmp.path(), "gen");
}

#[test]
fn gen_confined_writes_the_requested_size() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("confined");
    let o = dynacal(&["gen", "confined", "--n", "10", "--frames", "300", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(out.join("confined_0000.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 301);
    let header: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(header["n"], 10);
    let last: serde_json::Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert_eq!(last["r"].as_array().unwrap().len(), 10);
}

#[test]
fn usage_errors_exit_with_one() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("x");
    assert_eq!(code(&dynacal(&["gen", "pendulum", "--out", s(&out)])), 1);
    assert_eq!(code(&dynacal(&["gen", "oblique", "--n", "3", "--out", s(&out)])), 1);
    assert_eq!(code(&dynacal(&["verify", "--out", s(&out)])), 1);
    let o = dynacal(&["train", "--data", s(&tmp.path().join("missing")), "--out", s(&out)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("missing"), "{}", stderr(&o));
}

#[test]
fn unknown_config_keys_are_named() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, "version = 1\n[train]\nepochz = 3\n").unwrap();
    let o = dynacal(&["gen", "oblique", "--config", s(&cfg), "--out", s(&tmp.path().join("x"))]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("epochz"), "{}", stderr(&o));
}

#[test]
fn zero_epoch_training_then_rollout_against_truth() {
    let tmp = TempDir::new().unwrap();
    let data = gen_oblique(tmp.path(), 0, 2);
    let train = train_zero(tmp.path(), &data);
    let ck = train.join("checkpoint.txt");
    assert!(ck.is_file());
    let history = fs::read_to_string(train.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 2);
    assert_rerun_identical(&train, tmp.path(), "train");

    let scene = data.join("oblique_0001.jsonl");
    let out = tmp.path().join("rollout");
    let o = dynacal(&["rollout", "--checkpoint", s(&ck), "--scene", s(&scene), "--truth", s(&scene), "--horizon", "20", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["rollout.jsonl", "metrics.csv", "truth_metrics.csv", "comparison.csv", "status.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert!(fs::read_to_string(out.join("comparison.csv")).unwrap().starts_with("metric,rmse,max_dev\n"));
    assert_eq!(fs::read_to_string(out.join("metrics.csv")).unwrap().lines().count(), 21);
    assert_rerun_identical(&out, tmp.path(), "rollout");

    let m = tmp.path().join("metrics");
    assert_eq!(code(&dynacal(&["metrics", s(&scene), "--out", s(&m)])), 0);
    assert_rerun_identical(&m, tmp.path(), "metrics");
}

#[test]
fn blowup_stops_the_rollout_with_exit_three() {
    let tmp = TempDir::new().unwrap();
    let data = gen_oblique(tmp.path(), 0, 1);
    let ck = train_zero(tmp.path(), &data).join("checkpoint.txt");
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, "version = 1\n[rollout]\nblowup_factor = 1e-9\n").unwrap();
    let out = tmp.path().join("rollout");
    let scene = data.join("oblique_0000.jsonl");
    let o = dynacal(&["rollout", "--checkpoint", s(&ck), "--scene", s(&scene), "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let status: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("status.json")).unwrap()).unwrap();
    assert!(status["early_stop"].is_object(), "{status}");
    assert!(out.join("manifest.json").is_file());
}

#[test]
fn changed_inputs_block_a_rerun() {
    let tmp = TempDir::new().unwrap();
    let data = gen_oblique(tmp.path(), 3, 1);
    let out = tmp.path().join("m");
    let scene = data.join("oblique_0003.jsonl");
    assert_eq!(code(&dynacal(&["metrics", s(&scene), "--out", s(&out)])), 0);
    let mut text = fs::read_to_string(&scene).unwrap();
    text.push('\n');
    fs::write(&scene, text).unwrap();
    let o = dynacal(&["rerun", s(&out.join("manifest.json")), "--out", s(&tmp.path().join("r"))]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("changed"), "{}", stderr(&o));
}

#[test]
fn verify_passes_with_random_params_and_catches_a_corrupted_torque() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, "version = 1\n[verify]\ngraphs = 20\nsymmetry_trials = 5\n").unwrap();
    let out = tmp.path().join("verify");
    let o = dynacal(&["verify", "--random-params", "--seed", "4", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 10, "{stdout}");
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 11);
    assert_rerun_identical(&out, tmp.path(), "verify");

    let bad = tmp.path().join("bad");
    let o = dynacal(&["verify", "--random-params", "--corrupt-torque-sign", "--config", s(&cfg), "--out", s(&bad)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("angular momentum"), "{}", stderr(&o));
}
