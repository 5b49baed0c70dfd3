use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/tiny.json")
}

fn jala(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jala"))
        .args(args)
        .arg("--config")
        .arg(config())
        .arg("--out")
        .arg(out)
        .arg("--quiet")
        .env_remove("JALA_OUT")
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) {
    let o = jala(out, args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
}

fn error_line(o: &Output) -> String {
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr).trim().to_string();
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "stderr: {err}");
    lines[0].to_string()
}

fn read(p: PathBuf) -> Vec<u8> {
    fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

/// gen-data, tokenizer and pretraining into `out`.
fn pretrained(out: &Path) {
    ok(out, &["gen-data"]);
    ok(out, &["train-tokenizer"]);
    ok(out, &["pretrain"]);
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = jala(dir.path(), &["selftest"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = String::from_utf8(read(dir.path().join("selftest/results.csv"))).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.contains(",true,")));
}

#[test]
fn unknown_verb_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert!(!jala(dir.path(), &["fly"]).status.success());
}

#[test]
fn invalid_override_is_one_error_line() {
    let dir = tempfile::tempdir().unwrap();
    let line = error_line(&jala(dir.path(), &["gen-data", "--set", "world.no_such_key=3"]));
    assert!(line.starts_with("error: kind=config msg="), "{line}");
    let line = error_line(&jala(dir.path(), &["gen-data", "--set", "pretrain.alpha=2"]));
    assert!(line.starts_with("error: kind=config"), "{line}");
}

#[test]
fn missing_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_jala"))
        .args(["gen-data", "--config", "/nonexistent/config.json", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(error_line(&o).starts_with("error: kind=config"));
}

#[test]
fn gen_data_writes_every_split_and_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen-data"]);
    for split in ["lab_train", "lab_eval", "wild_train", "wild_eval", "robot_train", "robot_eval"] {
        assert!(dir.path().join(format!("gen-data/{split}.jepi")).exists());
    }
    let hash = String::from_utf8(read(dir.path().join("gen-data/config.hash"))).unwrap();
    assert_eq!(hash.trim().len(), 64);
    assert!(dir.path().join("gen-data/config.json").exists());
    let manifest: serde_json::Value = serde_json::from_slice(&read(dir.path().join("gen-data/manifest.json"))).unwrap();
    assert_eq!(manifest["splits"].as_array().unwrap().len(), 6);
    assert_eq!(manifest["config_hash"].as_str().unwrap(), hash.trim());
    assert_eq!(manifest["splits"][2]["labeled"], 10);
}

#[test]
fn pipeline_is_byte_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [a.path(), b.path()] {
        pretrained(d);
        ok(d, &["eval", "--split", "lab_eval"]);
        ok(d, &["posttrain"]);
        ok(d, &["project"]);
    }
    for f in [
        "gen-data/lab_train.jepi",
        "train-tokenizer/tokenizer.jtok",
        "train-tokenizer/epochs.csv",
        "pretrain/metrics.csv",
        "pretrain/checkpoint.jckp",
        "eval/lab_eval.csv",
        "eval/lab_eval.json",
        "posttrain/metrics.csv",
        "posttrain/action_eval.csv",
        "project/projection.csv",
    ] {
        assert_eq!(read(a.path().join(f)), read(b.path().join(f)), "{f} differs");
    }
    let csv = String::from_utf8(read(a.path().join("eval/lab_eval.csv"))).unwrap();
    assert!(csv.starts_with("split,metric,mean,count,config_hash,checkpoint_id\n"));
    assert_eq!(csv.lines().count(), 5);
    let timing = String::from_utf8(read(a.path().join("pretrain/timing.csv"))).unwrap();
    assert_eq!(timing.lines().count(), 11);
}

#[test]
fn eval_under_another_config_is_a_hash_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    pretrained(dir.path());
    let line = error_line(&jala(dir.path(), &["eval", "--set", "pretrain.total_steps=11"]));
    assert!(line.starts_with("error: kind=checkpoint"), "{line}");
}

#[test]
fn resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["train-tokenizer"]);
    ok(dir.path(), &["pretrain", "--set", "pretrain.checkpoint_every=5"]);
    let full = read(dir.path().join("pretrain/metrics.csv"));
    let ckpt = read(dir.path().join("pretrain/checkpoint.jckp"));
    let mid = dir.path().join("mid.jckp");
    fs::copy(dir.path().join("pretrain/step_000005.jckp"), &mid).unwrap();
    fs::remove_dir_all(dir.path().join("pretrain")).unwrap();
    ok(dir.path(), &["pretrain", "--set", "pretrain.checkpoint_every=5", "--resume", mid.to_str().unwrap()]);
    assert_eq!(read(dir.path().join("pretrain/metrics.csv")), full);
    assert_eq!(read(dir.path().join("pretrain/checkpoint.jckp")), ckpt);
}

#[test]
fn sweep_emits_four_reports() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["train-tokenizer"]);
    ok(dir.path(), &["sweep", "--set", "pretrain.total_steps=3"]);
    let summary = String::from_utf8(read(dir.path().join("sweep/summary.csv"))).unwrap();
    assert_eq!(summary.lines().count(), 5);
    for f in ["0", "0.25", "0.5", "1"] {
        let csv = String::from_utf8(read(dir.path().join(format!("sweep/fraction_{f}/report.csv")))).unwrap();
        assert!(csv.contains("wild_eval,mpjpe,"));
    }
}

#[test]
fn seed_flag_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["train-tokenizer"]);
    ok(dir.path(), &["pretrain"]);
    let a = read(dir.path().join("pretrain/metrics.csv"));
    ok(dir.path(), &["pretrain", "--seed", "99"]);
    assert_ne!(read(dir.path().join("pretrain/metrics.csv")), a);
}
