use std::path::Path;
use std::process::{Command, Output};

fn nashpg(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nashpg"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn evaluate_writes_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let train = nashpg(dir.path(), &["--scenario", "m2v2", "--seed", "3", "train", "--demo", "c"]);
    assert!(train.status.success(), "{}", String::from_utf8_lossy(&train.stderr));
    let ckpt = dir.path().join("model.ckpt");
    let mut reports = Vec::new();
    for _ in 0..2 {
        let o = nashpg(
            dir.path(),
            &["--scenario", "m2v2", "--seed", "5", "evaluate", "--checkpoint", ckpt.to_str().unwrap(), "--battles", "20"],
        );
        assert!(o.status.success());
        reports.push(std::fs::read(dir.path().join("eval.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    assert!(dir.path().join("train_log.csv").exists());
}

#[test]
fn oracle_pne_agrees_with_enumeration() {
    let dir = tempfile::tempdir().unwrap();
    let o = nashpg(dir.path(), &["--seed", "2", "oracle-pne", "--random", "50"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains(", 0 disagreements"));

    let tensor = dir.path().join("coord.txt");
    std::fs::write(&tensor, "# coordination\n2 2 2\n0 0 1\n0 1 0\n1 0 0\n1 1 1\n").unwrap();
    let o = nashpg(dir.path(), &["oracle-pne", "--tensor", tensor.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("equilibria: [[0, 0], [1, 1]]"));
}

#[test]
fn demo_record_and_imitate() {
    let dir = tempfile::tempdir().unwrap();
    let o = nashpg(dir.path(), &["--scenario", "m2v2", "demo-record", "--episodes", "3"]);
    assert!(o.status.success());
    let demo = dir.path().join("demo.jsonl");
    let o = nashpg(dir.path(), &["imitate", "--demo", demo.to_str().unwrap(), "--epochs", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("imitation.ckpt").exists());
}

#[test]
fn bad_config_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "learning_rate = -1.0\n").unwrap();
    let o = nashpg(dir.path(), &["--config", cfg.to_str().unwrap(), "train"]);
    assert_eq!(o.status.code(), Some(1));
    std::fs::write(&cfg, "no_such_field = 3\n").unwrap();
    let o = nashpg(dir.path(), &["--config", cfg.to_str().unwrap(), "train"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn divergence_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("hot.toml");
    std::fs::write(&cfg, "learning_rate = 1e200\ntotal_steps = 400\n").unwrap();
    let o = nashpg(dir.path(), &["--scenario", "m2v2", "--config", cfg.to_str().unwrap(), "train"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(dir.path().join("model.ckpt").exists());
}

#[test]
fn lemma1_reports_no_violations() {
    let dir = tempfile::tempdir().unwrap();
    let o = nashpg(dir.path(), &["--scenario", "m2v2", "--seed", "4", "lemma1", "--samples", "5"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("5 samples, 0 violations"));
}
