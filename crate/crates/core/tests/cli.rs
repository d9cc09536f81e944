use std::path::Path;
use std::process::{Command, Output};

fn losnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_losnet")).args(args).output().expect("spawn losnet")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen(dir: &Path, name: &str, delta: &str) -> std::path::PathBuf {
    let out = dir.join(name);
    let o = losnet(&["gen-synth", "--delta", delta, "--seed", "3", "--n-per-class", "40", "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn validate_generated_file() {
    let dir = tempfile::tempdir().unwrap();
    let f = gen(dir.path(), "a.los", "0.5");
    let o = losnet(&["validate", "--in", p(&f)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("records=80"));
}

#[test]
fn mink_at_full_fraction_matches_loss() {
    let dir = tempfile::tempdir().unwrap();
    let f = gen(dir.path(), "a.los", "0.5");
    let (a, b) = (dir.path().join("mink.csv"), dir.path().join("loss.csv"));
    for (method, out, extra) in [("mink", &a, "100"), ("loss", &b, "20")] {
        let o = losnet(&["score", "--method", method, "--k-frac", extra, "--in", p(&f), "--out", p(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn inspect_mass_is_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("m.los");
    let o =
        losnet(&["gen-synth", "--delta", "0.5", "--n-per-class", "10", "--vocab", "200", "--k", "200", "--out", p(&f)]);
    assert!(o.status.success());
    let o = losnet(&["inspect-mass", "--in", p(&f), "--k-list", "1,5,20,100,200"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let mass: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(mass.len(), 5);
    assert!(mass.windows(2).all(|w| w[1] >= w[0]), "{mass:?}");
    assert!((mass[4] - 1.0).abs() < 1e-5);
}

#[test]
fn train_predict_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let tr = gen(dir.path(), "tr.los", "0.9");
    let ck = dir.path().join("m.ckpt");
    let cfg = dir.path().join("cfg.txt");
    std::fs::write(&cfg, "epochs=2\nemb_size=16\nheads=4\n").unwrap();
    let o = losnet(&["train", "--config", p(&cfg), "--train", p(&tr), "--val", p(&tr), "--ckpt", p(&ck)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let scores = dir.path().join("losnet.csv");
    assert!(losnet(&["predict", "--ckpt", p(&ck), "--in", p(&tr), "--out", p(&scores)]).status.success());
    let o = losnet(&["finetune", "--ckpt", p(&ck), "--train", p(&tr), "--val", p(&tr), "--epochs", "1"]);
    assert!(o.status.success());
    assert!(dir.path().join("m.ckpt.ft").exists());
    let report = dir.path().join("report.txt");
    assert!(losnet(&["eval", "--scores", p(&scores), "--out", p(&report)]).status.success());
    assert!(dir.path().join("report.txt.json").exists());
}

#[test]
fn split_writes_files() {
    let dir = tempfile::tempdir().unwrap();
    let f = gen(dir.path(), "a.los", "0.5");
    let out = dir.path().join("folds");
    assert!(losnet(&["split", "--mode", "kfold", "--folds", "4", "--in", p(&f), "--out-dir", p(&out)])
        .status
        .success());
    assert!(out.join("fold3_test.los").exists());
    assert!(losnet(&["split", "--mode", "grouped", "--in", p(&f), "--out-dir", p(&out)]).status.success());
    assert!(out.join("train.los").exists() && out.join("test.los").exists());
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(losnet(&["score", "--bogus"]).status.code(), Some(1));
    assert_eq!(losnet(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(losnet(&["gen-synth", "--delta", "1.5", "--out", "/tmp/never.los"]).status.code(), Some(1));
    assert_eq!(losnet(&["--help"]).status.code(), Some(0));
}

#[test]
fn bad_data_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("junk.los");
    std::fs::write(&f, b"not a record file").unwrap();
    let o = losnet(&["validate", "--in", p(&f)]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(losnet(&["validate", "--in", p(&dir.path().join("missing.los"))]).status.code(), Some(2));
}
