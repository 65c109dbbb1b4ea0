//! The `pdploc` binary end to end on a tiny dataset.

use std::path::Path;
use std::process::{Command, Output};

fn pdploc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pdploc"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = pdploc(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn zero_samples_is_a_usage_error() {
    let out = pdploc(&["generate", "--samples", "0", "--out", "/tmp/never.pdpd"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!Path::new("/tmp/never.pdpd").exists());
}

#[test]
fn contradictory_model_flags_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.pdpd");
    ok(&["generate", "--samples", "4", "--out", s(&data)]);
    let ckpt = dir.path().join("m.ckpt");
    let out = pdploc(&[
        "train", "--dataset", s(&data), "--preset", "sst-small", "--tokenizer", "tst", "--out", s(&ckpt),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    assert!(!ckpt.exists());
}

#[test]
fn flops_reports_budget() {
    let out = ok(&["flops", "--preset", "sst-small", "--family", "vanilla"]);
    assert!(out.contains("4.50M"), "{out}");
    assert!(out.contains("pass"));
    let all = ok(&["flops"]);
    assert_eq!(all.lines().filter(|l| l.ends_with("pass")).count(), 12);
}

#[test]
fn generate_is_reproducible_and_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.pdpd"), dir.path().join("b.pdpd"));
    ok(&["generate", "--samples", "5", "--seed", "3", "--out", s(&a)]);
    ok(&["generate", "--samples", "5", "--seed", "3", "--out", s(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a.pdpd.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "generate");
    assert_eq!(manifest["seed"], 3);
    assert!(dir.path().join("a_labels.csv").exists());
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[generator]\nrng_seed = 11\n").unwrap();
    let (a, b, c) = (dir.path().join("a.pdpd"), dir.path().join("b.pdpd"), dir.path().join("c.pdpd"));
    ok(&["--config", s(&cfg), "generate", "--samples", "3", "--out", s(&a)]);
    ok(&["generate", "--samples", "3", "--seed", "11", "--out", s(&b)]);
    ok(&["--config", s(&cfg), "generate", "--samples", "3", "--seed", "12", "--out", s(&c)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn train_evaluate_attention_compare() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.pdpd");
    ok(&["generate", "--samples", "24", "--out", s(&data)]);
    let sst = dir.path().join("sst.ckpt");
    let tst = dir.path().join("tst.ckpt");
    let common = ["--epochs", "2", "--batch-size", "12", "--aug", "none", "--threads", "1"];
    let mut args = vec!["train", "--dataset", s(&data), "--preset", "sst-small", "--out", s(&sst)];
    args.extend(common);
    ok(&args);
    let mut args = vec!["train", "--dataset", s(&data), "--preset", "tst-small", "--out", s(&tst)];
    args.extend(common);
    ok(&args);
    assert!(dir.path().join("sst_training_log.csv").exists());
    assert!(dir.path().join("sst.ckpt.manifest.json").exists());

    let eval = dir.path().join("eval");
    let out = ok(&["evaluate", "--checkpoint", s(&sst), "--dataset", s(&data), "--out", s(&eval)]);
    assert!(out.contains("p90"));
    for f in ["errors.csv", "summary.csv", "cdf.csv", "cdf.svg", "manifest.json"] {
        assert!(eval.join(f).exists(), "{f}");
    }

    let att = dir.path().join("att");
    ok(&["attention", "--checkpoint", s(&sst), "--dataset", s(&data), "--layers", "0", "--out", s(&att)]);
    let csv = std::fs::read_to_string(att.join("attention_layer0.csv")).unwrap();
    assert_eq!(csv.lines().count(), 19);
    let out = pdploc(&["attention", "--checkpoint", s(&tst), "--dataset", s(&data), "--out", s(&att)]);
    assert!(!out.status.success());

    let cmp = dir.path().join("cmp");
    let out = ok(&[
        "compare", "--dataset", s(&data), "--checkpoint", s(&sst), "--checkpoint", s(&tst), "--out", s(&cmp),
    ]);
    assert!(out.contains("lowest p90"));
    assert!(cmp.join("summary.csv").exists());
}
