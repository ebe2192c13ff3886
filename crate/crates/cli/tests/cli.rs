use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn mlet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mlet"))
        .args(args)
        .env("MLET_THREADS", "2")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = mlet(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn digest(p: &Path) -> Vec<u8> {
    Sha256::digest(std::fs::read(p).unwrap()).to_vec()
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    let c = dir.path().join("c.bin");
    let small = ["--n-train", "3000", "--n-val", "300", "--n-test", "300"];
    let run = |p: &Path, seed: &str| {
        let mut args = vec!["gen-data", "--out", p.to_str().unwrap(), "--seed", seed];
        args.extend(small);
        ok(&args)
    };
    let text = run(&a, "5");
    run(&b, "5");
    run(&c, "6");
    assert!(text.contains("3600 records"));
    assert_eq!(digest(&a), digest(&b));
    assert_ne!(digest(&a), digest(&c));
}

#[test]
fn gen_data_default_size_and_uniform() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.bin");
    let text = ok(&["gen-data", "--out", p.to_str().unwrap()]);
    assert!(
        text.contains("240000 records (200000 train / 20000 val / 20000 test)"),
        "{text}"
    );
    let u = ok(&[
        "gen-data",
        "--out",
        p.to_str().unwrap(),
        "--zipf",
        "0",
        "--n-train",
        "100",
    ]);
    assert!(u.contains("uniform"));
}

#[test]
fn census_and_table() {
    let text = ok(&["verify-theory", "--census", "100", "8", "4"]);
    assert!(text.starts_with("nonzero=416, zero=384"), "{text}");
    assert!(text.contains("identity_holds=true"));
    let spec_case = ok(&["verify-theory", "--census", "100", "16", "8"]);
    assert!(
        spec_case.starts_with("nonzero=864, zero=736"),
        "{spec_case}"
    );
    let table = ok(&["verify-theory", "--grid"]);
    assert_eq!(ok(&["verify-theory", "--table1"]), table);
    let rows: Vec<&str> = table.lines().collect();
    assert!(rows[1].starts_with("single-layer"));
    assert_eq!(rows[1].split_whitespace().filter(|s| *s == "1").count(), 10);
    assert_eq!(
        rows[2].split_whitespace().skip(2).collect::<Vec<_>>(),
        ["**", "*", "*", "*", "*", "0", "0", "0", "0", "0"]
    );
    assert_eq!(rows[4].split_whitespace().filter(|s| *s == "**").count(), 8);
}

#[test]
fn verify_theory_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v.json");
    ok(&[
        "verify-theory",
        "--trials",
        "10",
        "--out",
        out.to_str().unwrap(),
    ]);
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(v["passed"], true);
}

#[test]
fn train_report_compress() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.bin");
    let runs = dir.path().join("runs");
    let d = data.to_str().unwrap();
    let r = runs.to_str().unwrap();
    ok(&[
        "gen-data",
        "--out",
        d,
        "--n-train",
        "6000",
        "--n-val",
        "500",
        "--n-test",
        "2000",
        "--cardinality",
        "80",
    ]);
    ok(&[
        "train",
        "--dataset",
        d,
        "--mode",
        "single",
        "--d",
        "4",
        "--seeds",
        "1,2",
        "--out",
        r,
    ]);
    ok(&[
        "train",
        "--dataset",
        d,
        "--d",
        "4",
        "--k",
        "8",
        "--seeds",
        "1,2",
        "--out",
        r,
        "--int8",
    ]);
    let table = ok(&["report", r]);
    assert!(table.contains("single-d4") && table.contains("mlet-d4-k8-std0.25"));
    let csv = std::fs::read_to_string(runs.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);

    let ckpt = runs
        .join("checkpoints")
        .join("mlet-d4-k8-std0.25-seed1.bin");
    let out = dir.path().join("q.bin");
    let json = ok(&[
        "compress",
        ckpt.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--int8",
    ]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert!(v["bytes_after"].as_u64().unwrap() < v["bytes_before"].as_u64().unwrap());

    let bad = mlet(&[
        "compress",
        ckpt.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(bad.status.code(), Some(2));
    let missing = mlet(&["train", "--dataset", "/nonexistent/x.bin", "--out", r]);
    assert_eq!(missing.status.code(), Some(2));
}
