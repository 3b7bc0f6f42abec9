use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn toy_config() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/toy/config.toml")
}

fn dcdcsr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcdcsr")).args(args).output().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr:\n{}", String::from_utf8_lossy(&out.stderr));
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn run_toy(dir: &Path, extra: &[&str]) {
    let cfg = toy_config();
    let mut args = vec!["run", "--config", cfg.to_str().unwrap(), "--output", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    ok(&dcdcsr(&args));
}

/// Relative path to file bytes, for every file under `root`.
fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn manifest_files(root: &Path) -> serde_json::Map<String, serde_json::Value> {
    let m: serde_json::Value = serde_json::from_slice(&fs::read(root.join("manifest.json")).unwrap()).unwrap();
    m["files"].as_object().unwrap().clone()
}

#[test]
fn toy_run_writes_reports_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    run_toy(&dir, &[]);
    for f in ["FORMAT", "config.toml", "split/train.csv", "split/test.csv", "reports/seeds.csv", "reports/summary.txt"] {
        assert!(dir.join(f).is_file(), "{f} missing");
    }
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("reports/summary.json")).unwrap()).unwrap();
    assert_eq!(summary.as_array().unwrap().len(), 6);
    assert!(fs::read_to_string(dir.join("reports/summary.txt")).unwrap().contains("(± "));

    let files = manifest_files(&dir);
    let on_disk = snapshot(&dir);
    assert_eq!(files.len(), on_disk.len() - 1);
    for (rel, hash) in &files {
        let expect = hex::encode(Sha256::digest(&on_disk[rel]));
        assert_eq!(hash.as_str().unwrap(), expect, "{rel}");
    }
}

#[test]
fn missing_dataset_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("no_such_ratings.csv");
    let cfg = toy_config();
    let out = dcdcsr(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--output",
        tmp.path().join("run").to_str().unwrap(),
        "--target",
        missing.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.contains("no_such_ratings.csv"), "{err}");
    assert!(err.contains("stage `split`"), "{err}");
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_toy(&a, &["--seeds", "1,2"]);
    run_toy(&b, &["--seeds", "1,2"]);
    let (mut sa, mut sb) = (snapshot(&a), snapshot(&b));
    sa.remove("manifest.json");
    sb.remove("manifest.json");
    assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>());
    for (k, v) in &sa {
        assert!(v == &sb[k], "{k} differs");
    }
    assert_eq!(manifest_files(&a), manifest_files(&b));
}

#[test]
fn map_before_bridge_names_the_benchmark() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let cfg = toy_config();
    let base = ["--config", cfg.to_str().unwrap(), "--output", dir.to_str().unwrap()];
    ok(&dcdcsr(&[&["split"][..], &base].concat()));
    ok(&dcdcsr(&[&["train-mf", "--seed", "1"][..], &base].concat()));
    let out = dcdcsr(&["map", "--output", dir.to_str().unwrap(), "--seed", "1"]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.contains("benchmark.factors") && err.contains("bridge"), "{err}");
}

#[test]
fn recommend_after_run() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    run_toy(&dir, &["--seeds", "3"]);
    let out = dcdcsr(&["recommend", "--output", dir.to_str().unwrap(), "--user", "c1", "--n", "10"]);
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(!lines.is_empty() && lines.len() <= 10);
    let train = fs::read_to_string(dir.join("split/train.csv")).unwrap();
    for (i, line) in lines.iter().enumerate() {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(cols[0], (i + 1).to_string());
        assert!(!train.lines().any(|l| l.starts_with(&format!("c1,{},", cols[1]))));
    }
}

#[test]
fn stage_chain_matches_run() {
    let tmp = tempfile::tempdir().unwrap();
    let (whole, staged) = (tmp.path().join("whole"), tmp.path().join("staged"));
    run_toy(&whole, &["--seeds", "2,5"]);
    let cfg = toy_config();
    let first = [
        "--config",
        cfg.to_str().unwrap(),
        "--output",
        staged.to_str().unwrap(),
        "--seeds",
        "2,5",
    ];
    ok(&dcdcsr(&[&["split"][..], &first].concat()));
    // later stages find the saved configuration in the run directory
    let rest = ["--output", staged.to_str().unwrap()];
    for s in ["train-mf", "bridge", "map", "finetune", "evaluate"] {
        ok(&dcdcsr(&[&[s][..], &rest].concat()));
    }
    let (mut a, mut b) = (snapshot(&whole), snapshot(&staged));
    a.remove("manifest.json");
    b.remove("manifest.json");
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (k, v) in &a {
        assert!(v == &b[k], "{k} differs");
    }
}

#[test]
fn synth_writes_a_runnable_pair() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("syn");
    ok(&dcdcsr(&[
        "synth",
        "--out",
        out.to_str().unwrap(),
        "--entities",
        "60",
        "--source-per-entity",
        "10",
        "--seed",
        "4",
    ]));
    let cfg = out.join("config.toml");
    ok(&dcdcsr(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--seeds",
        "1",
        "--dim",
        "3",
        "--epochs",
        "5",
        "--map-epochs",
        "5",
    ]));
    assert!(out.join("run/reports/summary.json").is_file());
}
