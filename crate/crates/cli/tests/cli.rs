use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use modicf::training::TrainConfig;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_modicf"));
    c.env("RUST_LOG", "warn").env_remove("MODICF_THREADS");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("spawn modicf")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn tiny_config(dir: &Path) -> PathBuf {
    let cfg = TrainConfig {
        dim: 4,
        hidden_dim: 8,
        time_dim: 4,
        heads: 1,
        t_max: 50,
        sample_steps: 5,
        pretrain_epochs: 3,
        joint_epochs: 3,
        joint_patience: 3,
        mddc_batch: 8,
        bpr_batch: 64,
        ..TrainConfig::desk()
    };
    let path = dir.join("tiny.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn dataset(dir: &Path) {
    ok(dir, &["synth", "--out", "full", "--users", "30", "--items", "40", "--dims", "4,3", "--groups", "3", "--density", "0.25", "--seed", "7"]);
    ok(dir, &["mask", "--data", "full", "--out", "data", "--mr", "0.4", "--seed", "1"]);
}

fn read_tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().into(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let t = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        ok(t.path(), &["synth", "--out", out, "--users", "20", "--items", "15", "--seed", "7"]);
    }
    let a = read_tree(&t.path().join("a"));
    assert!(!a.is_empty());
    assert_eq!(a, read_tree(&t.path().join("b")));
}

#[test]
fn mask_rejects_rate_above_bound() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["synth", "--out", "d", "--users", "20", "--items", "15", "--dims", "4,4"]);
    let out = run(t.path(), &["mask", "--data", "d", "--out", "m", "--mr", "0.6"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.trim().lines().count(), 1, "{err}");
    assert!(err.contains("(0, 0.5]"), "{err}");
}

#[test]
fn failure_classes_have_distinct_statuses() {
    let t = tempfile::tempdir().unwrap();
    let out = run(t.path(), &["eval", "--data", "nowhere", "--checkpoint", "c.bin", "--out", "r"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("modicf: bad file:"));

    let out = run(t.path(), &["synth", "--out", "d", "--users", "many"]);
    assert_eq!(out.status.code(), Some(2));

    let out = bin().current_dir(t.path()).env("MODICF_THREADS", "0").args(["synth", "--out", "d"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("MODICF_THREADS"));
}

#[test]
fn train_eval_pipeline_is_reproducible() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    dataset(d);
    let cfg = tiny_config(d);
    let cfg = cfg.to_str().unwrap();
    for (ck, out) in [("a.bin", "ra"), ("b.bin", "rb")] {
        ok(d, &["train", "--data", "data", "--config", cfg, "--checkpoint", ck]);
        ok(d, &["eval", "--data", "data", "--checkpoint", ck, "--k", "10,20", "--out", out]);
    }
    assert_eq!(fs::read(d.join("a.bin")).unwrap(), fs::read(d.join("b.bin")).unwrap());
    let ra = fs::read_to_string(d.join("ra/report.json")).unwrap();
    assert_eq!(ra, fs::read_to_string(d.join("rb/report.json")).unwrap());

    let csv = fs::read_to_string(d.join("ra/report.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let mut expected = Vec::new();
    for k in [10, 20] {
        for m in ["Recall", "Precision", "NDCG", "F", "F_fuse"] {
            expected.push(format!("{m}@{k}"));
        }
    }
    assert_eq!(header, expected);

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("ra/manifest.json")).unwrap()).unwrap();
    assert!(manifest["imputation_mse"].as_f64().unwrap() > 0.0);
    assert_eq!(manifest["dataset_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn interrupted_training_resumes_to_the_same_checkpoint() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    dataset(d);
    let cfg = tiny_config(d);
    let cfg = cfg.to_str().unwrap();
    ok(d, &["train", "--data", "data", "--config", cfg, "--checkpoint", "whole.bin"]);
    ok(d, &["pretrain", "--data", "data", "--config", cfg, "--checkpoint", "pre.bin"]);
    ok(d, &["train", "--data", "data", "--resume", "pre.bin", "--max-steps", "2", "--checkpoint", "mid.bin"]);
    ok(d, &["train", "--data", "data", "--resume", "mid.bin", "--checkpoint", "resumed.bin"]);
    assert_eq!(fs::read(d.join("whole.bin")).unwrap(), fs::read(d.join("resumed.bin")).unwrap());
}

#[test]
fn impute_recommend_and_report() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    dataset(d);
    let cfg = tiny_config(d);
    let cfg = cfg.to_str().unwrap();
    let mut manifests = Vec::new();
    for variant in ["full", "no-counterfactual"] {
        for seed in ["1", "2"] {
            let ck = format!("{variant}-{seed}.bin");
            let out = format!("r-{variant}-{seed}");
            ok(d, &["train", "--data", "data", "--config", cfg, "--variant", variant, "--seed", seed, "--checkpoint", &ck]);
            ok(d, &["eval", "--data", "data", "--checkpoint", &ck, "--out", &out]);
            manifests.push(format!("{out}/manifest.json"));
        }
    }

    ok(d, &["impute", "--data", "data", "--checkpoint", "full-1.bin", "--out", "imputed"]);
    let side: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("imputed/imputed.json")).unwrap()).unwrap();
    let rows: usize = side["modalities"].as_array().unwrap().iter().map(|m| m["imputed_rows"].as_array().unwrap().len()).sum();
    assert!(rows > 0);
    let visual = modicf::io::fmat::read(&d.join("imputed/visual.fmat")).unwrap();
    assert_eq!((visual.rows(), visual.cols()), (40, 4));

    let out = ok(d, &["recommend", "--data", "data", "--checkpoint", "full-1.bin", "--user", "3", "--top-k", "5"]);
    let tsv = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(lines[0], "user_id\trank\titem_id\tscore");
    assert_eq!(lines.len(), 6);
    assert!(lines[1..].iter().all(|l| l.starts_with("3\t")));

    let mut args = vec!["report", "--out", "agg"];
    args.extend(manifests.iter().map(String::as_str));
    ok(d, &args);
    let md = fs::read_to_string(d.join("agg/report.md")).unwrap();
    assert!(md.contains("| MoDiCF |") && md.contains("| MoDiCF-C |"), "{md}");

    // aggregated means match recomputation from the per-seed manifests
    let csv = fs::read_to_string(d.join("agg/report.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "Recall@20").unwrap();
    let row = csv.lines().find(|l| l.starts_with("full,")).unwrap();
    let reported: f64 = row.split(',').nth(col).unwrap().parse().unwrap();
    let recall = |p: &str| -> f64 {
        let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join(p)).unwrap()).unwrap();
        m["metrics"]["cutoffs"].as_array().unwrap().iter().find(|c| c["k"] == 20).unwrap()["recall"].as_f64().unwrap()
    };
    let expected = (recall(&manifests[0]) + recall(&manifests[1])) / 2.0;
    assert_eq!(reported, expected);
    let ttest = fs::read_to_string(d.join("agg/ttest.csv")).unwrap();
    assert!(ttest.lines().any(|l| l.starts_with("no-counterfactual,full,F_fuse@20,2,")), "{ttest}");
}
