use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;

use fedsemi::checkpoint::ModelCheckpoint;
use fedsemi::cli::{self, ExperimentConfig};
use fedsemi::federation::Executor;

fn config(dir: &Path, rounds: usize, replicates: usize) -> ExperimentConfig {
    let json = format!(
        r#"{{"scheme":"SEMI","dataset":{{"synthetic":{{"train_len":6000,"test_len":5000}}}},
            "K":4,"C":0.5,"T":{rounds},"replicates":{replicates},"e_s":1,
            "output_dir":{:?}}}"#,
        dir.display().to_string()
    );
    ExperimentConfig::from_json(&json).unwrap()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

#[test]
fn two_rounds_give_two_evaluations() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 2, 1);
    let out = cli::run(&cfg, &Executor::Sequential).unwrap();
    let (header, rows) = read_csv(&out.metrics_csv);
    assert_eq!(header, ["replicate_id", "scheme", "round", "accuracy"]);
    let rounds: Vec<&str> = rows.iter().map(|r| r[2].as_str()).collect();
    assert_eq!(rounds, ["0", "2"]);
    for r in &rows {
        let acc: f64 = r[3].parse().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
    let ckpt = ModelCheckpoint::load(&out.checkpoints[0]).unwrap();
    assert_eq!(ckpt.config_fingerprint, cfg.fingerprint());
    assert!(ckpt.autoencoder.is_some());
}

#[test]
fn aggregate_has_one_row_per_scheme_and_round() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli::run(&config(dir.path(), 4, 3), &Executor::pool(2).unwrap()).unwrap();
    let (_, metrics) = read_csv(&out.metrics_csv);
    let pairs: BTreeSet<(String, String)> = metrics.iter().map(|r| (r[1].clone(), r[2].clone())).collect();
    let (header, agg) = read_csv(&out.aggregate_csv);
    assert_eq!(header, ["scheme", "round", "mean", "stderr", "n"]);
    assert_eq!(agg.len(), pairs.len());
    assert!(agg.iter().all(|r| r[4] == "3"));
    assert_eq!(out.checkpoints.len(), 3);
}

#[test]
fn reruns_are_byte_identical_across_executors() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    cli::run(&config(a.path(), 2, 2), &Executor::Sequential).unwrap();
    cli::run(&config(b.path(), 2, 2), &Executor::pool(2).unwrap()).unwrap();
    for f in ["metrics.csv", "aggregate.csv", "checkpoints/replicate_001.fsfl"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_fedsemi");
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"scheme":"SEMI","dataset":{"synthetic":{}},"lr_a":-1}"#).unwrap();
    let out = Command::new(bin).args(["run", bad.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let record: serde_json::Value = serde_json::from_slice(
        out.stderr.split(|&b| b == b'\n').rfind(|l| !l.is_empty()).unwrap(),
    )
    .unwrap();
    assert_eq!(record["key"], "lr_a");

    let out = Command::new(bin)
        .args(["inspect", dir.path().join("missing.fsfl").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let good = dir.path().join("good.json");
    std::fs::write(
        &good,
        r#"{"scheme":"CS","dataset":{"synthetic":{"train_len":6000,"test_len":5000}},"T":2,"replicates":1,"output_dir":"res"}"#,
    )
    .unwrap();
    let out = Command::new(bin)
        .args(["run", good.to_str().unwrap(), "--out"])
        .arg(dir.path().join("res"))
        .env("FEDSEMI_WORKERS", "2")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = dir.path().join("res/checkpoints/replicate_000.fsfl");
    let out = Command::new(bin).args(["inspect", ckpt.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["classifier"]["head"], "LSTM");
}
