use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn enkcvs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_enkcvs"))
        .args(args)
        .env_remove("ENKCVS_OUT")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = enkcvs(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn without_meta(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("meta");
    v
}

const SMALL: &[&str] = &["--blobs", "3,240,4,2.5", "--noise", "symmetric:0.3", "--epochs", "5", "--K", "3", "--M", "2", "--t", "1"];

#[test]
fn theory_example() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["theory", "--Q", "10", "--epsilon", "0.2", "--q", "0.9", "--M", "1", "--t", "1", "--out", dir.path().to_str().unwrap()]);
    let printed: Value = serde_json::from_slice(&out.stdout).unwrap();
    let p = printed["precision"].as_f64().unwrap();
    assert!((p - 0.996923).abs() < 1e-6, "{p}");
    assert!((printed["recall"].as_f64().unwrap() - 0.9).abs() < 1e-12);
    let saved: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("theory.json")).unwrap()).unwrap();
    assert_eq!(saved["result"], printed);
}

#[test]
fn select_is_identical_across_worker_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, workers) in [(&a, "1"), (&b, "4")] {
        let mut args = vec!["select", "--workers", workers, "--out", dir.path().to_str().unwrap()];
        args.extend_from_slice(SMALL);
        ok(&args);
    }
    for name in ["verdicts.csv", "selection.json", "profiles.csv", "metrics.json"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name} differs"
        );
    }
    assert_eq!(without_meta(manifest(a.path())), without_meta(manifest(b.path())));
}

#[test]
fn sweep_is_identical_across_worker_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, workers) in [(&a, "1"), (&b, "4")] {
        ok(&[
            "sweep", "--workers", workers, "--out", dir.path().to_str().unwrap(),
            "--blobs", "3,150,4,2.5", "--epochs", "3",
            "--grid-K", "2,3", "--grid-M", "1,2", "--grid-epsilon", "0.2", "--seeds", "0,1",
        ]);
    }
    let csv_a = fs::read_to_string(a.path().join("sweep.csv")).unwrap();
    assert_eq!(csv_a, fs::read_to_string(b.path().join("sweep.csv")).unwrap());
    assert_eq!(csv_a.lines().count(), 1 + 2 * 2 * 2);
    assert_eq!(without_meta(manifest(a.path())), without_meta(manifest(b.path())));
}

#[test]
fn manifest_replays_the_run() {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let mut args = vec!["select", "--seed", "7", "--out", first.path().to_str().unwrap()];
    args.extend_from_slice(SMALL);
    ok(&args);
    let m = first.path().join("manifest.json");
    ok(&["select", "--config", m.to_str().unwrap(), "--out", second.path().to_str().unwrap()]);
    assert_eq!(
        fs::read(first.path().join("verdicts.csv")).unwrap(),
        fs::read(second.path().join("verdicts.csv")).unwrap()
    );
    assert_eq!(without_meta(manifest(first.path())), without_meta(manifest(second.path())));
}

#[test]
fn clean_data_defaults() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["select", "--blobs", "3,300,4,3", "--epochs", "5", "--out", dir.path().to_str().unwrap()]);
    let config = &manifest(dir.path())["config"];
    assert_eq!(config["selection.K"], "10");
    assert_eq!(config["selection.M"], "5");
    assert_eq!(config["selection.t"], "2");
    let verdicts = fs::read_to_string(dir.path().join("verdicts.csv")).unwrap();
    for line in verdicts.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let observed: usize = cols[1].parse().unwrap();
        let hits = cols[4].split('|').filter(|p| p.parse::<usize>().unwrap() == observed).count();
        assert_eq!(cols[2].parse::<usize>().unwrap(), hits);
        assert_eq!(cols[3] == "1", hits >= 2, "{line}");
    }
}

#[test]
fn pipeline_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = |sub: &str| d.join(sub).to_str().unwrap().to_string();
    ok(&["gen-data", "--blobs", "3,200,4,2.5", "--test-n", "100", "--out", &out("gen")]);
    let data = out("gen") + "/data.csv";
    let test = out("gen") + "/test.csv";
    ok(&["inject", "--csv", &data, "--noise", "asym:0.3:0>1", "--out", &out("noisy")]);
    let noise: Value = serde_json::from_str(&fs::read_to_string(d.join("noisy/noise_model.json")).unwrap()).unwrap();
    assert_eq!(noise["kind"], "asymmetric");

    let noisy = out("noisy") + "/noisy.csv";
    let common = ["--csv", noisy.as_str(), "--true-label-col", "true_label", "--test-csv", test.as_str(), "--epochs", "5", "--K", "3", "--M", "2", "--t", "1"];
    let run = |cmd: &str, dest: &str, extra: &[&str]| {
        let mut args = vec![cmd, "--out", dest];
        args.extend_from_slice(&common);
        args.extend_from_slice(extra);
        ok(&args)
    };
    run("select", &out("select"), &[]);
    let selection = out("select") + "/selection.json";
    run("retrain", &out("retrain"), &["--selection", &selection]);
    let model = out("retrain") + "/model.json";
    run("eval", &out("eval"), &["--model", &model, "--selection", &selection]);
    let report: Value = serde_json::from_str(&fs::read_to_string(d.join("eval/eval.json")).unwrap()).unwrap();
    let acc = report["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert!(report["selection"]["precision"].as_f64().is_some());
    let retrain_metrics: Value =
        serde_json::from_str(&fs::read_to_string(d.join("retrain/metrics.json")).unwrap()).unwrap();
    assert_eq!(retrain_metrics["test_accuracy"].as_f64().unwrap(), acc);
}

#[test]
fn simulate_prints_both_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["simulate", "--Q", "4", "--epsilon", "0.3", "--q", "0.8", "--M", "3", "--t", "2", "--N", "200000", "--out", dir.path().to_str().unwrap()]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("closed form") && text.contains("monte carlo"), "{text}");
    let saved: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("simulate.json")).unwrap()).unwrap();
    assert_eq!(saved["within_3_se"], true);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(enkcvs(&["nonsense"]).status.code(), Some(1));
    assert_eq!(enkcvs(&["select", "--out", d]).status.code(), Some(1));
    let bad_t = enkcvs(&["select", "--blobs", "3,90,2,2", "--M", "2", "--t", "3", "--out", d]);
    assert_eq!(bad_t.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad_t.stderr).contains("selection.t"));
    let missing = enkcvs(&["select", "--csv", "/nonexistent/file.csv", "--out", d]);
    assert_eq!(missing.status.code(), Some(2));
    assert_eq!(enkcvs(&["--help"]).status.code(), Some(0));
}
