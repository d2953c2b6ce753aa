use std::path::Path;
use std::process::{Command, Output};

use discovery::dataio::GeneratorConfig;
use discovery::interpreter::AbcConfig;
use discovery::pipeline::LoopConfig;
use serde_json::Value;

fn dl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dl")).args(args).output().expect("dl runs")
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stderr)))
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(dl(&[]).status.code(), Some(2));
    assert_eq!(dl(&["cost", "--set", "3"]).status.code(), Some(2));
    assert_eq!(dl(&["frobnicate"]).status.code(), Some(2));
    let out = dl(&["--threads", "0", "cost"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "usage");
}

#[test]
fn data_errors_exit_with_one_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dl(&["evaluate", "--predictions", path(&dir.path().join("absent.csv"))]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"], "missing_file");

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let out = dl(&["cost", "--config", path(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"], "json");
}

#[test]
fn evaluate_reports_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("p.csv");
    std::fs::write(&csv, "group_id,predicted,observed,subset\ng1,220,200,selected\ng2,380,400,remaining\n").unwrap();
    let out = dl(&["evaluate", "--predictions", path(&csv)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["metrics"]["mape"].as_f64().unwrap() - 7.5).abs() < 1e-12);
    assert_eq!(v["metrics"]["n"], 2);
    assert!(v["reproducibility"]["config_hash"].is_string());
}

#[test]
fn evaluate_surfaces_zero_variance() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("flat.csv");
    std::fs::write(&csv, "group_id,predicted,observed,subset\ng1,500,500,selected\ng2,500,500,remaining\n").unwrap();
    let out = dl(&["evaluate", "--predictions", path(&csv)]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"], "zero_variance");
    // MAPE and RMSE are still printed.
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["metrics"]["mape"], 0.0);
    assert_eq!(v["metrics"]["rmse"], 0.0);
}

#[test]
fn cost_table_and_json_agree() {
    let table = String::from_utf8(dl(&["cost", "--set", "1", "--table"]).stdout).unwrap();
    assert!(table.contains("1333.3") && table.contains("8.523") && table.contains("0.468"));
    let v: Value = serde_json::from_slice(&dl(&["cost", "--set", "2", "--paper-rounding"]).stdout).unwrap();
    assert_eq!(v["report"]["dl"]["test_days"], 14.0);
    assert_eq!(v["report"]["paper_rounding"], true);
}

#[test]
fn simulate_writes_a_series_and_its_stanza() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("cycle.csv");
    let out = dl(&["simulate", "--seed", "9", "--out", path(&csv)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.lines().count() > 100);
    let stanza: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("cycle.csv.run.json")).unwrap()).unwrap();
    assert_eq!(stanza["reproducibility"]["seed"], 9);
    assert_eq!(stanza["reproducibility"]["version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn small_dataset_through_infer_and_features() {
    let dir = tempfile::tempdir().unwrap();
    let mut gen = GeneratorConfig::historical(4);
    gen.designs.truncate(1);
    gen.types.truncate(1);
    gen.types[0].groups.truncate(2);
    gen.types[0].groups.iter_mut().for_each(|g| g.cells = 1);
    let gen_path = dir.path().join("gen.json");
    std::fs::write(&gen_path, serde_json::to_vec(&gen).unwrap()).unwrap();
    let mut lc = LoopConfig::reduced();
    lc.bank_samples = 300;
    lc.abc = AbcConfig { quantile: 0.1, min_accept: 10, ..AbcConfig::default() };
    let lc_path = dir.path().join("loop.json");
    std::fs::write(&lc_path, serde_json::to_vec(&lc).unwrap()).unwrap();

    let ds = dir.path().join("ds");
    let out = dl(&["gen-dataset", "--config", path(&gen_path), "--role", "historical", "--out", path(&ds)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run: Value = serde_json::from_str(&std::fs::read_to_string(ds.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["cells"], 2);
    assert_eq!(run["reproducibility"]["seed"], 1);

    let cell = format!("{}-1", gen.types[0].groups[0].group_id);
    let post = dir.path().join("post.json");
    let out = dl(&[
        "infer", "--config", path(&lc_path), "--dataset", path(&ds), "--cell", &cell, "--checkup", "fiftieth", "--out",
        path(&post),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&post).unwrap()).unwrap();
    assert_eq!(v["mean"].as_array().unwrap().len(), 14);
    assert_eq!(v["acceptance_count"], 30);

    let feats = dir.path().join("features.csv");
    let out = dl(&["features", "--config", path(&lc_path), "--dataset", path(&ds), "--out", path(&feats)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&feats).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    assert_eq!(header.len(), 5 + 28 + 1);
    assert_eq!(text.lines().count(), 3);

    let out = dl(&["infer", "--config", path(&lc_path), "--dataset", path(&ds), "--cell", "nope", "--out", path(&post)]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"], "invalid_input");
}
