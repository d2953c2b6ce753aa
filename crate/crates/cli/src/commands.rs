use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use discovery::cellsim::{consistent_params, simulate_cycle, CellDesign, CyclingCondition, Protocol, ReferenceFree};
use discovery::costing::{cost_report, CostAssumptions};
use discovery::dataio::{gen_synthetic_dataset, load_dataset, write_dataset, DesignSpec, GeneratorConfig};
use discovery::interpreter::{infer_posterior, BankCache, FeatureVector28};
use discovery::oracle::{fit_oracle, HistoricalCell, OracleModel};
use discovery::pipeline::{
    config_hash, dataset_features, historical_cells, metric_set, read_predictions_csv, run_discovery_loop,
    write_predictions_csv, LoopConfig, Reproducibility,
};
use discovery::Error;

use crate::{CheckupArg, Common, Failure, RoleArg};

type Outcome = std::result::Result<(), Failure>;

fn read_json<T: DeserializeOwned>(path: &Path) -> std::result::Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    Ok(serde_json::from_str(&text).map_err(Error::from)?)
}

fn config_or_default<T: DeserializeOwned>(common: &Common, default: impl FnOnce() -> T) -> std::result::Result<T, Failure> {
    match &common.config {
        Some(p) => read_json(p),
        None => Ok(default()),
    }
}

fn write_text(path: &Path, text: &str) -> Outcome {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Pretty JSON of `value` with the stanza as its `reproducibility` key.
fn write_with_stanza<T: Serialize>(path: &Path, value: &T, stanza: &Reproducibility) -> Outcome {
    let mut v = serde_json::to_value(value).map_err(Error::from)?;
    if let Value::Object(m) = &mut v {
        m.insert("reproducibility".into(), serde_json::to_value(stanza).map_err(Error::from)?);
    }
    write_text(path, &(serde_json::to_string_pretty(&v).map_err(Error::from)? + "\n"))
}

/// CSV outputs carry their stanza in a `<file>.run.json` sidecar.
fn write_sidecar(csv: &Path, stanza: &Reproducibility) -> Outcome {
    let mut name = csv.as_os_str().to_owned();
    name.push(".run.json");
    write_with_stanza(&PathBuf::from(name), &serde_json::json!({}), stanza)
}

fn csv_writer(path: &Path) -> std::result::Result<csv::Writer<fs::File>, Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(csv::Writer::from_path(path).map_err(Error::from)?)
}

fn loop_config(common: &Common) -> std::result::Result<LoopConfig, Failure> {
    let mut cfg: LoopConfig = config_or_default(common, LoopConfig::default)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct Scenario {
    /// Reference 80 Ah design when absent.
    design: Option<DesignSpec>,
    params: ReferenceFree,
    condition: CyclingCondition,
    protocol: Protocol,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            design: None,
            params: ReferenceFree::default(),
            condition: CyclingCondition::new(25.0, 1.0, 1.0),
            protocol: Protocol::cc_cc(),
        }
    }
}

pub fn simulate(common: &Common, out: &Path) -> Outcome {
    let sc: Scenario = config_or_default(common, Scenario::default)?;
    let design = sc.design.as_ref().map_or_else(CellDesign::reference_80ah, DesignSpec::build);
    let params = consistent_params(&sc.params, &design)?;
    let series = simulate_cycle(&params, &design, &sc.condition, &sc.protocol)?;
    let mut w = csv_writer(out)?;
    for row in &series.rows {
        w.serialize(row).map_err(Error::from)?;
    }
    w.flush().map_err(|e| Error::io(out, e))?;
    write_sidecar(out, &Reproducibility::of(common.seed.unwrap_or(0), &sc))
}

pub fn gen_dataset(common: &Common, role: RoleArg, out: &Path) -> Outcome {
    let seed = common.seed.unwrap_or(match role {
        RoleArg::Historical => 1,
        RoleArg::Test => 2,
    });
    let mut cfg: GeneratorConfig = config_or_default(common, || match role {
        RoleArg::Historical => GeneratorConfig::historical(seed),
        RoleArg::Test => GeneratorConfig::test_family(seed),
    })?;
    cfg.seed = seed;
    let ds = gen_synthetic_dataset(&cfg)?;
    write_dataset(&ds, out)?;
    write_with_stanza(&out.join("run.json"), &serde_json::json!({ "cells": ds.records.len() }), &Reproducibility::of(seed, &cfg))
}

pub fn infer(common: &Common, dataset: &Path, cell: &str, checkup: CheckupArg, out: &Path) -> Outcome {
    let cfg = loop_config(common)?;
    let ds = load_dataset(dataset)?;
    let record = ds
        .records
        .iter()
        .find(|r| r.cell_id == cell)
        .ok_or_else(|| Error::InvalidInput(format!("cell {cell} not in {}", dataset.display())))?;
    let spec = cfg.bank_spec();
    let bank = BankCache::from_env().get_or_build(ds.design(&record.design)?, &spec)?;
    let obs = match checkup {
        CheckupArg::First => &record.early_profiles.first,
        CheckupArg::Fiftieth => &record.early_profiles.fiftieth,
    };
    let summary = infer_posterior(obs, &bank, &spec.prior, &cfg.abc)?.full(&bank, &spec.prior);
    write_with_stanza(out, &summary, &Reproducibility::of(cfg.seed, &cfg))
}

/// One row of the features CSV.
struct FeatureRow {
    cell_id: String,
    group_id: String,
    condition: CyclingCondition,
    features: Vec<f64>,
    observed_life: Option<f64>,
}

const FEATURE_LEAD: [&str; 5] = ["cell_id", "group_id", "ambient_t", "c_chg", "c_dis"];

fn feature_header() -> Vec<String> {
    FEATURE_LEAD
        .iter()
        .map(|s| s.to_string())
        .chain(FeatureVector28::names())
        .chain(std::iter::once("observed_life".to_string()))
        .collect()
}

fn read_features(path: &Path) -> std::result::Result<Vec<FeatureRow>, Failure> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()).into());
    }
    let mut r = csv::Reader::from_path(path).map_err(Error::from)?;
    let header: Vec<String> = r.headers().map_err(Error::from)?.iter().map(String::from).collect();
    if header != feature_header() {
        return Err(Error::Invariant { path: path.into(), line: 1, message: "unexpected features header".into() }.into());
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(Error::from)?;
        let bad = |m: String| Error::Invariant { path: path.into(), line: i + 2, message: m };
        let num = |k: usize| rec[k].parse::<f64>().map_err(|_| bad(format!("column {k}: not a number: {:?}", &rec[k])));
        let nf = header.len() - FEATURE_LEAD.len() - 1;
        let life = &rec[header.len() - 1];
        rows.push(FeatureRow {
            cell_id: rec[0].to_string(),
            group_id: rec[1].to_string(),
            condition: CyclingCondition::new(num(2)?, num(3)?, num(4)?),
            features: (0..nf).map(|k| num(FEATURE_LEAD.len() + k)).collect::<Result<_, _>>()?,
            observed_life: if life.is_empty() { None } else { Some(num(header.len() - 1)?) },
        });
    }
    Ok(rows)
}

pub fn features(common: &Common, dataset: &Path, out: &Path) -> Outcome {
    let cfg = loop_config(common)?;
    let ds = load_dataset(dataset)?;
    let feats = dataset_features(&ds, None, &cfg.bank_spec(), &cfg.abc, &BankCache::from_env())?;
    let mut w = csv_writer(out)?;
    w.write_record(feature_header()).map_err(Error::from)?;
    for r in &ds.records {
        let c = r.condition;
        let mut row = vec![r.cell_id.clone(), r.group_id.clone(), c.ambient_t.to_string(), c.c_chg.to_string(), c.c_dis.to_string()];
        row.extend(feats[&r.cell_id].to_vec().iter().map(|x| x.to_string()));
        row.push(r.observed_life.map(|l| l.efc().to_string()).unwrap_or_default());
        w.write_record(&row).map_err(Error::from)?;
    }
    w.flush().map_err(|e| Error::io(out, e))?;
    write_sidecar(out, &Reproducibility::of(cfg.seed, &cfg))
}

pub fn train_oracle(common: &Common, dataset: &Path, features: Option<&Path>, out: &Path) -> Outcome {
    let cfg = loop_config(common)?;
    let cells: Vec<HistoricalCell> = match features {
        Some(f) => read_features(f)?
            .into_iter()
            .map(|r| {
                let life = r
                    .observed_life
                    .ok_or_else(|| Error::InvalidInput(format!("cell {} has no observed life", r.cell_id)))?;
                Ok(HistoricalCell { cell_id: r.cell_id, condition: r.condition, features: r.features, life })
            })
            .collect::<std::result::Result<_, Error>>()?,
        None => historical_cells(&load_dataset(dataset)?, &cfg.bank_spec(), &cfg.abc, &BankCache::from_env())?,
    };
    let fit = fit_oracle(&cells, &cfg.oracle)?;
    let mut v = serde_json::to_value(&fit.model).map_err(Error::from)?;
    if let Value::Object(m) = &mut v {
        m.insert("cv".into(), serde_json::to_value(&fit.cv).map_err(Error::from)?);
    }
    write_with_stanza(out, &v, &Reproducibility::of(cfg.seed, &cfg))
}

pub fn predict(model: &Path, features: &Path, out: &Path) -> Outcome {
    let m = OracleModel::load(model)?;
    let rows = read_features(features)?;
    let mut w = csv_writer(out)?;
    w.write_record(["cell_id", "group_id", "predicted_life", "extrapolated"]).map_err(Error::from)?;
    for r in &rows {
        let life = m.predict_life(&r.features, &r.condition)?;
        let ext = !m.is_inside_hull(&r.condition);
        w.write_record([r.cell_id.clone(), r.group_id.clone(), life.to_string(), ext.to_string()]).map_err(Error::from)?;
    }
    w.flush().map_err(|e| Error::io(out, e))?;
    write_sidecar(out, &Reproducibility::new(0, config_hash(&m)))
}

pub fn run_loop(common: &Common, historical: &Path, test: &Path, out: &Path) -> Outcome {
    let cfg = loop_config(common)?;
    let h = load_dataset(historical)?;
    let t = load_dataset(test)?;
    let outcome = run_discovery_loop(&h, &t, &cfg, &BankCache::from_env())?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_text(&out.join("report.json"), &(outcome.report.to_json()? + "\n"))?;
    write_predictions_csv(&outcome.report, &out.join("predictions.csv"))?;
    write_with_stanza(&out.join("oracle.json"), &outcome.oracle.model, &outcome.report.reproducibility)
}

pub fn evaluate(predictions: &Path) -> Outcome {
    let rows = read_predictions_csv(predictions)?;
    let p: Vec<f64> = rows.iter().map(|r| r.predicted).collect();
    let o = rows
        .iter()
        .map(|r| r.observed.ok_or_else(|| Error::InvalidInput(format!("group {} has no observed life", r.group_id))))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let m = metric_set(&p, &o)?;
    let stanza = Reproducibility::new(0, config_hash(&(p.clone(), o.clone())));
    println!("{}", serde_json::json!({ "metrics": m, "reproducibility": stanza }));
    // Pearson is undefined on constant data; report that after the rest.
    discovery::metrics::pearson(&p, &o)?;
    Ok(())
}

pub fn cost(set: u8, config: Option<&Path>, paper_rounding: bool, table: bool) -> Outcome {
    let a: CostAssumptions<f64> = match (config, set) {
        (Some(p), _) => read_json(p)?,
        (None, 1) => CostAssumptions::set1(),
        (None, 2) => CostAssumptions::set2(),
        (None, s) => return Err(Failure::Usage(format!("unknown assumption set {s}"))),
    };
    let report = cost_report(&a, paper_rounding)?;
    if table {
        print!("{}", report.table());
    } else {
        let stanza = Reproducibility::of(0, &a);
        println!(
            "{}",
            serde_json::to_string_pretty(&serde_json::json!({ "assumptions": a, "report": report, "reproducibility": stanza }))
                .map_err(Error::from)?
        );
    }
    Ok(())
}
