use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cellsim::CyclingCondition;
use crate::error::{Error, Result};
use crate::learner::{AuditEntry, CellGroup, GpHyper};
use crate::metrics::{mape, pearson, rmse};
use crate::oracle::OracleHyper;
use crate::stats::mean;

pub const REPORT_VERSION: u32 = 1;

/// Seed, configuration hash and crate version of the run that wrote a file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reproducibility {
    pub seed: u64,
    pub config_hash: String,
    pub version: String,
}

impl Reproducibility {
    pub fn new(seed: u64, config_hash: String) -> Self {
        Self { seed, config_hash, version: env!("CARGO_PKG_VERSION").to_string() }
    }

    pub fn of<C: Serialize>(seed: u64, config: &C) -> Self {
        Self::new(seed, config_hash(config))
    }
}

/// SHA-256 of the compact JSON form, hex encoded.
pub fn config_hash<C: Serialize>(config: &C) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(json))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    /// Labelled by the oracle.
    Selected,
    /// Inferred by the learner.
    Remaining,
}

impl Subset {
    pub fn as_str(&self) -> &'static str {
        match self {
            Subset::Selected => "selected",
            Subset::Remaining => "remaining",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIterations,
    StdBelowThreshold,
    /// Every group was already queried.
    Exhausted,
    /// No group exceeded the upper quartile.
    NoQuery,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupPrediction {
    pub group_id: String,
    pub cell_type: String,
    pub condition: CyclingCondition,
    pub members: usize,
    pub subset: Subset,
    pub predicted: f64,
    /// Condition-only GP trained on the historical corpus.
    pub baseline: f64,
    /// Mean observed member life; evaluation only.
    pub observed: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub n: usize,
    pub mape: f64,
    pub rmse: f64,
    /// `None` when either side has zero variance or `n < 2`.
    pub pearson: Option<f64>,
}

/// MAPE and RMSE, with Pearson where it is defined.
pub fn metric_set(predicted: &[f64], observed: &[f64]) -> Result<MetricSet> {
    Ok(MetricSet {
        n: predicted.len(),
        mape: mape(predicted, observed)?,
        rmse: rmse(predicted, observed)?,
        pearson: pearson(predicted, observed).ok(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopMetrics {
    pub overall: MetricSet,
    pub selected: Option<MetricSet>,
    pub remaining: Option<MetricSet>,
    /// Oracle predictions for cells of queried groups, group predictions otherwise.
    pub cells: MetricSet,
    pub baseline: MetricSet,
    /// Relative MAPE reduction against the baseline.
    pub improvement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub hyper: OracleHyper,
    /// Best leave-one-cluster-out MAPE, if cross-validation ran.
    pub cv_mape: Option<f64>,
    /// Test groups outside the historical condition box.
    pub extrapolated_groups: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopReport {
    pub version: u32,
    pub reproducibility: Reproducibility,
    /// In query order.
    pub selected: Vec<String>,
    pub remaining: Vec<String>,
    /// In dataset order.
    pub groups: Vec<GroupPrediction>,
    pub cell_predictions: BTreeMap<String, f64>,
    pub oracle: OracleSummary,
    pub gp_hyper: Option<GpHyper<f64>>,
    pub stop_reason: StopReason,
    pub audit: Vec<AuditEntry>,
    pub metrics: Option<LoopMetrics>,
}

fn subset_metrics(groups: &[GroupPrediction], keep: impl Fn(&GroupPrediction) -> bool) -> Result<Option<MetricSet>> {
    let rows: Vec<&GroupPrediction> = groups.iter().filter(|g| keep(g)).collect();
    if rows.is_empty() {
        return Ok(None);
    }
    let p: Vec<f64> = rows.iter().map(|g| g.predicted).collect();
    let o = rows
        .iter()
        .map(|g| g.observed.ok_or_else(|| Error::InvalidInput(format!("group {} has no observed life", g.group_id))))
        .collect::<Result<Vec<_>>>()?;
    metric_set(&p, &o).map(Some)
}

impl LoopReport {
    /// Recomputes every metric from the stored predictions.
    pub fn recompute_metrics(&self, cell_lives: &BTreeMap<String, f64>, groups: &[CellGroup]) -> Result<LoopMetrics> {
        let overall = subset_metrics(&self.groups, |_| true)?.ok_or_else(|| Error::InvalidInput("empty report".into()))?;
        let selected = subset_metrics(&self.groups, |g| g.subset == Subset::Selected)?;
        let remaining = subset_metrics(&self.groups, |g| g.subset == Subset::Remaining)?;
        let base_p: Vec<f64> = self.groups.iter().map(|g| g.baseline).collect();
        let base_o: Vec<f64> = self.groups.iter().map(|g| g.observed.unwrap_or(f64::NAN)).collect();
        let baseline = metric_set(&base_p, &base_o)?;
        let group_pred: BTreeMap<&str, f64> = self.groups.iter().map(|g| (g.group_id.as_str(), g.predicted)).collect();
        let (mut p, mut o) = (Vec::new(), Vec::new());
        for g in groups {
            for id in &g.members {
                let life = cell_lives
                    .get(id)
                    .ok_or_else(|| Error::MissingMember { group: g.group_id.clone(), cell: id.clone() })?;
                p.push(self.cell_predictions.get(id).copied().unwrap_or(group_pred[g.group_id.as_str()]));
                o.push(*life);
            }
        }
        let cells = metric_set(&p, &o)?;
        Ok(LoopMetrics { overall, selected, remaining, cells, baseline, improvement: 1.0 - overall.mape / baseline.mape })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(s)?;
        let found = raw.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != REPORT_VERSION {
            return Err(Error::SchemaVersion { path: "report".into(), found, expected: REPORT_VERSION });
        }
        Ok(serde_json::from_value(raw)?)
    }
}

/// Fills `observed` and computes the report metrics.
pub(super) fn attach_observed(
    predictions: &mut [GroupPrediction],
    groups: &[CellGroup],
    cell_predictions: &BTreeMap<String, f64>,
    lives: &BTreeMap<String, f64>,
) -> Result<LoopMetrics> {
    for (p, g) in predictions.iter_mut().zip(groups) {
        let members = g
            .members
            .iter()
            .map(|id| lives.get(id).copied().ok_or_else(|| Error::MissingMember { group: g.group_id.clone(), cell: id.clone() }))
            .collect::<Result<Vec<f64>>>()?;
        p.observed = Some(mean(&members));
    }
    let stub = LoopReport {
        version: REPORT_VERSION,
        reproducibility: Reproducibility::new(0, String::new()),
        selected: Vec::new(),
        remaining: Vec::new(),
        groups: predictions.to_vec(),
        cell_predictions: cell_predictions.clone(),
        oracle: OracleSummary {
            hyper: OracleHyper { l1: 0.0, l2: 0.0, svr: Default::default() },
            cv_mape: None,
            extrapolated_groups: Vec::new(),
        },
        gp_hyper: None,
        stop_reason: StopReason::MaxIterations,
        audit: Vec::new(),
        metrics: None,
    };
    stub.recompute_metrics(lives, groups)
}

/// One line of the predictions CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub group_id: String,
    pub predicted: f64,
    pub observed: Option<f64>,
    pub subset: Subset,
}

pub fn write_predictions_csv(report: &LoopReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    for g in &report.groups {
        w.serialize(PredictionRow {
            group_id: g.group_id.clone(),
            predicted: g.predicted,
            observed: g.observed,
            subset: g.subset,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions_csv(path: &Path) -> Result<Vec<PredictionRow>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<PredictionRow>, _>>()?;
    Ok(rows)
}

/// Strict metrics over paired rows: every row needs an observation and
/// Pearson failures are errors.
pub fn evaluate_predictions(rows: &[PredictionRow]) -> Result<MetricSet> {
    let p: Vec<f64> = rows.iter().map(|r| r.predicted).collect();
    let o = rows
        .iter()
        .map(|r| r.observed.ok_or_else(|| Error::InvalidInput(format!("group {} has no observed life", r.group_id))))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricSet { n: p.len(), mape: mape(&p, &o)?, rmse: rmse(&p, &o)?, pearson: Some(pearson(&p, &o)?) })
}
