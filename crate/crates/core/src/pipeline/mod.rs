//! The closed discovery loop: Interpreter features, Oracle pseudo-labels on
//! queried groups, and the Learner's queries and secondary inference.

mod features;
mod report;

pub use features::{cell_features, dataset_features, historical_cells};
pub use report::{
    config_hash, evaluate_predictions, metric_set, read_predictions_csv, write_predictions_csv, GroupPrediction, LoopMetrics,
    LoopReport, MetricSet, OracleSummary, PredictionRow, Reproducibility, StopReason, Subset, REPORT_VERSION,
};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::interpreter::{AbcConfig, BankCache, BankSpec, Checkup, PriorConfig};
use crate::learner::{
    fit_gp, secondary_inference, supervised_query, unsupervised_query, AuditEntry, CellGroup, Criterion, GpConfig,
    GpModel, Pick,
};
use crate::oracle::{fit_oracle, HistoricalCell, OracleConfig, OracleFit};
use crate::stats::mean;

/// When the supervised rounds end. `supervised_rounds` caps both rules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StopRule {
    MaxIterations,
    /// Stop once no unqueried group has a predictive std above `cycles`.
    StdThreshold { cycles: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    /// Per-type fraction of groups the unsupervised query may take.
    pub budget_cap: f64,
    pub supervised_rounds: usize,
    pub stop: StopRule,
    /// Seeds the simulation banks.
    pub seed: u64,
    pub bank_samples: usize,
    pub prior: PriorConfig,
    pub abc: AbcConfig,
    pub checkup: Checkup,
    pub oracle: OracleConfig,
    pub gp: GpConfig,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            budget_cap: 0.7,
            supervised_rounds: 1,
            stop: StopRule::MaxIterations,
            seed: 0,
            bank_samples: 50_000,
            prior: PriorConfig::default(),
            abc: AbcConfig::default(),
            checkup: Checkup::default(),
            oracle: OracleConfig::default(),
            gp: GpConfig::default(),
        }
    }
}

impl LoopConfig {
    /// 5000-sample banks; the quantile is raised to keep 200 acceptances.
    pub fn reduced() -> Self {
        Self { bank_samples: 5000, abc: AbcConfig { quantile: 0.04, ..AbcConfig::default() }, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.budget_cap > 0.0 && self.budget_cap <= 1.0) {
            return Err(Error::InvalidInput(format!("budget cap {} outside (0, 1]", self.budget_cap)));
        }
        if let StopRule::StdThreshold { cycles } = self.stop {
            if !(cycles >= 0.0) {
                return Err(Error::InvalidInput(format!("std threshold {cycles} must be non-negative")));
            }
        }
        if self.bank_samples == 0 {
            return Err(Error::InvalidInput("bank needs at least one sample".into()));
        }
        self.prior.validate()?;
        self.abc.validate()
    }

    pub fn bank_spec(&self) -> BankSpec {
        BankSpec { prior: self.prior.clone(), checkup: self.checkup, samples: self.bank_samples, seed: self.seed }
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

/// Mean member prediction per group.
pub fn group_aggregate(cell_predictions: &BTreeMap<String, f64>, groups: &[CellGroup]) -> Result<BTreeMap<String, f64>> {
    groups
        .iter()
        .map(|g| {
            let values = g
                .members
                .iter()
                .map(|id| {
                    cell_predictions
                        .get(id)
                        .copied()
                        .ok_or_else(|| Error::MissingMember { group: g.group_id.clone(), cell: id.clone() })
                })
                .collect::<Result<Vec<f64>>>()?;
            if values.is_empty() {
                return Err(Error::InvalidInput(format!("group {} has no members", g.group_id)));
            }
            Ok((g.group_id.clone(), mean(&values)))
        })
        .collect()
}

/// Observed lives held apart from the loop. Reading them flips a flag so
/// the loop can assert that nothing before the metrics step looked.
#[derive(Debug)]
pub struct SealedLabels {
    lives: BTreeMap<String, f64>,
    opened: std::cell::Cell<bool>,
}

impl SealedLabels {
    /// Takes the labels off `test`, which is left unlabelled.
    pub fn seal(test: &mut Dataset) -> Self {
        let lives = test.records.iter_mut().filter_map(|r| r.observed_life.take().map(|l| (r.cell_id.clone(), l.efc()))).collect();
        Self { lives, opened: std::cell::Cell::new(false) }
    }

    pub fn is_empty(&self) -> bool {
        self.lives.is_empty()
    }

    pub fn was_opened(&self) -> bool {
        self.opened.get()
    }

    fn open(&self) -> &BTreeMap<String, f64> {
        self.opened.set(true);
        &self.lives
    }
}

/// Everything a run produced: the report plus the fitted oracle.
#[derive(Debug, Clone)]
pub struct LoopOutcome {
    pub report: LoopReport,
    pub oracle: OracleFit,
}

/// Runs the loop end to end: historical features, oracle training, then
/// [`run_with_oracle`].
pub fn run_discovery_loop(historical: &Dataset, test: &Dataset, cfg: &LoopConfig, cache: &BankCache) -> Result<LoopOutcome> {
    cfg.validate()?;
    let cells = historical_cells(historical, &cfg.bank_spec(), &cfg.abc, cache)?;
    let oracle = fit_oracle(&cells, &cfg.oracle)?;
    let report = run_with_oracle(&oracle, &cells, test, cfg, cache)?;
    Ok(LoopOutcome { report, oracle })
}

fn oracle_labels(
    oracle: &OracleFit,
    test: &Dataset,
    groups: &[&CellGroup],
    cfg: &LoopConfig,
    cache: &BankCache,
) -> Result<BTreeMap<String, f64>> {
    let ids: BTreeSet<String> = groups.iter().flat_map(|g| g.members.iter().cloned()).collect();
    let feats = dataset_features(test, Some(&ids), &cfg.bank_spec(), &cfg.abc, cache)?;
    let by_id: BTreeMap<&str, &crate::dataio::CellRecord> = test.records.iter().map(|r| (r.cell_id.as_str(), r)).collect();
    feats
        .iter()
        .map(|(id, f)| {
            let r = by_id[id.as_str()];
            Ok((id.clone(), oracle.model.predict_life(&f.to_vec(), &r.condition)?))
        })
        .collect()
}

/// The loop with a trained oracle. `historical` feeds only the
/// condition-only baseline. Labels on `test` are sealed before any step
/// runs and opened once, for metrics.
pub fn run_with_oracle(
    oracle: &OracleFit,
    historical: &[HistoricalCell],
    test: &Dataset,
    cfg: &LoopConfig,
    cache: &BankCache,
) -> Result<LoopReport> {
    cfg.validate()?;
    let mut test = test.clone();
    let labels = SealedLabels::seal(&mut test);
    let groups = test.groups()?;
    let by_id: BTreeMap<&str, &CellGroup> = groups.iter().map(|g| (g.group_id.as_str(), g)).collect();

    // (1) rule-based query
    let picks = unsupervised_query(&groups, cfg.budget_cap)?;
    let mut order: Vec<String> = picks.iter().map(|p| p.group_id.clone()).collect();
    let mut audit = vec![AuditEntry { iteration: 0, picks, stds: None, q3: None }];

    // (2) oracle pseudo-labels
    let chosen: Vec<&CellGroup> = order.iter().map(|id| by_id[id.as_str()]).collect();
    let mut cell_predictions = oracle_labels(oracle, &test, &chosen, cfg, cache)?;
    let owned: Vec<CellGroup> = chosen.iter().map(|g| (*g).clone()).collect();
    let mut pseudo = group_aggregate(&cell_predictions, &owned)?;

    let fit = |order: &[String], pseudo: &BTreeMap<String, f64>| -> Result<Option<GpModel>> {
        if order.len() < 3 {
            return Ok(None);
        }
        let conds: Vec<_> = order.iter().map(|id| by_id[id.as_str()].condition).collect();
        let ys: Vec<f64> = order.iter().map(|id| pseudo[id]).collect();
        fit_gp(&conds, &ys, &cfg.gp).map(Some)
    };
    // (3) learner
    let mut gp = fit(&order, &pseudo)?;

    // (4) uncertainty rounds
    let mut stop_reason = StopReason::MaxIterations;
    for round in 1..=cfg.supervised_rounds {
        let selected: BTreeSet<&str> = order.iter().map(|s| s.as_str()).collect();
        let unselected: Vec<CellGroup> = groups.iter().filter(|g| !selected.contains(g.group_id.as_str())).cloned().collect();
        if unselected.is_empty() {
            stop_reason = StopReason::Exhausted;
            break;
        }
        let Some(model) = &gp else {
            return Err(Error::InvalidInput(format!("the learner needs at least 3 queried groups, got {}", order.len())));
        };
        let q = supervised_query(model, &unselected);
        let max_std = q.stds.values().copied().fold(0.0, f64::max);
        let below = matches!(cfg.stop, StopRule::StdThreshold { cycles } if max_std <= cycles);
        let new: Vec<Pick> = if below {
            Vec::new()
        } else {
            q.selected.iter().map(|id| Pick { group_id: id.clone(), criterion: Criterion::Uncertainty }).collect()
        };
        audit.push(AuditEntry { iteration: round, picks: new.clone(), stds: Some(q.stds.clone()), q3: Some(q.q3) });
        if below {
            stop_reason = StopReason::StdBelowThreshold;
            break;
        }
        if new.is_empty() {
            stop_reason = StopReason::NoQuery;
            break;
        }
        let added: Vec<&CellGroup> = new.iter().map(|p| by_id[p.group_id.as_str()]).collect();
        cell_predictions.extend(oracle_labels(oracle, &test, &added, cfg, cache)?);
        let owned: Vec<CellGroup> = added.iter().map(|g| (*g).clone()).collect();
        pseudo.extend(group_aggregate(&cell_predictions, &owned)?);
        order.extend(new.into_iter().map(|p| p.group_id));
        gp = fit(&order, &pseudo)?;
    }

    // (5) secondary inference
    let selected: BTreeSet<&str> = order.iter().map(|s| s.as_str()).collect();
    let rest: Vec<CellGroup> = groups.iter().filter(|g| !selected.contains(g.group_id.as_str())).cloned().collect();
    let secondary = match (&gp, rest.is_empty()) {
        (_, true) => BTreeMap::new(),
        (Some(m), false) => secondary_inference(m, &rest),
        (None, false) => {
            return Err(Error::InvalidInput(format!("the learner needs at least 3 queried groups, got {}", order.len())))
        }
    };

    let baseline = baseline_predictions(historical, &groups, &cfg.gp)?;
    let mut predictions = Vec::with_capacity(groups.len());
    for g in &groups {
        let (subset, predicted) = match pseudo.get(&g.group_id) {
            Some(&p) => (Subset::Selected, p),
            None => (Subset::Remaining, secondary[&g.group_id]),
        };
        predictions.push(GroupPrediction {
            group_id: g.group_id.clone(),
            cell_type: g.cell_type.clone(),
            condition: g.condition,
            members: g.members.len(),
            subset,
            predicted,
            baseline: baseline[&g.group_id],
            observed: None,
        });
    }
    let extrapolated = groups
        .iter()
        .filter(|g| !oracle.model.is_inside_hull(&g.condition))
        .map(|g| g.group_id.clone())
        .collect();
    let cv_mape = oracle.cv.iter().map(|c| c.mape).filter(|m| m.is_finite()).fold(None, |a: Option<f64>, m| {
        Some(a.map_or(m, |a| a.min(m)))
    });

    // Nothing above may have read the labels.
    assert!(!labels.was_opened(), "observed labels were read before the metrics step");
    let metrics = if labels.is_empty() {
        None
    } else {
        let lives = labels.open();
        Some(report::attach_observed(&mut predictions, &groups, &cell_predictions, lives)?)
    };

    Ok(LoopReport {
        version: REPORT_VERSION,
        reproducibility: Reproducibility::new(cfg.seed, cfg.hash()),
        remaining: rest.iter().map(|g| g.group_id.clone()).collect(),
        selected: order,
        groups: predictions,
        cell_predictions,
        oracle: OracleSummary { hyper: oracle.model.hyper, cv_mape, extrapolated_groups: extrapolated },
        gp_hyper: gp.map(|m| m.hyper().clone()),
        stop_reason,
        audit,
        metrics,
    })
}

/// Condition-only GP trained on historical lives; sees no test data.
pub fn baseline_predictions(
    historical: &[HistoricalCell],
    groups: &[CellGroup],
    cfg: &GpConfig,
) -> Result<BTreeMap<String, f64>> {
    let conds: Vec<_> = historical.iter().map(|c| c.condition).collect();
    let lives: Vec<f64> = historical.iter().map(|c| c.life).collect();
    let model = fit_gp(&conds, &lives, cfg)?;
    Ok(groups.iter().map(|g| (g.group_id.clone(), model.predict_with_std(&g.condition).0.max(1.0))).collect())
}
