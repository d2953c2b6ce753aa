//! Zero-shot life prediction: per-condition elastic nets on physics features,
//! and a meta-predictor that maps the cycling condition to their coefficients.

mod elastic_net;
mod svr;

pub use elastic_net::{enet_objective, fit_base, fit_base_with, kkt_violation, BaseWeights, EnetOptions};
pub use svr::{fit_svr, rbf, solve_dual, SvrConfig, SvrModel, SvrSolution};

use std::cmp::Ordering;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cellsim::CyclingCondition;
use crate::error::{Error, Result};
use crate::stats::{mean, std_dev, Standardizer};

pub const ORACLE_VERSION: u32 = 1;

/// A labelled training cell from the historical corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoricalCell {
    pub cell_id: String,
    pub condition: CyclingCondition,
    pub features: Vec<f64>,
    pub life: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCluster {
    pub cluster_id: String,
    pub representative: CyclingCondition,
    pub members: Vec<String>,
}

/// Groups cells by exact condition and folds undersized groups into their
/// nearest neighbour in standardized condition space.
pub fn cluster_conditions(historical: &[HistoricalCell], min_cluster_size: usize) -> Result<Vec<ConditionCluster>> {
    let mut groups: Vec<(CyclingCondition, Vec<String>)> = Vec::new();
    for c in historical {
        c.condition.validate()?;
        match groups.iter_mut().find(|(k, _)| k.as_array() == c.condition.as_array()) {
            Some((_, m)) => m.push(c.cell_id.clone()),
            None => groups.push((c.condition, vec![c.cell_id.clone()])),
        }
    }
    if groups.len() < 2 {
        return Err(Error::SingleCondition);
    }
    groups.sort_by(|a, b| a.0.lex_cmp(&b.0));
    let rows: Vec<Vec<f64>> = historical.iter().map(|c| c.condition.as_array().to_vec()).collect();
    let cs = Standardizer::fit(&rows)?;
    let z = |c: &CyclingCondition| -> [f64; 3] {
        let v = cs.transform_lenient(&c.as_array());
        [v[0], v[1], v[2]]
    };
    // Smallest undersized group first; lexicographic order breaks ties.
    while let Some(small) =
        (0..groups.len()).filter(|&k| groups[k].1.len() < min_cluster_size).min_by_key(|&k| (groups[k].1.len(), k))
    {
        if groups.len() < 2 {
            break;
        }
        let reps: Vec<[f64; 3]> = groups.iter().map(|g| z(&g.0)).collect();
        let dist = |k: usize| reps[small].iter().zip(&reps[k]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let target = (0..groups.len())
            .filter(|&k| k != small)
            .min_by(|&a, &b| {
                dist(a)
                    .partial_cmp(&dist(b))
                    .unwrap_or(Ordering::Equal)
                    .then_with(|| groups[a].0.ambient_t.total_cmp(&groups[b].0.ambient_t))
                    .then_with(|| groups[a].0.c_chg.total_cmp(&groups[b].0.c_chg))
                    .then(a.cmp(&b))
            })
            .expect("at least two groups");
        let (_, members) = groups.remove(small);
        let target = if target > small { target - 1 } else { target };
        groups[target].1.extend(members);
    }
    Ok(groups
        .into_iter()
        .enumerate()
        .map(|(k, (representative, members))| ConditionCluster { cluster_id: format!("c{k:02}"), representative, members })
        .collect())
}

/// Elastic-net penalties and the SVR settings of the meta-predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleHyper {
    pub l1: f64,
    pub l2: f64,
    pub svr: SvrConfig,
}

/// Cross-validation grid. `l1_scale` is multiplied by the standard deviation
/// of the training lives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleGrid {
    pub l1_scale: Vec<f64>,
    pub l2: Vec<f64>,
    pub width: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub c: Vec<f64>,
}

impl Default for OracleGrid {
    fn default() -> Self {
        Self {
            l1_scale: vec![0.003, 0.01, 0.03, 0.1, 0.3],
            l2: vec![0.01, 0.1, 1.0],
            width: vec![0.7, 1.5, 3.0],
            epsilon: vec![0.05],
            c: vec![1.0, 10.0, 100.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub min_cluster_size: usize,
    pub grid: OracleGrid,
    pub enet: EnetOptions,
    /// Cells failing this filter are dropped before training.
    pub filter: CellFilter,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { min_cluster_size: 4, grid: OracleGrid::default(), enet: EnetOptions::default(), filter: CellFilter::default() }
    }
}

/// Training-data filter. The defaults keep every finite record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellFilter {
    pub min_life: f64,
    /// No upper bound when `None`.
    pub max_life: Option<f64>,
}

impl Default for CellFilter {
    fn default() -> Self {
        Self { min_life: 0.0, max_life: None }
    }
}

impl CellFilter {
    pub fn keep(&self, c: &HistoricalCell) -> bool {
        c.life.is_finite() && c.life > self.min_life && self.max_life.is_none_or(|m| c.life <= m) && c.features.iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleModel {
    pub version: u32,
    pub hyper: OracleHyper,
    pub clusters: Vec<ConditionCluster>,
    pub cluster_weights: Vec<BaseWeights<f64>>,
    pub feature_standardization: Standardizer<f64>,
    pub condition_standardization: Standardizer<f64>,
    /// Per-coefficient (mean, sd) across clusters; meta-models regress z-scores.
    pub target_standardization: Standardizer<f64>,
    /// 28 feature weights then the bias.
    pub meta: Vec<SvrModel<f64>>,
    pub condition_min: [f64; 3],
    pub condition_max: [f64; 3],
}

/// Meta-predicted weights and whether the condition left the training box.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightPrediction {
    pub weights: BaseWeights<f64>,
    pub extrapolated: bool,
}

fn cell_lookup<'a>(historical: &'a [HistoricalCell], cluster: &ConditionCluster) -> Result<Vec<&'a HistoricalCell>> {
    cluster
        .members
        .iter()
        .map(|id| {
            historical
                .iter()
                .find(|c| &c.cell_id == id)
                .ok_or_else(|| Error::InvalidInput(format!("cluster member {id} not in corpus")))
        })
        .collect()
}

/// Fits one elastic net per cluster under a shared feature standardization.
pub fn fit_cluster_weights(
    historical: &[HistoricalCell],
    clusters: &[ConditionCluster],
    standardization: &Standardizer<f64>,
    l1: f64,
    l2: f64,
    opts: &EnetOptions,
) -> Result<Vec<BaseWeights<f64>>> {
    clusters
        .iter()
        .map(|cl| {
            let cells = cell_lookup(historical, cl)?;
            let x: Vec<Vec<f64>> = cells.iter().map(|c| c.features.clone()).collect();
            let y: Vec<f64> = cells.iter().map(|c| c.life).collect();
            fit_base_with(standardization, &x, &y, l1, l2, opts)
        })
        .collect()
}

/// Fits the 29 meta-models, one per coefficient.
pub fn fit_meta(
    clusters: &[ConditionCluster],
    per_cluster_weights: &[BaseWeights<f64>],
    svr: &SvrConfig,
) -> Result<OracleModel> {
    if clusters.len() < 2 {
        return Err(Error::SingleCondition);
    }
    if clusters.len() != per_cluster_weights.len() {
        return Err(Error::LengthMismatch(clusters.len(), per_cluster_weights.len()));
    }
    svr.validate()?;
    let feature_standardization = per_cluster_weights[0].standardization.clone();
    let reps: Vec<Vec<f64>> = clusters.iter().map(|c| c.representative.as_array().to_vec()).collect();
    let condition_standardization = Standardizer::fit(&reps)?;
    let xs: Vec<Vec<f64>> = reps.iter().map(|r| condition_standardization.transform_lenient(r)).collect();
    let targets: Vec<Vec<f64>> = per_cluster_weights
        .iter()
        .map(|w| w.weights.iter().copied().chain(std::iter::once(w.bias)).collect())
        .collect();
    let target_standardization = Standardizer::fit(&targets)?;
    let dim = targets[0].len();
    let meta = (0..dim)
        .into_par_iter()
        .map(|j| {
            let z: Vec<f64> = targets.iter().map(|t| target_standardization.transform_lenient(t)[j]).collect();
            fit_svr(&xs, &z, svr)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut condition_min = [f64::INFINITY; 3];
    let mut condition_max = [f64::NEG_INFINITY; 3];
    for r in &reps {
        for k in 0..3 {
            condition_min[k] = condition_min[k].min(r[k]);
            condition_max[k] = condition_max[k].max(r[k]);
        }
    }
    Ok(OracleModel {
        version: ORACLE_VERSION,
        hyper: OracleHyper { l1: f64::NAN, l2: f64::NAN, svr: *svr },
        clusters: clusters.to_vec(),
        cluster_weights: per_cluster_weights.to_vec(),
        feature_standardization,
        condition_standardization,
        target_standardization,
        meta,
        condition_min,
        condition_max,
    })
}

impl OracleModel {
    pub fn feature_count(&self) -> usize {
        self.feature_standardization.dim()
    }

    pub fn is_inside_hull(&self, condition: &CyclingCondition) -> bool {
        let a = condition.as_array();
        (0..3).all(|k| a[k] >= self.condition_min[k] - 1e-12 && a[k] <= self.condition_max[k] + 1e-12)
    }

    pub fn predict_weights(&self, condition: &CyclingCondition) -> WeightPrediction {
        let x = self.condition_standardization.transform_lenient(&condition.as_array());
        let z: Vec<f64> = self.meta.iter().map(|m| m.predict(&x)).collect();
        let coef = self.target_standardization.inverse(&z);
        let p = self.feature_count();
        WeightPrediction {
            weights: BaseWeights {
                weights: coef[..p].to_vec(),
                bias: coef[p],
                standardization: self.feature_standardization.clone(),
            },
            extrapolated: !self.is_inside_hull(condition),
        }
    }

    /// Life in cycles, floored at one.
    pub fn predict_life(&self, features: &[f64], condition: &CyclingCondition) -> Result<f64> {
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite feature".into()));
        }
        let w = self.predict_weights(condition).weights;
        Ok(w.raw_predict(features)?.max(1.0))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        if m.version != ORACLE_VERSION {
            return Err(Error::SchemaVersion { path: "<oracle>".into(), found: m.version, expected: ORACLE_VERSION });
        }
        if m.meta.len() != m.feature_count() + 1 || m.cluster_weights.len() != m.clusters.len() {
            return Err(Error::InvalidInput("oracle model is inconsistent".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        Self::from_json(&s).map_err(|e| match e {
            Error::SchemaVersion { found, expected, .. } => Error::SchemaVersion { path: path.to_path_buf(), found, expected },
            other => other,
        })
    }
}

/// Fits the complete oracle at fixed hyperparameters.
pub fn fit_oracle_with(historical: &[HistoricalCell], hyper: &OracleHyper, cfg: &OracleConfig) -> Result<OracleModel> {
    let cells: Vec<HistoricalCell> = historical.iter().filter(|c| cfg.filter.keep(c)).cloned().collect();
    let clusters = cluster_conditions(&cells, cfg.min_cluster_size)?;
    let rows: Vec<Vec<f64>> = cells.iter().map(|c| c.features.clone()).collect();
    let fs = Standardizer::fit(&rows)?;
    let weights = fit_cluster_weights(&cells, &clusters, &fs, hyper.l1, hyper.l2, &cfg.enet)?;
    let mut model = fit_meta(&clusters, &weights, &hyper.svr)?;
    model.hyper = *hyper;
    Ok(model)
}

/// Cross-validation score of one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvScore {
    pub hyper: OracleHyper,
    /// Mean absolute percentage error over held-out cells.
    pub mape: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleFit {
    pub model: OracleModel,
    pub cv: Vec<CvScore>,
}

/// Selects hyperparameters by leave-one-cluster-out cross-validation, then
/// refits on the whole corpus. Grid order breaks ties.
pub fn fit_oracle(historical: &[HistoricalCell], cfg: &OracleConfig) -> Result<OracleFit> {
    let cells: Vec<HistoricalCell> = historical.iter().filter(|c| cfg.filter.keep(c)).cloned().collect();
    let clusters = cluster_conditions(&cells, cfg.min_cluster_size)?;
    if clusters.len() < 2 {
        return Err(Error::SingleCondition);
    }
    let life_sd = std_dev(&cells.iter().map(|c| c.life).collect::<Vec<_>>());
    if !(life_sd > 0.0) {
        return Err(Error::DegenerateData("historical lives have zero variance".into()));
    }
    let g = &cfg.grid;
    let mut svrs = Vec::new();
    for &width in &g.width {
        for &epsilon in &g.epsilon {
            for &c in &g.c {
                svrs.push(SvrConfig { width, epsilon, c, ..SvrConfig::default() });
            }
        }
    }
    let mut penalties = Vec::new();
    for &s in &g.l1_scale {
        for &l2 in &g.l2 {
            penalties.push((s * life_sd, l2));
        }
    }
    if svrs.is_empty() || penalties.is_empty() {
        return Err(Error::InvalidInput("empty hyperparameter grid".into()));
    }

    // Held-out folds need at least two remaining clusters for the meta-fit.
    let folds: Vec<usize> = if clusters.len() >= 3 { (0..clusters.len()).collect() } else { Vec::new() };
    let mut errors = vec![vec![0.0; svrs.len()]; penalties.len()];
    let mut counts = 0usize;
    for &k in &folds {
        let train: Vec<ConditionCluster> = clusters.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, c)| c.clone()).collect();
        let train_cells: Vec<HistoricalCell> =
            cells.iter().filter(|c| !clusters[k].members.contains(&c.cell_id)).cloned().collect();
        let held: Vec<&HistoricalCell> = cell_lookup(&cells, &clusters[k])?;
        let rows: Vec<Vec<f64>> = train_cells.iter().map(|c| c.features.clone()).collect();
        let fs = Standardizer::fit(&rows)?;
        let fold: Vec<Vec<f64>> = penalties
            .par_iter()
            .map(|&(l1, l2)| -> Result<Vec<f64>> {
                let weights = fit_cluster_weights(&train_cells, &train, &fs, l1, l2, &cfg.enet)?;
                svrs.iter()
                    .map(|svr| {
                        let m = fit_meta(&train, &weights, svr)?;
                        let mut err = 0.0;
                        for c in &held {
                            let w = m.predict_weights(&c.condition).weights;
                            let z = fs.transform_lenient(&c.features);
                            let pred = (z.iter().zip(&w.weights).map(|(a, b)| a * b).sum::<f64>() + w.bias).max(1.0);
                            err += ((pred - c.life) / c.life).abs();
                        }
                        Ok(err)
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        for (e, f) in errors.iter_mut().zip(fold) {
            for (a, b) in e.iter_mut().zip(f) {
                *a += b;
            }
        }
        counts += held.len();
    }
    let mut cv = Vec::new();
    let mut best = (f64::INFINITY, 0, 0);
    for (a, &(l1, l2)) in penalties.iter().enumerate() {
        for (b, svr) in svrs.iter().enumerate() {
            let mape = if counts > 0 { 100.0 * errors[a][b] / counts as f64 } else { f64::NAN };
            cv.push(CvScore { hyper: OracleHyper { l1, l2, svr: *svr }, mape });
            if mape < best.0 {
                best = (mape, a, b);
            }
        }
    }
    let hyper = OracleHyper { l1: penalties[best.1].0, l2: penalties[best.1].1, svr: svrs[best.2] };
    let model = fit_oracle_with(&cells, &hyper, cfg)?;
    Ok(OracleFit { model, cv })
}

/// Mean life of the training corpus; the trivial zero-shot baseline.
pub fn global_mean_life(historical: &[HistoricalCell]) -> f64 {
    mean(&historical.iter().map(|c| c.life).collect::<Vec<_>>())
}
