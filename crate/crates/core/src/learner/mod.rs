//! Active learning over cell groups: budgeted unsupervised selection, GP
//! uncertainty queries, and secondary inference on unqueried groups.

mod gp;

pub use gp::{fit_gp_ml, optimize_from, Gp, GpConfig, GpHyper, GP_STARTS};

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::cellsim::{CyclingCondition, Protocol};
use crate::error::{Error, Result};
use crate::stats::{mean, median, quantile_linear, std_dev, Standardizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellGroup {
    pub group_id: String,
    pub cell_type: String,
    pub members: Vec<String>,
    pub condition: CyclingCondition,
    pub protocol: Protocol,
}

impl CellGroup {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.condition.lex_cmp(&other.condition).then_with(|| self.group_id.cmp(&other.group_id))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    TemperatureBoundary,
    TemperatureDiversity,
    CrateSpread,
    Uncertainty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pick {
    pub group_id: String,
    pub criterion: Criterion,
}

/// Groups a type may contribute to the unsupervised query.
pub fn type_budget(type_size: usize, cap: f64) -> usize {
    let b = ((cap * type_size as f64) + 1e-9).floor() as usize;
    // Two-group types contribute one group unless everything is queried.
    let b = if type_size == 2 && cap < 1.0 { 1 } else { b };
    b.clamp(1, type_size)
}

fn spread_choice<'a>(
    candidates: &[&'a CellGroup],
    chosen: &[&CellGroup],
    dist: impl Fn(&CellGroup, &CellGroup) -> (f64, f64),
) -> Option<&'a CellGroup> {
    candidates.iter().copied().max_by(|a, b| {
        let score = |g: &CellGroup| {
            chosen.iter().map(|c| dist(g, c)).fold((f64::INFINITY, f64::INFINITY), |acc, d| {
                if d.0 < acc.0 || (d.0 == acc.0 && d.1 < acc.1) { d } else { acc }
            })
        };
        let (sa, sb) = (score(a), score(b));
        sa.0.total_cmp(&sb.0).then(sa.1.total_cmp(&sb.1)).then_with(|| b.key_cmp(a))
    })
}

fn select_within_type(groups: &[&CellGroup], budget: usize, median_t: f64) -> Vec<Pick> {
    let mut sorted: Vec<&CellGroup> = groups.to_vec();
    sorted.sort_by(|a, b| a.key_cmp(b));
    let mut picks: Vec<Pick> = Vec::new();
    let mut chosen: Vec<&CellGroup> = Vec::new();

    // At one temperature: lower rates when warm, higher rates when cold.
    let at_temperature = |t: f64, chosen: &[&CellGroup]| -> Option<&CellGroup> {
        let pool: Vec<&CellGroup> =
            sorted.iter().copied().filter(|g| g.condition.ambient_t == t && !chosen.iter().any(|c| c.group_id == g.group_id)).collect();
        if t >= median_t {
            pool.first().copied()
        } else {
            pool.iter().copied().max_by(|a, b| {
                a.condition
                    .c_chg
                    .total_cmp(&b.condition.c_chg)
                    .then(a.condition.c_dis.total_cmp(&b.condition.c_dis))
                    .then_with(|| b.group_id.cmp(&a.group_id))
            })
        }
    };

    let mut temps: Vec<f64> = sorted.iter().map(|g| g.condition.ambient_t).collect();
    temps.dedup();
    let mut used_t: Vec<f64> = Vec::new();
    // (1) boundaries, then farthest-point in temperature.
    while picks.len() < budget && used_t.len() < temps.len() {
        let (t, criterion) = if used_t.is_empty() {
            (temps[0], Criterion::TemperatureBoundary)
        } else if used_t.len() == 1 {
            (*temps.last().expect("nonempty"), Criterion::TemperatureBoundary)
        } else {
            let gap = |t: f64| used_t.iter().map(|u| (t - u).abs()).fold(f64::INFINITY, f64::min);
            let t = temps
                .iter()
                .copied()
                .filter(|t| !used_t.contains(t))
                .max_by(|a, b| gap(*a).total_cmp(&gap(*b)).then(b.total_cmp(a)))
                .expect("unused temperature");
            (t, Criterion::TemperatureDiversity)
        };
        used_t.push(t);
        if let Some(g) = at_temperature(t, &chosen) {
            chosen.push(g);
            picks.push(Pick { group_id: g.group_id.clone(), criterion });
        }
    }
    // (3) spread in charge rate, then discharge rate.
    while picks.len() < budget {
        let rest: Vec<&CellGroup> =
            sorted.iter().copied().filter(|g| !chosen.iter().any(|c| c.group_id == g.group_id)).collect();
        let Some(g) = spread_choice(&rest, &chosen, |a, b| {
            ((a.condition.c_chg - b.condition.c_chg).abs(), (a.condition.c_dis - b.condition.c_dis).abs())
        }) else {
            break;
        };
        chosen.push(g);
        picks.push(Pick { group_id: g.group_id.clone(), criterion: Criterion::CrateSpread });
    }
    picks
}

/// Rule-based first query, applied per cell type. Returns picks in
/// selection order.
pub fn unsupervised_query(groups: &[CellGroup], cap: f64) -> Result<Vec<Pick>> {
    if !(cap > 0.0 && cap <= 1.0) {
        return Err(Error::InvalidInput(format!("budget cap {cap} outside (0, 1]")));
    }
    if groups.is_empty() {
        return Err(Error::EmptyType("<all>".into()));
    }
    let mut by_type: BTreeMap<&str, Vec<&CellGroup>> = BTreeMap::new();
    for g in groups {
        if g.members.is_empty() {
            return Err(Error::InvalidInput(format!("group {} has no members", g.group_id)));
        }
        by_type.entry(&g.cell_type).or_default().push(g);
    }
    let median_t = median(&groups.iter().map(|g| g.condition.ambient_t).collect::<Vec<_>>());
    let mut out = Vec::new();
    for (ty, members) in by_type {
        if members.is_empty() {
            return Err(Error::EmptyType(ty.to_string()));
        }
        out.extend(select_within_type(&members, type_budget(members.len(), cap), median_t));
    }
    Ok(out)
}

/// GP over standardized cycling conditions, with standardized targets.
#[derive(Debug, Clone)]
pub struct GpModel {
    pub gp: Gp<f64>,
    pub inputs: Standardizer<f64>,
    pub y_mean: f64,
    pub y_sd: f64,
}

fn condition_rows(c: &[CyclingCondition]) -> Vec<Vec<f64>> {
    c.iter().map(|c| c.as_array().to_vec()).collect()
}

impl GpModel {
    /// Posterior mean and latent standard deviation, in cycles.
    pub fn predict_with_std(&self, condition: &CyclingCondition) -> (f64, f64) {
        let x = self.inputs.transform_lenient(&condition.as_array());
        let (m, v) = self.gp.predict(&x);
        (self.y_mean + self.y_sd * m, self.y_sd * v.sqrt())
    }

    pub fn hyper(&self) -> &GpHyper<f64> {
        &self.gp.hyper
    }
}

pub fn fit_gp(conditions: &[CyclingCondition], pseudo_labels: &[f64], cfg: &GpConfig) -> Result<GpModel> {
    if conditions.len() != pseudo_labels.len() {
        return Err(Error::LengthMismatch(conditions.len(), pseudo_labels.len()));
    }
    if conditions.len() < 3 {
        return Err(Error::InvalidInput(format!("GP needs at least 3 labelled points, got {}", conditions.len())));
    }
    let rows = condition_rows(conditions);
    let inputs = Standardizer::fit(&rows)?;
    let x: Vec<Vec<f64>> = rows.iter().map(|r| inputs.transform_lenient(r)).collect();
    let y_mean = mean(pseudo_labels);
    let sd = std_dev(pseudo_labels);
    let y_sd = if sd > 0.0 { sd } else { 1.0 };
    let y: Vec<f64> = pseudo_labels.iter().map(|v| (v - y_mean) / y_sd).collect();
    let gp = fit_gp_ml(&x, &y, cfg)?;
    Ok(GpModel { gp, inputs, y_mean, y_sd })
}

/// Uncertainty query: groups whose predictive std exceeds the upper quartile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisedQuery {
    pub selected: Vec<String>,
    pub stds: BTreeMap<String, f64>,
    pub q3: f64,
}

pub fn supervised_query_stds(stds: &[(String, f64)]) -> SupervisedQuery {
    let values: Vec<f64> = stds.iter().map(|s| s.1).collect();
    let q3 = if values.is_empty() { f64::NAN } else { quantile_linear(&values, 0.75) };
    let selected = stds.iter().filter(|s| s.1 > q3).map(|s| s.0.clone()).collect();
    SupervisedQuery { selected, stds: stds.iter().cloned().collect(), q3 }
}

pub fn supervised_query(model: &GpModel, unselected: &[CellGroup]) -> SupervisedQuery {
    let stds: Vec<(String, f64)> =
        unselected.iter().map(|g| (g.group_id.clone(), model.predict_with_std(&g.condition).1)).collect();
    supervised_query_stds(&stds)
}

/// Posterior mean life of each remaining group, floored at one cycle.
pub fn secondary_inference(model: &GpModel, remaining: &[CellGroup]) -> BTreeMap<String, f64> {
    remaining.iter().map(|g| (g.group_id.clone(), model.predict_with_std(&g.condition).0.max(1.0))).collect()
}

/// One step of the query log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub iteration: usize,
    pub picks: Vec<Pick>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stds: Option<BTreeMap<String, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q3: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryState {
    pub selected: BTreeSet<String>,
    pub pseudo_labels: BTreeMap<String, f64>,
    pub iteration: usize,
    pub budget_cap: f64,
    pub audit: Vec<AuditEntry>,
}
