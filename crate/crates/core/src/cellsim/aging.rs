//! Synthetic ageing: closed-form parameter drift in EFC, periodic RPTs, and cycle-life extraction.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::design::{CellDesign, T_REF};
use super::params::{CyclingCondition, DegradationConfig, PhysParams};
use super::protocol::Protocol;
use super::spm::{run_rpt_with, SolverOptions, Simulator, TimeSeries};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub efc: f64,
    pub capacity_ah: f64,
}

/// RPT capacity versus equivalent full cycles.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CapacityTrajectory {
    pub points: Vec<TrajectoryPoint>,
}

impl CapacityTrajectory {
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Self {
        Self { points: pairs.iter().map(|&(efc, capacity_ah)| TrajectoryPoint { efc, capacity_ah }).collect() }
    }

    pub fn validate(&self) -> Result<()> {
        let first = self.points.first().ok_or(Error::EmptyTrajectory)?;
        if !(0.0..1.0).contains(&first.efc) {
            return Err(Error::InvalidInput(format!("first RPT at {} EFC, expected within the first cycle", first.efc)));
        }
        if self.points.windows(2).any(|w| !(w[1].efc > w[0].efc)) {
            return Err(Error::InvalidInput("trajectory EFC must be strictly increasing".into()));
        }
        if self.points.iter().any(|p| !(p.capacity_ah > 0.0)) {
            return Err(Error::InvalidInput("trajectory capacities must be positive".into()));
        }
        Ok(())
    }
}

/// Equivalent full cycles at which capacity first fell to the retention threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "efc", rename_all = "snake_case")]
pub enum CycleLife {
    Reached(f64),
    /// Threshold never crossed; carries the last observed EFC.
    Censored(f64),
}

impl CycleLife {
    pub fn efc(&self) -> f64 {
        match *self {
            CycleLife::Reached(x) | CycleLife::Censored(x) => x,
        }
    }

    pub fn is_censored(&self) -> bool {
        matches!(self, CycleLife::Censored(_))
    }
}

pub fn efc_of(throughput_ah: f64, nominal_capacity: f64) -> Result<f64> {
    if !(nominal_capacity > 0.0) {
        return Err(Error::NonPositiveCapacity(nominal_capacity));
    }
    Ok((throughput_ah / (2.0 * nominal_capacity)).max(0.0))
}

/// Linear interpolation at the first downward crossing of `threshold × initial capacity`.
pub fn cycle_life(trajectory: &CapacityTrajectory, retention_threshold: f64) -> Result<CycleLife> {
    let pts = &trajectory.points;
    let first = pts.first().ok_or(Error::EmptyTrajectory)?;
    if !(retention_threshold > 0.0 && retention_threshold < 1.0) {
        return Err(Error::InvalidInput(format!("retention threshold {retention_threshold} outside (0, 1)")));
    }
    let target = retention_threshold * first.capacity_ah;
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b.capacity_ah <= target && a.capacity_ah > target {
            let f = (a.capacity_ah - target) / (a.capacity_ah - b.capacity_ah);
            return Ok(CycleLife::Reached(a.efc + f * (b.efc - a.efc)));
        }
    }
    Ok(CycleLife::Censored(pts.last().map_or(0.0, |p| p.efc)))
}

/// Where the initial cyclable lithium went after some amount of ageing (Ah).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LithiumBudget {
    pub initial: f64,
    pub cyclable: f64,
    /// Lithium stranded in active material lost at the charged state.
    pub lam_sink: f64,
    /// Lithium consumed by side reactions, film growth included.
    pub side_reaction_sink: f64,
}

/// Degraded state in closed form: electrode capacities, film resistance and lithium budget.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Drift {
    r_f: f64,
    eps_n: f64,
    eps_p: f64,
    q_n: f64,
    q_p: f64,
    budget: LithiumBudget,
}

fn drift(initial: &PhysParams, design: &CellDesign, condition: &CyclingCondition, deg: &DegradationConfig, efc: f64) -> Drift {
    let efc = efc.max(0.0);
    let t = condition.temperature_k();
    let arr = (deg.sei_activation * (1.0 / T_REF - 1.0 / t)).exp();
    let stress = condition.c_chg.max(condition.c_dis);
    let d_rf = deg.sei_rate * arr * efc.sqrt();
    let eps_n = initial.eps_s_n * (1.0 - deg.lam_rate_n * stress * efc).max(0.05);
    let eps_p = initial.eps_s_p * (1.0 - deg.lam_rate_p * stress * efc).max(0.05);
    let q_n0 = design.electrode_capacity_n(initial.eps_s_n);
    let q_p0 = design.electrode_capacity_p(initial.eps_s_p);
    let q_n = design.electrode_capacity_n(eps_n);
    let q_p = design.electrode_capacity_p(eps_p);
    let total = q_n0 * initial.theta_h_n + q_p0 * initial.theta_h_p;
    let lam_sink = (q_n0 - q_n) * initial.theta_h_n + (q_p0 - q_p) * initial.theta_h_p;
    let side = (deg.lli_rate * arr * efc + deg.sei_lithium_loss * d_rf) * q_n0;
    Drift {
        r_f: initial.r_f + d_rf,
        eps_n,
        eps_p,
        q_n,
        q_p,
        budget: LithiumBudget { initial: total, cyclable: total - lam_sink - side, lam_sink, side_reaction_sink: side },
    }
}

pub fn lithium_budget(
    initial: &PhysParams,
    design: &CellDesign,
    condition: &CyclingCondition,
    deg: &DegradationConfig,
    efc: f64,
) -> LithiumBudget {
    drift(initial, design, condition, deg, efc).budget
}

/// Parameters after `efc` equivalent full cycles of ageing under `condition`.
///
/// Film resistance grows with sqrt(EFC) and an Arrhenius factor; active
/// material decays linearly in EFC scaled by the larger C-rate; cyclable
/// lithium is lost linearly in EFC, to film growth, and with the active
/// material removed at the charged state. The stoichiometry window is
/// re-solved from the remaining inventory at the cell voltage limits.
pub fn degraded_params(
    initial: &PhysParams,
    design: &CellDesign,
    condition: &CyclingCondition,
    deg: &DegradationConfig,
    efc: f64,
) -> Result<PhysParams> {
    let no_rates = deg.sei_rate == 0.0 && deg.lam_rate_n == 0.0 && deg.lam_rate_p == 0.0 && deg.lli_rate == 0.0;
    if efc <= 0.0 || no_rates {
        return Ok(*initial);
    }
    let d = drift(initial, design, condition, deg, efc);
    let inventory = d.budget.cyclable;
    let (theta_h_n, theta_h_p) = design.stoich_at_voltage(d.q_n, d.q_p, inventory, design.v_max)?;
    let (theta_l_n, theta_l_p) = design.stoich_at_voltage(d.q_n, d.q_p, inventory, design.v_min)?;
    Ok(PhysParams {
        r_f: d.r_f,
        eps_s_n: d.eps_n,
        eps_s_p: d.eps_p,
        theta_h_n,
        theta_h_p,
        theta_l_n,
        theta_l_p,
        theta_off: theta_l_n - theta_l_p,
        ..*initial
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgingOptions {
    pub early_cycle_solver: SolverOptions,
    pub rpt_solver: SolverOptions,
    /// Stop this many RPTs after capacity first falls below 90 %; `None` runs to the horizon.
    pub stop_after_eol_rpts: Option<usize>,
    pub early_efc: f64,
}

impl Default for AgingOptions {
    fn default() -> Self {
        Self {
            early_cycle_solver: SolverOptions::coarse(),
            rpt_solver: SolverOptions::coarse(),
            stop_after_eol_rpts: None,
            early_efc: 50.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AgingResult {
    pub trajectory: CapacityTrajectory,
    /// Parameter snapshots at every early cycle start and every RPT, sorted by EFC.
    pub param_history: Vec<(f64, PhysParams)>,
    /// One time series per cycle until 50 EFC have been completed.
    pub early_profiles: Vec<TimeSeries>,
    /// EFC at the start of each early cycle.
    pub early_cycle_efc: Vec<f64>,
}

impl AgingResult {
    /// Index of the early cycle whose start is nearest to `target_efc`.
    pub fn cycle_nearest(&self, target_efc: f64) -> usize {
        self.early_cycle_efc
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - target_efc).abs().total_cmp(&(b.1 - target_efc).abs()))
            .map_or(0, |(i, _)| i)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn age_cell(
    initial: &PhysParams,
    design: &CellDesign,
    condition: &CyclingCondition,
    protocol: &Protocol,
    horizon_efc: f64,
    deg: &DegradationConfig,
    rpt_period_efc: f64,
    seed: u64,
) -> Result<AgingResult> {
    age_cell_with(initial, design, condition, protocol, horizon_efc, deg, rpt_period_efc, seed, &AgingOptions::default())
}

#[allow(clippy::too_many_arguments)]
pub fn age_cell_with(
    initial: &PhysParams,
    design: &CellDesign,
    condition: &CyclingCondition,
    protocol: &Protocol,
    horizon_efc: f64,
    deg: &DegradationConfig,
    rpt_period_efc: f64,
    seed: u64,
    opts: &AgingOptions,
) -> Result<AgingResult> {
    if !(horizon_efc >= opts.early_efc) {
        return Err(Error::HorizonTooShort { horizon_efc, min: opts.early_efc });
    }
    if !(rpt_period_efc >= 1.0) {
        return Err(Error::InvalidInput(format!("rpt_period_efc must be at least 1, got {rpt_period_efc}")));
    }
    initial.validate()?;
    deg.validate()?;
    condition.validate()?;
    protocol.validate(design)?;

    let mut history = Vec::new();
    let mut early_profiles = Vec::new();
    let mut early_cycle_efc = Vec::new();
    let mut efc = 0.0;
    let mut cycle = 1u32;
    while efc < opts.early_efc {
        let params = degraded_params(initial, design, condition, deg, efc)?;
        let mut sim = Simulator::new(params, design, condition.ambient_t, opts.early_cycle_solver)?;
        sim.cycle_index = cycle;
        sim.set_full();
        sim.run_cycle(condition, protocol)?;
        let throughput = sim.state().throughput_ah;
        if !(throughput > 0.0) {
            return Err(Error::SolverDivergence(format!("cycle {cycle} moved no charge")));
        }
        history.push((efc, params));
        early_cycle_efc.push(efc);
        early_profiles.push(sim.series);
        efc += efc_of(throughput, design.nominal_capacity)?;
        cycle += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    let mut since_eol: Option<usize> = None;
    let n_rpt = (horizon_efc / rpt_period_efc).floor() as usize;
    for m in 0..=n_rpt {
        let e = m as f64 * rpt_period_efc;
        let params = degraded_params(initial, design, condition, deg, e)?;
        let cap = run_rpt_with(&params, design, opts.rpt_solver)?;
        let z: f64 = StandardNormal.sample(&mut rng);
        let noisy = cap * (1.0 + deg.noise_sd * z);
        history.push((e, params));
        points.push(TrajectoryPoint { efc: e, capacity_ah: noisy.max(1e-9) });
        if let Some(limit) = opts.stop_after_eol_rpts {
            if since_eol.is_none() && noisy <= 0.9 * points[0].capacity_ah {
                since_eol = Some(0);
            } else if let Some(k) = since_eol.as_mut() {
                *k += 1;
            }
            if since_eol.is_some_and(|k| k >= limit) {
                break;
            }
        }
    }
    history.sort_by(|a, b| a.0.total_cmp(&b.0));
    history.dedup_by(|a, b| a.0 == b.0);
    Ok(AgingResult { trajectory: CapacityTrajectory { points }, param_history: history, early_profiles, early_cycle_efc })
}
