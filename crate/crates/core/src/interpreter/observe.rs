use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::prior::{FreeParams, FREE_INDEX};
use crate::cellsim::{CellDesign, PhysParams, Simulator, SolverOptions, TimeSeriesRow};
use crate::error::{Error, Result};

/// Samples per resampled profile.
pub const GRID_POINTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Charge,
    Discharge,
}

/// One CC segment resampled onto a uniform normalized-capacity grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationProfile {
    pub cell_id: String,
    pub cycle_index: u32,
    pub direction: Direction,
    /// Voltage at normalized throughput `k / (GRID_POINTS − 1)`.
    pub voltage: Vec<f64>,
    /// Charge moved over the segment (Ah).
    pub capacity_ah: f64,
}

impl ObservationProfile {
    pub fn validate(&self, design: &CellDesign) -> Result<()> {
        if self.voltage.len() != GRID_POINTS {
            return Err(Error::InvalidInput(format!(
                "profile for {} has {} samples, expected {GRID_POINTS}",
                self.cell_id,
                self.voltage.len()
            )));
        }
        let tol = 1e-6;
        if self.voltage.iter().any(|v| !(*v >= design.v_min - tol && *v <= design.v_max + tol)) {
            return Err(Error::InvalidInput(format!("profile for {} leaves the voltage limits", self.cell_id)));
        }
        if !(self.capacity_ah > 0.0) {
            return Err(Error::NonPositiveCapacity(self.capacity_ah));
        }
        Ok(())
    }
}

/// Discharge and charge profiles of one check-up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckupProfiles {
    pub discharge: ObservationProfile,
    pub charge: ObservationProfile,
}

impl CheckupProfiles {
    pub fn cell_id(&self) -> &str {
        &self.discharge.cell_id
    }

    pub fn cycle_index(&self) -> u32 {
        self.discharge.cycle_index
    }

    /// Flat signature: discharge voltages, charge voltages, discharge and charge capacity.
    pub fn signature(&self) -> Vec<f64> {
        let mut s = Vec::with_capacity(SIGNATURE_LEN);
        s.extend_from_slice(&self.discharge.voltage);
        s.extend_from_slice(&self.charge.voltage);
        s.push(self.discharge.capacity_ah);
        s.push(self.charge.capacity_ah);
        s
    }

    pub fn from_signature(cell_id: &str, cycle_index: u32, sig: &[f64]) -> Result<Self> {
        if sig.len() != SIGNATURE_LEN {
            return Err(Error::InvalidInput(format!("signature length {} != {SIGNATURE_LEN}", sig.len())));
        }
        let g = GRID_POINTS;
        let mk = |direction, v: &[f64], q| ObservationProfile {
            cell_id: cell_id.to_string(),
            cycle_index,
            direction,
            voltage: v.to_vec(),
            capacity_ah: q,
        };
        Ok(Self {
            discharge: mk(Direction::Discharge, &sig[..g], sig[2 * g]),
            charge: mk(Direction::Charge, &sig[g..2 * g], sig[2 * g + 1]),
        })
    }
}

pub const SIGNATURE_LEN: usize = 2 * GRID_POINTS + 2;

/// Standardized CC check-up used for observations and for the simulation bank:
/// from the rested full state, discharge to `v_min`, then charge to `v_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkup {
    pub c_rate: f64,
    pub ambient_t: f64,
    pub solver: SolverOptions,
}

impl Default for Checkup {
    fn default() -> Self {
        // Tight enough that grid voltages sit within 1e-4 V of a dense-output run.
        let solver = SolverOptions { dt_max: 20.0, max_dv: 1e-3, ..SolverOptions::default() };
        Self { c_rate: 1.0, ambient_t: 25.0, solver }
    }
}

impl Checkup {
    pub fn hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("check-up serializes"));
        h.finalize().into()
    }

    pub fn run(&self, params: &PhysParams, design: &CellDesign, cell_id: &str, cycle_index: u32) -> Result<CheckupProfiles> {
        let mut sim = Simulator::new(*params, design, self.ambient_t, self.solver)?;
        sim.set_full();
        let i = self.c_rate * design.nominal_capacity;
        let dis = sim.constant_current(i, design.v_min)?;
        let chg = sim.constant_current(-i, design.v_max)?;
        let rows = &sim.series.rows;
        let profile = |direction, (a, b): (usize, usize)| -> Result<ObservationProfile> {
            let p = ObservationProfile {
                cell_id: cell_id.to_string(),
                cycle_index,
                direction,
                voltage: resample(&rows[a..b], GRID_POINTS)?,
                capacity_ah: rows[b - 1].throughput_ah - rows[a].throughput_ah,
            };
            p.validate(design)?;
            Ok(p)
        };
        Ok(CheckupProfiles { discharge: profile(Direction::Discharge, dis.rows)?, charge: profile(Direction::Charge, chg.rows)? })
    }
}

/// Linear interpolation of voltage against normalized throughput within one segment.
pub fn resample(rows: &[TimeSeriesRow], points: usize) -> Result<Vec<f64>> {
    if rows.len() < 2 || points < 2 {
        return Err(Error::InvalidInput("segment too short to resample".into()));
    }
    let q0 = rows[0].throughput_ah;
    let span = rows[rows.len() - 1].throughput_ah - q0;
    if !(span > 0.0) {
        return Err(Error::NonPositiveCapacity(span));
    }
    let mut out = Vec::with_capacity(points);
    let mut j = 0;
    for k in 0..points {
        let x = k as f64 / (points - 1) as f64;
        while j + 2 < rows.len() && (rows[j + 1].throughput_ah - q0) / span < x {
            j += 1;
        }
        let (a, b) = (&rows[j], &rows[j + 1]);
        let xa = (a.throughput_ah - q0) / span;
        let xb = (b.throughput_ah - q0) / span;
        let f = if xb > xa { ((x - xa) / (xb - xa)).clamp(0.0, 1.0) } else { 1.0 };
        out.push(a.voltage_v + f * (b.voltage_v - a.voltage_v));
    }
    Ok(out)
}

/// Completes a free-parameter draw with the lower-cutoff stoichiometries.
///
/// The lithium inventory fixed by the upper stoichiometries and electrode
/// capacities is held constant; the lower stoichiometries are where the
/// equilibrium cell voltage reaches `v_min` along that inventory line.
pub fn derive_full_params(sample: &FreeParams, design: &CellDesign) -> Result<PhysParams> {
    let mut a = [0.0; PhysParams::COUNT];
    for (k, &i) in FREE_INDEX.iter().enumerate() {
        a[i] = sample[k];
    }
    let (theta_h_n, theta_h_p) = (a[9], a[11]);
    let q_n = design.electrode_capacity_n(a[7]);
    let q_p = design.electrode_capacity_p(a[8]);
    let inventory = q_n * theta_h_n + q_p * theta_h_p;
    let (theta_l_n, theta_l_p) = design.stoich_at_voltage(q_n, q_p, inventory, design.v_min)?;
    if !(theta_l_n < theta_h_n && theta_l_p > theta_h_p) {
        return Err(Error::InfeasibleBalance(format!(
            "lower stoichiometries ({theta_l_n:.4}, {theta_l_p:.4}) do not bracket the upper ones"
        )));
    }
    a[10] = theta_l_n;
    a[12] = theta_l_p;
    a[13] = theta_l_n - theta_l_p;
    let p = PhysParams::from_array(a);
    p.validate().map_err(|e| Error::InfeasibleBalance(e.to_string()))?;
    Ok(p)
}
