//! Physics-guided learning: posterior inference of physical parameters from
//! check-up voltage profiles, and the 28 physics features built from it.

mod abc;
mod bank;
mod observe;
mod prior;

pub use abc::{abc_reject, abc_reject_by, accept_count, moments, weighted_distance, AbcConfig, Acceptance};
pub use bank::{simulate_batch, BankCache, BankSpec, Batch, CacheStats, SimulationBank, BANK_VERSION, CACHE_DIR_ENV};
pub use observe::{
    derive_full_params, resample, Checkup, CheckupProfiles, Direction, ObservationProfile, GRID_POINTS, SIGNATURE_LEN,
};
pub use prior::{free_of, sample_prior, Bound, FreeParams, PriorConfig, FREE_COUNT, FREE_INDEX, FREE_NAMES};

use serde::{Deserialize, Serialize};

use crate::cellsim::PhysParams;
use crate::error::{Error, Result};

/// Posterior mean and spread per parameter, in the prior's sampling scale
/// (log10 for log-scaled parameters).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub cell_id: String,
    pub cycle_index: u32,
    pub names: Vec<String>,
    pub log_scale: Vec<bool>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub acceptance_count: usize,
}

/// Accepted bank rows for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub acceptance: Acceptance<f64>,
    /// Summary over the eleven free parameters.
    pub free: PosteriorSummary,
}

fn to_scale(row: &[f64; PhysParams::COUNT], logs: &[bool; PhysParams::COUNT]) -> [f64; PhysParams::COUNT] {
    let mut out = *row;
    for (x, &l) in out.iter_mut().zip(logs) {
        if l {
            *x = x.log10();
        }
    }
    out
}

/// Distance between check-up signatures: RMS over both voltage
/// profiles plus the weighted log-capacity channels.
fn signature_distance(obs: &[f64], row: &[f64], capacity_weight: f64) -> f64 {
    let nv = 2 * GRID_POINTS;
    let dv: f64 = obs[..nv].iter().zip(&row[..nv]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / nv as f64;
    let dq: f64 = obs[nv..].iter().zip(&row[nv..]).map(|(a, b)| (a.ln() - b.ln()).powi(2)).sum::<f64>() / 2.0;
    (dv + capacity_weight * capacity_weight * dq).sqrt()
}

/// Quantile-ABC posterior for one check-up observation against a bank.
pub fn infer_posterior(
    observed: &CheckupProfiles,
    bank: &SimulationBank,
    prior: &PriorConfig,
    cfg: &AbcConfig,
) -> Result<Posterior> {
    cfg.validate()?;
    let obs = observed.signature();
    if bank.is_empty() {
        return Err(Error::InsufficientAcceptance { accepted: 0, required: cfg.min_accept });
    }
    // Failed draws stay in the denominator as infinitely distant candidates.
    let draws = bank.total.max(bank.len());
    let acceptance = abc_reject_by(draws, cfg.quantile, cfg.min_accept, |i| match bank.signatures.get(i) {
        Some(row) => signature_distance(&obs, row, cfg.capacity_weight),
        None => f64::INFINITY,
    })?;
    let logs = prior.log_flags14();
    let rows: Vec<[f64; FREE_COUNT]> =
        bank.params.iter().map(|r| FREE_INDEX.map(|j| if logs[j] { r[j].log10() } else { r[j] })).collect();
    let (mean, sd) = moments(&rows, &acceptance.indices);
    let free = PosteriorSummary {
        cell_id: observed.cell_id().to_string(),
        cycle_index: observed.cycle_index(),
        names: FREE_NAMES.iter().map(|s| s.to_string()).collect(),
        log_scale: prior.bounds.iter().map(|b| b.log).collect(),
        mean,
        sd,
        acceptance_count: acceptance.indices.len(),
    };
    Ok(Posterior { acceptance, free })
}

impl Posterior {
    /// Fourteen-parameter summary, using the bank's derived stoichiometries for the accepted rows.
    pub fn full(&self, bank: &SimulationBank, prior: &PriorConfig) -> PosteriorSummary {
        let logs = prior.log_flags14();
        let rows: Vec<[f64; PhysParams::COUNT]> =
            self.acceptance.indices.iter().map(|&i| to_scale(&bank.params[i], &logs)).collect();
        let all: Vec<usize> = (0..rows.len()).collect();
        let (mean, sd) = moments(&rows, &all);
        PosteriorSummary {
            cell_id: self.free.cell_id.clone(),
            cycle_index: self.free.cycle_index,
            names: PhysParams::NAMES.iter().map(|s| s.to_string()).collect(),
            log_scale: logs.to_vec(),
            mean,
            sd,
            acceptance_count: self.free.acceptance_count,
        }
    }
}

/// 14 first-cycle posterior means followed by 14 increments to the 50-EFC cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector28 {
    pub initial: [f64; PhysParams::COUNT],
    pub delta: [f64; PhysParams::COUNT],
}

impl FeatureVector28 {
    pub const LEN: usize = 2 * PhysParams::COUNT;

    pub fn names() -> Vec<String> {
        PhysParams::NAMES
            .iter()
            .map(|n| format!("{n}_initial"))
            .chain(PhysParams::NAMES.iter().map(|n| format!("{n}_delta")))
            .collect()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.initial.iter().chain(&self.delta).copied().collect()
    }

    pub fn from_slice(x: &[f64]) -> Result<Self> {
        if x.len() != Self::LEN {
            return Err(Error::LengthMismatch(x.len(), Self::LEN));
        }
        let mut f = Self { initial: [0.0; 14], delta: [0.0; 14] };
        f.initial.copy_from_slice(&x[..14]);
        f.delta.copy_from_slice(&x[14..]);
        Ok(f)
    }
}

pub fn extract_features(first: &PosteriorSummary, fiftieth: &PosteriorSummary) -> Result<FeatureVector28> {
    if first.cell_id != fiftieth.cell_id {
        return Err(Error::CellMismatch(first.cell_id.clone(), fiftieth.cell_id.clone()));
    }
    if first.cycle_index != 1 {
        return Err(Error::InvalidInput(format!("first summary is for cycle {}, expected 1", first.cycle_index)));
    }
    for s in [first, fiftieth] {
        if s.mean.len() != PhysParams::COUNT {
            return Err(Error::LengthMismatch(s.mean.len(), PhysParams::COUNT));
        }
    }
    let mut f = FeatureVector28 { initial: [0.0; 14], delta: [0.0; 14] };
    for k in 0..PhysParams::COUNT {
        f.initial[k] = first.mean[k];
        f.delta[k] = fiftieth.mean[k] - first.mean[k];
    }
    if f.to_vec().iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite feature for {}", first.cell_id)));
    }
    Ok(f)
}
