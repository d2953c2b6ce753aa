use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cellsim::PhysParams;
use crate::error::{Error, Result};

/// Number of free (sampled) physical parameters.
pub const FREE_COUNT: usize = 11;

/// A draw of the free parameters, in [`FREE_NAMES`] order.
pub type FreeParams = [f64; FREE_COUNT];

pub const FREE_NAMES: [&str; FREE_COUNT] = [
    "d_s_n", "d_s_p", "k_n", "k_p", "d_e", "sigma_e", "r_f", "eps_s_n", "eps_s_p", "theta_h_n", "theta_h_p",
];

/// Positions of the free parameters inside the fourteen-entry [`PhysParams`] array.
pub const FREE_INDEX: [usize; FREE_COUNT] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 11];

pub fn free_of(p: &PhysParams) -> FreeParams {
    let a = p.to_array();
    FREE_INDEX.map(|i| a[i])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub lower: f64,
    pub upper: f64,
    /// Sample uniformly in log10 space.
    pub log: bool,
}

impl Bound {
    pub const fn linear(lower: f64, upper: f64) -> Self {
        Self { lower, upper, log: false }
    }

    pub const fn log(lower: f64, upper: f64) -> Self {
        Self { lower, upper, log: true }
    }

    /// Maps a unit-interval coordinate onto the bound.
    pub fn at(&self, u: f64) -> f64 {
        if self.log {
            let (a, b) = (self.lower.log10(), self.upper.log10());
            10f64.powf(a + u * (b - a))
        } else {
            self.lower + u * (self.upper - self.lower)
        }
    }

    /// Value in the scale the bound samples in (log10 or identity).
    pub fn to_scale(&self, x: f64) -> f64 {
        if self.log {
            x.log10()
        } else {
            x
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }
}

/// Box prior over the eleven free parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub bounds: [Bound; FREE_COUNT],
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            bounds: [
                Bound::log(2e-14, 5e-13),
                Bound::log(2e-15, 5e-14),
                Bound::log(3e-12, 8e-11),
                Bound::log(7e-12, 2e-10),
                Bound::log(5e-11, 6e-10),
                Bound::linear(0.3, 2.0),
                Bound::linear(0.0, 0.012),
                Bound::linear(0.55, 0.85),
                Bound::linear(0.50, 0.80),
                Bound::linear(0.78, 0.95),
                Bound::linear(0.22, 0.32),
            ],
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        for (b, name) in self.bounds.iter().zip(FREE_NAMES) {
            if !(b.lower.is_finite() && b.upper.is_finite() && b.lower < b.upper) {
                return Err(Error::InvalidPrior(format!("{name}: need lower < upper, got [{}, {}]", b.lower, b.upper)));
            }
            if b.log && b.lower <= 0.0 {
                return Err(Error::InvalidPrior(format!("{name}: log-scaled bound must be positive")));
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &FreeParams) -> bool {
        self.bounds.iter().zip(x).all(|(b, v)| b.contains(*v))
    }

    /// Log flags for all fourteen parameters; the derived stoichiometries are linear.
    pub fn log_flags14(&self) -> [bool; PhysParams::COUNT] {
        let mut f = [false; PhysParams::COUNT];
        for (k, &i) in FREE_INDEX.iter().enumerate() {
            f[i] = self.bounds[k].log;
        }
        f
    }

    /// Stable content hash, used to key simulation banks.
    pub fn hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for b in &self.bounds {
            h.update(b.lower.to_le_bytes());
            h.update(b.upper.to_le_bytes());
            h.update([b.log as u8]);
        }
        h.finalize().into()
    }
}

/// `n` independent draws, uniform on the (log-)scaled box.
pub fn sample_prior(n: usize, prior: &PriorConfig, seed: u64) -> Result<Vec<FreeParams>> {
    prior.validate()?;
    if n == 0 {
        return Err(Error::InvalidInput("sample count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| prior.bounds.map(|b| b.at(rng.random::<f64>()))).collect())
}
