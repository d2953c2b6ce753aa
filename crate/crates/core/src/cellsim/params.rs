use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The fourteen physical parameters inferred per cell.
///
/// Field order is the canonical feature order everywhere in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysParams {
    /// Solid diffusivity, negative electrode (m²/s).
    pub d_s_n: f64,
    /// Solid diffusivity, positive electrode (m²/s).
    pub d_s_p: f64,
    /// Reaction rate constant, negative (m^2.5 mol^-0.5 s^-1).
    pub k_n: f64,
    pub k_p: f64,
    /// Electrolyte diffusivity (m²/s).
    pub d_e: f64,
    /// Electrolyte ionic conductivity (S/m).
    pub sigma_e: f64,
    /// Lumped SEI film resistance on the negative electrode (Ω·m²).
    pub r_f: f64,
    pub eps_s_n: f64,
    pub eps_s_p: f64,
    pub theta_h_n: f64,
    pub theta_l_n: f64,
    pub theta_h_p: f64,
    pub theta_l_p: f64,
    /// `theta_l_n − theta_l_p`.
    pub theta_off: f64,
}

impl PhysParams {
    pub const COUNT: usize = 14;

    pub const NAMES: [&'static str; 14] = [
        "d_s_n", "d_s_p", "k_n", "k_p", "d_e", "sigma_e", "r_f", "eps_s_n", "eps_s_p", "theta_h_n", "theta_l_n",
        "theta_h_p", "theta_l_p", "theta_off",
    ];

    pub fn to_array(&self) -> [f64; 14] {
        [
            self.d_s_n,
            self.d_s_p,
            self.k_n,
            self.k_p,
            self.d_e,
            self.sigma_e,
            self.r_f,
            self.eps_s_n,
            self.eps_s_p,
            self.theta_h_n,
            self.theta_l_n,
            self.theta_h_p,
            self.theta_l_p,
            self.theta_off,
        ]
    }

    pub fn from_array(a: [f64; 14]) -> Self {
        Self {
            d_s_n: a[0],
            d_s_p: a[1],
            k_n: a[2],
            k_p: a[3],
            d_e: a[4],
            sigma_e: a[5],
            r_f: a[6],
            eps_s_n: a[7],
            eps_s_p: a[8],
            theta_h_n: a[9],
            theta_l_n: a[10],
            theta_h_p: a[11],
            theta_l_p: a[12],
            theta_off: a[13],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(format!("PhysParams: {m}")));
        for (name, v) in [
            ("d_s_n", self.d_s_n),
            ("d_s_p", self.d_s_p),
            ("k_n", self.k_n),
            ("k_p", self.k_p),
            ("d_e", self.d_e),
            ("sigma_e", self.sigma_e),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.r_f >= 0.0) || !self.r_f.is_finite() {
            return bad(format!("r_f must be non-negative, got {}", self.r_f));
        }
        for (name, v) in [("eps_s_n", self.eps_s_n), ("eps_s_p", self.eps_s_p)] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {v}"));
            }
        }
        for (name, v) in [
            ("theta_h_n", self.theta_h_n),
            ("theta_l_n", self.theta_l_n),
            ("theta_h_p", self.theta_h_p),
            ("theta_l_p", self.theta_l_p),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if !(self.theta_h_n > self.theta_l_n) {
            return bad("theta_h_n must exceed theta_l_n".into());
        }
        if !(self.theta_h_p < self.theta_l_p) {
            return bad("theta_h_p must be below theta_l_p".into());
        }
        if self.theta_off != self.theta_l_n - self.theta_l_p {
            return bad("theta_off must equal theta_l_n − theta_l_p".into());
        }
        Ok(())
    }
}

/// Ambient temperature (°C) and charge/discharge C-rates (h⁻¹).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CyclingCondition {
    pub ambient_t: f64,
    pub c_chg: f64,
    pub c_dis: f64,
}

impl CyclingCondition {
    pub fn new(ambient_t: f64, c_chg: f64, c_dis: f64) -> Self {
        Self { ambient_t, c_chg, c_dis }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_chg > 0.0 && self.c_dis > 0.0) || !self.ambient_t.is_finite() {
            return Err(Error::InvalidInput(format!("invalid cycling condition {self:?}")));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.ambient_t, self.c_chg, self.c_dis]
    }

    pub fn temperature_k(&self) -> f64 {
        self.ambient_t + 273.15
    }

    /// Total order on (ambient_t, c_chg, c_dis).
    pub fn lex_cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.ambient_t
            .total_cmp(&other.ambient_t)
            .then(self.c_chg.total_cmp(&other.c_chg))
            .then(self.c_dis.total_cmp(&other.c_dis))
    }
}

/// Synthetic ageing rates used to generate ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationConfig {
    /// Film growth coefficient: Δr_f = sei_rate · arrhenius · sqrt(EFC), Ω·m².
    pub sei_rate: f64,
    /// Arrhenius activation temperature, K (referenced to 25 °C).
    pub sei_activation: f64,
    /// Fractional active-material loss per EFC per unit C-rate.
    pub lam_rate_n: f64,
    pub lam_rate_p: f64,
    /// Fraction of negative-electrode capacity lost as cyclable lithium per EFC.
    pub lli_rate: f64,
    /// Relative capacity measurement noise (standard deviation).
    pub noise_sd: f64,
    /// Cyclable lithium consumed by film growth, as a fraction of the initial
    /// negative-electrode capacity per Ω·m² of added film resistance.
    #[serde(default = "default_sei_lithium_loss")]
    pub sei_lithium_loss: f64,
}

fn default_sei_lithium_loss() -> f64 {
    2.0
}

impl DegradationConfig {
    pub fn none() -> Self {
        Self { sei_rate: 0.0, sei_activation: 0.0, lam_rate_n: 0.0, lam_rate_p: 0.0, lli_rate: 0.0, noise_sd: 0.0, sei_lithium_loss: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [self.sei_rate, self.sei_activation, self.lam_rate_n, self.lam_rate_p, self.lli_rate, self.sei_lithium_loss];
        if rates.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(Error::InvalidInput("degradation rates must be non-negative".into()));
        }
        if !(0.0..=0.05).contains(&self.noise_sd) {
            return Err(Error::InvalidInput(format!("noise_sd must lie in [0, 0.05], got {}", self.noise_sd)));
        }
        Ok(())
    }
}
