use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const FARADAY: f64 = 96_485.332_12;
pub const GAS_CONSTANT: f64 = 8.314_462_618;
pub const T_REF: f64 = 298.15;

/// Equilibrium window over nominal capacity; absorbs the C/3 polarisation loss.
const RATE_MARGIN: f64 = 1.005;

/// Open-circuit potential sampled on a uniform stoichiometry grid over [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcpTable {
    pub voltage: Vec<f64>,
}

impl OcpTable {
    pub fn tabulate(points: usize, f: impl Fn(f64) -> f64) -> Self {
        assert!(points >= 2);
        let h = 1.0 / (points - 1) as f64;
        Self { voltage: (0..points).map(|i| f(i as f64 * h)).collect() }
    }

    /// Linear interpolation, clamped to the table ends.
    #[inline]
    pub fn eval(&self, theta: f64) -> f64 {
        let n = self.voltage.len() - 1;
        let x = theta.clamp(0.0, 1.0) * n as f64;
        let i = (x as usize).min(n - 1);
        let f = x - i as f64;
        self.voltage[i] + f * (self.voltage[i + 1] - self.voltage[i])
    }

    pub fn is_strictly_decreasing(&self) -> bool {
        self.voltage.windows(2).all(|w| w[1] < w[0])
    }
}

/// Graphite open-circuit potential (V vs Li/Li⁺).
pub fn graphite_ocp(x: f64) -> f64 {
    1.9793 * (-39.3631 * x).exp() + 0.2482
        - 0.0909 * (29.8538 * (x - 0.1234)).tanh()
        - 0.04478 * (14.9159 * (x - 0.2769)).tanh()
        - 0.0205 * (30.4444 * (x - 0.6103)).tanh()
}

/// Nickel-rich layered oxide open-circuit potential (V vs Li/Li⁺).
pub fn nmc811_ocp(x: f64) -> f64 {
    -0.8090 * x + 4.4875 - 0.0428 * (18.5138 * (x - 0.5542)).tanh() - 17.7326 * (15.7890 * (x - 0.3117)).tanh()
        + 17.5842 * (15.9308 * (x - 0.3120)).tanh()
}

/// Activation energies (J/mol) for the Arrhenius temperature scaling of transport and kinetics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Activation {
    pub solid_diffusion: f64,
    pub kinetics: f64,
    pub electrolyte: f64,
}

/// Fixed chemistry and geometry of a cell design family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDesign {
    pub name: String,
    /// Electrode chemistries, e.g. "graphite|nmc811".
    pub chemistry: String,
    pub nominal_capacity: f64,
    /// Electrode plate area (m²).
    pub area: f64,
    pub thickness_n: f64,
    pub thickness_sep: f64,
    pub thickness_p: f64,
    pub radius_n: f64,
    pub radius_p: f64,
    /// Electrolyte volume fractions.
    pub porosity_n: f64,
    pub porosity_sep: f64,
    pub porosity_p: f64,
    pub c_max_n: f64,
    pub c_max_p: f64,
    pub c_e0: f64,
    pub t_plus: f64,
    pub ocp_n: OcpTable,
    pub ocp_p: OcpTable,
    pub v_min: f64,
    pub v_max: f64,
    pub activation: Activation,
}

impl CellDesign {
    /// An 80 Ah graphite/NMC811 pouch design.
    pub fn reference_80ah() -> Self {
        let mut d = Self::uncalibrated("PG-811", 85.2e-6, 75.6e-6);
        d.calibrate_area(&ReferenceFree::default());
        d
    }

    /// Same chemistry with a different electrode thickness pair.
    pub fn variant(name: &str, thickness_n: f64, thickness_p: f64) -> Self {
        let mut d = Self::uncalibrated(name, thickness_n, thickness_p);
        d.calibrate_area(&ReferenceFree::default());
        d
    }

    /// Same chemistry at another nominal capacity; the plate area scales to match.
    pub fn sized(name: &str, thickness_n: f64, thickness_p: f64, nominal_capacity: f64) -> Self {
        let mut d = Self::uncalibrated(name, thickness_n, thickness_p);
        d.nominal_capacity = nominal_capacity;
        d.calibrate_area(&ReferenceFree::default());
        d
    }

    fn uncalibrated(name: &str, thickness_n: f64, thickness_p: f64) -> Self {
        Self {
            name: name.to_string(),
            chemistry: "graphite|nmc811".into(),
            nominal_capacity: 80.0,
            area: 1.0,
            thickness_n,
            thickness_sep: 12e-6,
            thickness_p,
            radius_n: 5.86e-6,
            radius_p: 5.22e-6,
            porosity_n: 0.25,
            porosity_sep: 0.47,
            porosity_p: 0.335,
            c_max_n: 33_133.0,
            c_max_p: 63_104.0,
            c_e0: 1000.0,
            t_plus: 0.2594,
            ocp_n: OcpTable::tabulate(2001, graphite_ocp),
            ocp_p: OcpTable::tabulate(2001, nmc811_ocp),
            v_min: 2.5,
            v_max: 4.2,
            activation: Activation { solid_diffusion: 30_000.0, kinetics: 35_000.0, electrolyte: 15_000.0 },
        }
    }

    /// Sizes the plate area so the equilibrium window of the reference
    /// parameters holds the nominal capacity plus a small rate margin.
    fn calibrate_area(&mut self, reference: &ReferenceFree) {
        self.area = 1.0;
        let q_n = self.electrode_capacity_n(reference.eps_s_n);
        let q_p = self.electrode_capacity_p(reference.eps_s_p);
        let theta_h_p = self.positive_at_top(reference.theta_h_n).expect("reference top of charge");
        let inventory = q_n * reference.theta_h_n + q_p * theta_h_p;
        let (theta_l_n, _) = self.stoich_at_voltage(q_n, q_p, inventory, self.v_min).expect("reference window");
        let window = q_n * (reference.theta_h_n - theta_l_n);
        self.area = self.nominal_capacity * RATE_MARGIN / window;
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nominal_capacity > 0.0) {
            return Err(Error::NonPositiveCapacity(self.nominal_capacity));
        }
        if !(self.v_min < self.v_max) {
            return Err(Error::InvalidInput("v_min must be below v_max".into()));
        }
        if !self.ocp_n.is_strictly_decreasing() || !self.ocp_p.is_strictly_decreasing() {
            return Err(Error::InvalidInput("OCP tables must be strictly monotone".into()));
        }
        let positive = [
            self.area,
            self.thickness_n,
            self.thickness_sep,
            self.thickness_p,
            self.radius_n,
            self.radius_p,
            self.c_max_n,
            self.c_max_p,
            self.c_e0,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidInput("design dimensions must be positive".into()));
        }
        for p in [self.porosity_n, self.porosity_sep, self.porosity_p, self.t_plus] {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::InvalidInput("porosities and t_plus must lie in (0, 1)".into()));
            }
        }
        Ok(())
    }

    /// Negative-electrode capacity over the full stoichiometry range (Ah).
    pub fn electrode_capacity_n(&self, eps_s_n: f64) -> f64 {
        eps_s_n * self.area * self.thickness_n * self.c_max_n * FARADAY / 3600.0
    }

    pub fn electrode_capacity_p(&self, eps_s_p: f64) -> f64 {
        eps_s_p * self.area * self.thickness_p * self.c_max_p * FARADAY / 3600.0
    }

    pub fn ocv(&self, theta_n: f64, theta_p: f64) -> f64 {
        self.ocp_p.eval(theta_p) - self.ocp_n.eval(theta_n)
    }

    /// Positive stoichiometry that puts the open-circuit voltage at `v_max` for a given negative stoichiometry.
    pub fn positive_at_top(&self, theta_h_n: f64) -> Result<f64> {
        let target = self.v_max + self.ocp_n.eval(theta_h_n);
        // ocp_p is decreasing in theta.
        bisect(|x| self.ocp_p.eval(x) - target, 0.0, 1.0)
            .ok_or_else(|| Error::InfeasibleBalance(format!("no positive stoichiometry reaches {:.3} V", self.v_max)))
    }

    /// Equilibrium electrode stoichiometries at cell voltage `v` for a fixed
    /// cyclable lithium inventory (Ah, `q_n·θ_n + q_p·θ_p`).
    pub fn stoich_at_voltage(&self, q_n: f64, q_p: f64, inventory: f64, v: f64) -> Result<(f64, f64)> {
        let lo = ((inventory - q_p) / q_n).max(0.0);
        let hi = (inventory / q_n).min(1.0);
        if !(lo < hi) {
            return Err(Error::InfeasibleBalance(format!("inventory {inventory:.3} Ah does not fit the electrodes")));
        }
        let theta_p = |tn: f64| (inventory - q_n * tn) / q_p;
        // Cell OCV rises monotonically with theta_n along the inventory line.
        let g = |tn: f64| self.ocv(tn, theta_p(tn)) - v;
        let tn = bisect(|x| -g(x), lo, hi)
            .ok_or_else(|| Error::InfeasibleBalance(format!("cell voltage {v:.3} V unreachable at this lithium inventory")))?;
        Ok((tn, theta_p(tn)))
    }

    /// Hash of the properties that fix a simulation bank: chemistry and geometry, not electrolyte.
    pub fn bank_key(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.chemistry.as_bytes());
        for v in [
            self.nominal_capacity,
            self.area,
            self.thickness_n,
            self.thickness_sep,
            self.thickness_p,
            self.radius_n,
            self.radius_p,
            self.porosity_n,
            self.porosity_sep,
            self.porosity_p,
            self.c_max_n,
            self.c_max_p,
            self.v_min,
            self.v_max,
        ] {
            h.update(v.to_le_bytes());
        }
        hex::encode(&h.finalize()[..12])
    }
}

/// Decreasing-function root in [lo, hi]: returns x with f(x) = 0, where f(lo) ≥ 0 ≥ f(hi).
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> Option<f64> {
    let (flo, fhi) = (f(lo), f(hi));
    if flo < 0.0 || fhi > 0.0 {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Free parameters of the undegraded reference cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceFree {
    pub d_s_n: f64,
    pub d_s_p: f64,
    pub k_n: f64,
    pub k_p: f64,
    pub d_e: f64,
    pub sigma_e: f64,
    pub r_f: f64,
    pub eps_s_n: f64,
    pub eps_s_p: f64,
    pub theta_h_n: f64,
}

impl Default for ReferenceFree {
    fn default() -> Self {
        Self {
            d_s_n: 1e-13,
            d_s_p: 1.0e-14,
            k_n: 1.5e-11,
            k_p: 3.5e-11,
            d_e: 1.7e-10,
            sigma_e: 0.95,
            r_f: 2.0e-3,
            eps_s_n: 0.75,
            eps_s_p: 0.665,
            theta_h_n: 0.90,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ocp_tables_are_monotone() {
        let d = CellDesign::reference_80ah();
        d.validate().unwrap();
        assert!(d.ocp_n.is_strictly_decreasing());
        assert!(d.ocp_p.is_strictly_decreasing());
    }

    #[test]
    fn reference_window_holds_nominal_capacity() {
        let d = CellDesign::reference_80ah();
        let r = ReferenceFree::default();
        let q_n = d.electrode_capacity_n(r.eps_s_n);
        let q_p = d.electrode_capacity_p(r.eps_s_p);
        let thp = d.positive_at_top(r.theta_h_n).unwrap();
        assert!((d.ocv(r.theta_h_n, thp) - d.v_max).abs() < 1e-9);
        let inv = q_n * r.theta_h_n + q_p * thp;
        let (tln, tlp) = d.stoich_at_voltage(q_n, q_p, inv, d.v_min).unwrap();
        assert!((d.ocv(tln, tlp) - d.v_min).abs() < 1e-9);
        let window = q_n * (r.theta_h_n - tln);
        assert!((window / d.nominal_capacity - RATE_MARGIN).abs() < 1e-9);
        // lithium balance between electrodes
        assert!((q_p * (tlp - thp) - window).abs() < 1e-9);
    }

    #[test]
    fn bank_key_ignores_electrolyte() {
        let a = CellDesign::reference_80ah();
        let mut b = a.clone();
        b.t_plus = 0.3;
        b.c_e0 = 1200.0;
        assert_eq!(a.bank_key(), b.bank_key());
        let c = CellDesign::variant("thick", 95e-6, 84e-6);
        assert_ne!(a.bank_key(), c.bank_key());
    }
}
