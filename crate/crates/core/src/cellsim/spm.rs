//! Single-particle model with a lumped electrolyte correction.
//!
//! Each electrode is one spherical particle discretized into equal-thickness
//! finite-volume shells. Solid diffusion is advanced with implicit Euler;
//! with the current prescribed the step is a tridiagonal solve, and under
//! voltage control the current is found by Newton iteration on top of it.
//! Voltage cutoffs are located by bisection on the step length.

use serde::{Deserialize, Serialize};

use super::design::{CellDesign, FARADAY, GAS_CONSTANT, T_REF};
use super::params::{CyclingCondition, PhysParams};
use super::protocol::{DriveProfile, Protocol, ProtocolVariant};
use crate::error::{Error, Result};
use crate::linalg::solve_tridiagonal;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub shells: usize,
    pub dt_initial: f64,
    pub dt_max: f64,
    pub dt_min: f64,
    /// Largest accepted voltage change per step (V).
    pub max_dv: f64,
    /// Width of the bracket a cutoff event is located to (s).
    pub event_tol_s: f64,
    pub max_steps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { shells: 20, dt_initial: 1.0, dt_max: 60.0, dt_min: 1e-7, max_dv: 0.004, event_tol_s: 1e-3, max_steps: 400_000 }
    }
}

impl SolverOptions {
    /// Looser step control for long ageing runs.
    pub fn coarse() -> Self {
        Self { dt_max: 120.0, max_dv: 0.015, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesRow {
    pub time_s: f64,
    pub current_a: f64,
    pub voltage_v: f64,
    pub throughput_ah: f64,
    pub cycle_index: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub rows: Vec<TimeSeriesRow>,
}

impl TimeSeries {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn final_throughput(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.throughput_ah)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub theta_n: Vec<f64>,
    pub theta_p: Vec<f64>,
    /// Lumped electrolyte concentration difference across the cell (mol/m³).
    pub delta_ce: f64,
    pub time_s: f64,
    pub throughput_ah: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndReason {
    Cutoff,
    Duration,
    /// The stop condition already held when the segment started.
    Immediate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentOutcome {
    /// Row range of the recorded series belonging to this segment.
    pub rows: (usize, usize),
    pub capacity_ah: f64,
    pub end: EndReason,
}

#[derive(Debug, Clone, Copy)]
enum Drive<'p> {
    Current(f64),
    Profile { profile: &'p DriveProfile, c_dis: f64, t0: f64 },
    Voltage(f64),
}

#[derive(Debug, Clone, Copy)]
enum Stop {
    VoltageBelow(f64),
    VoltageAbove(f64),
    CurrentBelow(f64),
    Duration(f64),
}

impl Stop {
    fn hit(self, v: f64, i: f64, elapsed: f64) -> bool {
        match self {
            Stop::VoltageBelow(x) => v <= x,
            Stop::VoltageAbove(x) => v >= x,
            Stop::CurrentBelow(x) => i.abs() <= x,
            Stop::Duration(d) => elapsed >= d,
        }
    }
}

struct Electrode {
    vol: Vec<f64>,
    cond: Vec<f64>,
    half_dr: f64,
    d_hat: f64,
    /// Electrode charge capacity (C).
    charge_c: f64,
    /// +1 for the negative electrode (delithiates on discharge), −1 for the positive.
    sign: f64,
    i0_coeff: f64,
    /// Total interfacial area (m²).
    interface_area: f64,
}

impl Electrode {
    #[allow(clippy::too_many_arguments)]
    fn new(shells: usize, radius: f64, d_s: f64, k: f64, eps: f64, thickness: f64, c_max: f64, design: &CellDesign, sign: f64) -> Self {
        let n = shells as f64;
        let vol = (0..shells).map(|i| (((i + 1) as f64).powi(3) - (i as f64).powi(3)) / (3.0 * n.powi(3))).collect();
        let d_hat = d_s / (radius * radius);
        let mut cond = vec![0.0; shells + 1];
        for (i, c) in cond.iter_mut().enumerate().take(shells).skip(1) {
            *c = d_hat * (i as f64).powi(2) / n;
        }
        Self {
            vol,
            cond,
            half_dr: 0.5 / n,
            d_hat,
            charge_c: eps * design.area * thickness * c_max * FARADAY,
            sign,
            i0_coeff: FARADAY * k * design.c_e0.sqrt() * c_max,
            interface_area: design.area * thickness * 3.0 * eps / radius,
        }
    }

    #[inline]
    fn flux(&self, current: f64) -> f64 {
        self.sign * current / (3.0 * self.charge_c)
    }

    fn advance(&self, from: &[f64], current: f64, dt: f64, out: &mut [f64], work: &mut Work) {
        let n = from.len();
        if dt <= 0.0 {
            out.copy_from_slice(from);
            return;
        }
        for i in 0..n {
            let m = self.vol[i] / dt;
            work.lower[i] = -self.cond[i];
            work.upper[i] = -self.cond[i + 1];
            work.diag[i] = m + self.cond[i] + self.cond[i + 1];
            out[i] = m * from[i];
        }
        out[n - 1] -= self.flux(current);
        solve_tridiagonal(&work.lower[..n], &work.diag[..n], &work.upper[..n], out, &mut work.scratch[..n]);
    }

    #[inline]
    fn surface(&self, theta: &[f64], current: f64) -> f64 {
        theta[theta.len() - 1] - self.flux(current) * self.half_dr / self.d_hat
    }

    fn mean(&self, theta: &[f64]) -> f64 {
        3.0 * theta.iter().zip(&self.vol).map(|(t, v)| t * v).sum::<f64>()
    }
}

struct Work {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
    scratch: Vec<f64>,
}

/// Stateful single-cell simulator. Records every accepted step into [`Simulator::series`].
pub struct Simulator<'a> {
    design: &'a CellDesign,
    params: PhysParams,
    opts: SolverOptions,
    neg: Electrode,
    pos: Electrode,
    thermal: f64,
    r_electrolyte: f64,
    dce_per_current: f64,
    tau_e: f64,
    state: CellState,
    trial: CellState,
    work: Work,
    pub series: TimeSeries,
    pub cycle_index: u32,
}

fn arrhenius(ea: f64, temperature_k: f64) -> f64 {
    (ea / GAS_CONSTANT * (1.0 / T_REF - 1.0 / temperature_k)).exp()
}

impl<'a> Simulator<'a> {
    pub fn new(params: PhysParams, design: &'a CellDesign, ambient_t_c: f64, opts: SolverOptions) -> Result<Self> {
        params.validate()?;
        design.validate()?;
        if opts.shells < 2 {
            return Err(Error::InvalidInput("need at least two radial shells".into()));
        }
        let t = ambient_t_c + 273.15;
        let a_ds = arrhenius(design.activation.solid_diffusion, t);
        let a_k = arrhenius(design.activation.kinetics, t);
        let a_e = arrhenius(design.activation.electrolyte, t);
        let neg = Electrode::new(
            opts.shells,
            design.radius_n,
            params.d_s_n * a_ds,
            params.k_n * a_k,
            params.eps_s_n,
            design.thickness_n,
            design.c_max_n,
            design,
            1.0,
        );
        let pos = Electrode::new(
            opts.shells,
            design.radius_p,
            params.d_s_p * a_ds,
            params.k_p * a_k,
            params.eps_s_p,
            design.thickness_p,
            design.c_max_p,
            design,
            -1.0,
        );
        let bruggeman = |e: f64| e.powf(1.5);
        let sigma = params.sigma_e * a_e;
        let d_e = params.d_e * a_e;
        let r_electrolyte = design.thickness_n / (3.0 * sigma * bruggeman(design.porosity_n))
            + design.thickness_sep / (sigma * bruggeman(design.porosity_sep))
            + design.thickness_p / (3.0 * sigma * bruggeman(design.porosity_p));
        let diffusion_length = design.thickness_n / (3.0 * d_e * bruggeman(design.porosity_n))
            + design.thickness_sep / (d_e * bruggeman(design.porosity_sep))
            + design.thickness_p / (3.0 * d_e * bruggeman(design.porosity_p));
        let dce_per_current = 0.5 * (1.0 - design.t_plus) / FARADAY * diffusion_length / design.area;
        let total_l = design.thickness_n + design.thickness_sep + design.thickness_p;
        let d_avg = d_e * bruggeman(design.porosity_sep);
        let tau_e = total_l * total_l / (std::f64::consts::PI.powi(2) * d_avg);
        let n = opts.shells;
        let state = CellState {
            theta_n: vec![params.theta_h_n; n],
            theta_p: vec![params.theta_h_p; n],
            delta_ce: 0.0,
            time_s: 0.0,
            throughput_ah: 0.0,
        };
        Ok(Self {
            design,
            params,
            opts,
            neg,
            pos,
            thermal: 2.0 * GAS_CONSTANT * t / FARADAY,
            r_electrolyte,
            dce_per_current,
            tau_e,
            trial: state.clone(),
            state,
            work: Work { lower: vec![0.0; n], diag: vec![0.0; n], upper: vec![0.0; n], scratch: vec![0.0; n] },
            series: TimeSeries::default(),
            cycle_index: 1,
        })
    }

    pub fn params(&self) -> &PhysParams {
        &self.params
    }

    pub fn state(&self) -> &CellState {
        &self.state
    }

    /// Rested, fully charged: both particles uniform at their upper-cutoff stoichiometry.
    pub fn set_full(&mut self) {
        self.set_uniform(self.params.theta_h_n, self.params.theta_h_p);
    }

    /// Rested, fully discharged.
    pub fn set_empty(&mut self) {
        self.set_uniform(self.params.theta_l_n, self.params.theta_l_p);
    }

    pub fn set_uniform(&mut self, theta_n: f64, theta_p: f64) {
        self.state.theta_n.iter_mut().for_each(|x| *x = theta_n);
        self.state.theta_p.iter_mut().for_each(|x| *x = theta_p);
        self.state.delta_ce = 0.0;
    }

    /// Cyclable lithium held in both particles, in Ah.
    pub fn lithium_inventory_ah(&self) -> f64 {
        (self.neg.charge_c * self.neg.mean(&self.state.theta_n) + self.pos.charge_c * self.pos.mean(&self.state.theta_p))
            / 3600.0
    }

    pub fn mean_stoichiometry(&self) -> (f64, f64) {
        (self.neg.mean(&self.state.theta_n), self.pos.mean(&self.state.theta_p))
    }

    /// Terminal voltage of the current state with `current` applied instantaneously.
    pub fn voltage_now(&self, current: f64) -> f64 {
        self.voltage(&self.state, current)
    }

    fn voltage(&self, st: &CellState, current: f64) -> f64 {
        let tn = self.neg.surface(&st.theta_n, current);
        let tp = self.pos.surface(&st.theta_p, current);
        if tn <= 0.0 || tp >= 1.0 {
            return f64::NEG_INFINITY;
        }
        if tn >= 1.0 || tp <= 0.0 {
            return f64::INFINITY;
        }
        let i0 = |coeff: f64, th: f64| coeff * (th * (1.0 - th)).sqrt();
        let i_n = current / self.neg.interface_area;
        let i_p = -current / self.pos.interface_area;
        let eta_n = self.thermal * (i_n / (2.0 * i0(self.neg.i0_coeff, tn))).asinh();
        let eta_p = self.thermal * (i_p / (2.0 * i0(self.pos.i0_coeff, tp))).asinh();
        let c0 = self.design.c_e0;
        let dc = st.delta_ce.clamp(-1.8 * c0, 1.8 * c0);
        let eta_c = self.thermal * (1.0 - self.design.t_plus) * ((c0 + 0.5 * dc) / (c0 - 0.5 * dc)).ln();
        self.design.ocp_p.eval(tp) - self.design.ocp_n.eval(tn) + eta_p - eta_n
            - self.params.r_f * i_n
            - current / self.design.area * self.r_electrolyte
            - eta_c
    }

    /// Advances `from` by `dt` under `current` into `self.trial`; returns the terminal voltage.
    fn step_into_trial(&mut self, from: &CellState, current: f64, dt: f64) -> f64 {
        let mut trial = std::mem::replace(&mut self.trial, CellState {
            theta_n: Vec::new(),
            theta_p: Vec::new(),
            delta_ce: 0.0,
            time_s: 0.0,
            throughput_ah: 0.0,
        });
        self.neg.advance(&from.theta_n, current, dt, &mut trial.theta_n, &mut self.work);
        self.pos.advance(&from.theta_p, current, dt, &mut trial.theta_p, &mut self.work);
        let r = dt / self.tau_e;
        trial.delta_ce = (from.delta_ce + r * self.dce_per_current * current) / (1.0 + r);
        trial.time_s = from.time_s + dt;
        trial.throughput_ah = from.throughput_ah + current.abs() * dt / 3600.0;
        let v = self.voltage(&trial, current);
        self.trial = trial;
        v
    }

    /// Trial step under a drive; returns (voltage, current) or `None` when voltage control fails.
    fn trial(&mut self, from: &CellState, drive: Drive<'_>, dt: f64, guess: f64) -> Option<(f64, f64)> {
        match drive {
            Drive::Current(i) => Some((self.step_into_trial(from, i, dt), i)),
            Drive::Profile { profile, c_dis, t0 } => {
                let k = ((from.time_s - t0) / profile.step_s + 1e-9).floor().max(0.0) as usize;
                let i = profile.c_rate_at(k, c_dis) * self.design.nominal_capacity;
                Some((self.step_into_trial(from, i, dt), i))
            }
            Drive::Voltage(target) => {
                let mut i = guess;
                for _ in 0..40 {
                    let v = self.step_into_trial(from, i, dt);
                    if !v.is_finite() {
                        return None;
                    }
                    let h = v - target;
                    if h.abs() < 1e-10 {
                        return Some((v, i));
                    }
                    let di = 1e-6 * i.abs().max(1e-3 * self.design.nominal_capacity);
                    let v2 = self.step_into_trial(from, i + di, dt);
                    let slope = (v2 - v) / di;
                    if !slope.is_finite() || slope >= 0.0 {
                        return None;
                    }
                    i -= h / slope;
                }
                None
            }
        }
    }

    fn profile_boundary(&self, drive: Drive<'_>) -> Option<f64> {
        match drive {
            Drive::Profile { profile, t0, .. } => {
                let k = ((self.state.time_s - t0) / profile.step_s + 1e-9).floor().max(0.0);
                Some(t0 + (k + 1.0) * profile.step_s - self.state.time_s)
            }
            _ => None,
        }
    }

    fn record(&mut self, current: f64, voltage: f64) {
        self.series.rows.push(TimeSeriesRow {
            time_s: self.state.time_s,
            current_a: current,
            voltage_v: voltage,
            throughput_ah: self.state.throughput_ah,
            cycle_index: self.cycle_index,
        });
    }

    fn run_segment(&mut self, drive: Drive<'_>, stop: Stop) -> Result<SegmentOutcome> {
        let start_row = self.series.rows.len();
        let q0 = self.state.throughput_ah;
        let t_start = self.state.time_s;
        let mut guess = match drive {
            Drive::Current(i) => i,
            _ => 0.0,
        };
        let from = self.state.clone();
        let (v0, i0) = self
            .trial(&from, drive, 0.0, guess)
            .ok_or_else(|| Error::SolverDivergence("voltage control failed at segment start".into()))?;
        guess = i0;
        self.record(i0, v0);
        if stop.hit(v0, i0, 0.0) && !matches!(stop, Stop::Duration(_)) {
            return Ok(SegmentOutcome { rows: (start_row, self.series.rows.len()), capacity_ah: 0.0, end: EndReason::Immediate });
        }
        let mut v_prev = v0;
        let mut dt = self.opts.dt_initial;
        let mut steps = 0usize;
        loop {
            steps += 1;
            if steps > self.opts.max_steps {
                return Err(Error::SolverDivergence(format!("step limit {} exceeded", self.opts.max_steps)));
            }
            let elapsed = self.state.time_s - t_start;
            let mut h = dt.min(self.opts.dt_max);
            if let Stop::Duration(d) = stop {
                h = h.min(d - elapsed);
            }
            if let Some(b) = self.profile_boundary(drive) {
                h = h.min(b);
            }
            let from = self.state.clone();
            let Some((v1, i1)) = self.trial(&from, drive, h, guess) else {
                dt = h * 0.5;
                if dt < self.opts.dt_min {
                    return Err(Error::SolverDivergence("Newton failed at minimum step".into()));
                }
                continue;
            };
            let crossed = !matches!(stop, Stop::Duration(_)) && stop.hit(v1, i1, elapsed + h);
            if crossed {
                let (mut lo, mut hi) = (0.0, h);
                while hi - lo > self.opts.event_tol_s {
                    let mid = 0.5 * (lo + hi);
                    match self.trial(&from, drive, mid, guess) {
                        Some((vm, im)) if !stop.hit(vm, im, elapsed + mid) => lo = mid,
                        _ => hi = mid,
                    }
                }
                if lo > 0.0 {
                    let (vl, il) = self
                        .trial(&from, drive, lo, guess)
                        .ok_or_else(|| Error::SolverDivergence("event location failed".into()))?;
                    std::mem::swap(&mut self.state, &mut self.trial);
                    self.record(il, vl);
                }
                return Ok(SegmentOutcome {
                    rows: (start_row, self.series.rows.len()),
                    capacity_ah: self.state.throughput_ah - q0,
                    end: EndReason::Cutoff,
                });
            }
            let dv = (v1 - v_prev).abs();
            if !v1.is_finite() || (dv > self.opts.max_dv && h > 16.0 * self.opts.dt_min) {
                dt = h * 0.5;
                if dt < self.opts.dt_min {
                    return Err(Error::SolverDivergence("step size underflow".into()));
                }
                continue;
            }
            std::mem::swap(&mut self.state, &mut self.trial);
            self.record(i1, v1);
            v_prev = v1;
            guess = i1;
            if let Stop::Duration(d) = stop {
                if self.state.time_s - t_start >= d - 1e-9 {
                    return Ok(SegmentOutcome {
                        rows: (start_row, self.series.rows.len()),
                        capacity_ah: self.state.throughput_ah - q0,
                        end: EndReason::Duration,
                    });
                }
            }
            if dv < 0.5 * self.opts.max_dv {
                dt = (h * 1.5).min(self.opts.dt_max);
            } else {
                dt = h;
            }
        }
    }

    /// Constant current (A, discharge positive) until the voltage cutoff.
    pub fn constant_current(&mut self, current: f64, cutoff_v: f64) -> Result<SegmentOutcome> {
        let stop = if current >= 0.0 { Stop::VoltageBelow(cutoff_v) } else { Stop::VoltageAbove(cutoff_v) };
        self.run_segment(Drive::Current(current), stop)
    }

    /// Constant voltage hold until |current| falls to `cutoff_a`.
    pub fn constant_voltage(&mut self, target_v: f64, cutoff_a: f64) -> Result<SegmentOutcome> {
        if target_v > self.design.v_max + 1e-12 || target_v < self.design.v_min - 1e-12 {
            return Err(Error::InfeasibleProtocol(format!("CV target {target_v:.3} V outside voltage limits")));
        }
        self.run_segment(Drive::Voltage(target_v), Stop::CurrentBelow(cutoff_a))
    }

    pub fn rest(&mut self, duration_s: f64) -> Result<SegmentOutcome> {
        if duration_s <= 0.0 {
            let r = self.series.rows.len();
            return Ok(SegmentOutcome { rows: (r, r), capacity_ah: 0.0, end: EndReason::Duration });
        }
        self.run_segment(Drive::Current(0.0), Stop::Duration(duration_s))
    }

    pub fn drive_discharge(&mut self, profile: &DriveProfile, c_dis: f64) -> Result<SegmentOutcome> {
        let t0 = self.state.time_s;
        self.run_segment(Drive::Profile { profile, c_dis, t0 }, Stop::VoltageBelow(self.design.v_min))
    }

    /// Discharge segment of a protocol.
    pub fn discharge(&mut self, condition: &CyclingCondition, protocol: &Protocol) -> Result<SegmentOutcome> {
        match &protocol.variant {
            ProtocolVariant::DynamicDischarge { profile, .. } => self.drive_discharge(profile, condition.c_dis),
            _ => self.constant_current(condition.c_dis * self.design.nominal_capacity, self.design.v_min),
        }
    }

    /// Charge segment(s) of a protocol; returns the charged capacity.
    pub fn charge(&mut self, condition: &CyclingCondition, protocol: &Protocol) -> Result<f64> {
        let q = self.design.nominal_capacity;
        let v_max = self.design.v_max;
        let mut total = 0.0;
        match &protocol.variant {
            ProtocolVariant::CcCc => {
                total += self.constant_current(-condition.c_chg * q, v_max)?.capacity_ah;
            }
            ProtocolVariant::MultiStepCharge { steps, cv_cutoff_c } => {
                for s in steps {
                    total += self.constant_current(-s.rate_factor * condition.c_chg * q, s.until_v)?.capacity_ah;
                }
                total += self.constant_voltage(v_max, cv_cutoff_c * q)?.capacity_ah;
            }
            ProtocolVariant::DynamicDischarge { cv_cutoff_c, .. } => {
                total += self.constant_current(-condition.c_chg * q, v_max)?.capacity_ah;
                total += self.constant_voltage(v_max, cv_cutoff_c * q)?.capacity_ah;
            }
        }
        Ok(total)
    }

    /// One full cycle from the current state: discharge, rest, charge, rest.
    pub fn run_cycle(&mut self, condition: &CyclingCondition, protocol: &Protocol) -> Result<()> {
        self.discharge(condition, protocol)?;
        self.rest(protocol.rest_after_discharge_s)?;
        self.charge(condition, protocol)?;
        self.rest(protocol.rest_after_charge_s)?;
        self.cycle_index += 1;
        Ok(())
    }
}

/// Simulates one protocol cycle starting from the rested, fully charged state.
pub fn simulate_cycle(
    params: &PhysParams,
    design: &CellDesign,
    condition: &CyclingCondition,
    protocol: &Protocol,
) -> Result<TimeSeries> {
    simulate_cycle_with(params, design, condition, protocol, SolverOptions::default())
}

pub fn simulate_cycle_with(
    params: &PhysParams,
    design: &CellDesign,
    condition: &CyclingCondition,
    protocol: &Protocol,
    opts: SolverOptions,
) -> Result<TimeSeries> {
    condition.validate()?;
    protocol.validate(design)?;
    let mut sim = Simulator::new(*params, design, condition.ambient_t, opts)?;
    sim.set_full();
    sim.run_cycle(condition, protocol)?;
    Ok(sim.series)
}

/// RPT C-rate.
pub const RPT_C_RATE: f64 = 1.0 / 3.0;
/// RPT ambient temperature (°C).
pub const RPT_TEMPERATURE: f64 = 25.0;

/// Full C/3 constant-current discharge capacity between the voltage limits, Ah.
pub fn run_rpt(params: &PhysParams, design: &CellDesign) -> Result<f64> {
    run_rpt_with(params, design, SolverOptions::default())
}

pub fn run_rpt_with(params: &PhysParams, design: &CellDesign, opts: SolverOptions) -> Result<f64> {
    let mut sim = Simulator::new(*params, design, RPT_TEMPERATURE, opts)?;
    sim.set_full();
    let out = sim.constant_current(RPT_C_RATE * design.nominal_capacity, design.v_min)?;
    Ok(out.capacity_ah)
}
