//! Electrochemical cell simulator and synthetic degradation generator.

mod aging;
mod design;
mod params;
mod protocol;
mod spm;

pub use aging::{
    age_cell, age_cell_with, lithium_budget, LithiumBudget, cycle_life, degraded_params, efc_of, AgingOptions, AgingResult, CapacityTrajectory,
    CycleLife, TrajectoryPoint,
};
pub use design::{graphite_ocp, nmc811_ocp, Activation, CellDesign, OcpTable, ReferenceFree, FARADAY, GAS_CONSTANT, T_REF};
pub use params::{CyclingCondition, DegradationConfig, PhysParams};
pub use protocol::{ChargeStep, DriveProfile, Protocol, ProtocolVariant};
pub use spm::{
    run_rpt, run_rpt_with, simulate_cycle, simulate_cycle_with, CellState, EndReason, SegmentOutcome, SolverOptions,
    Simulator, TimeSeries, TimeSeriesRow, RPT_C_RATE, RPT_TEMPERATURE,
};

/// Fully consistent parameters from the free set: the positive upper
/// stoichiometry is placed at `v_max` and the lower window solved at `v_min`.
pub fn consistent_params(free: &ReferenceFree, design: &CellDesign) -> crate::error::Result<PhysParams> {
    let q_n = design.electrode_capacity_n(free.eps_s_n);
    let q_p = design.electrode_capacity_p(free.eps_s_p);
    let theta_h_p = design.positive_at_top(free.theta_h_n)?;
    let inventory = q_n * free.theta_h_n + q_p * theta_h_p;
    let (theta_l_n, theta_l_p) = design.stoich_at_voltage(q_n, q_p, inventory, design.v_min)?;
    let p = PhysParams {
        d_s_n: free.d_s_n,
        d_s_p: free.d_s_p,
        k_n: free.k_n,
        k_p: free.k_p,
        d_e: free.d_e,
        sigma_e: free.sigma_e,
        r_f: free.r_f,
        eps_s_n: free.eps_s_n,
        eps_s_p: free.eps_s_p,
        theta_h_n: free.theta_h_n,
        theta_l_n,
        theta_h_p,
        theta_l_p,
        theta_off: theta_l_n - theta_l_p,
    };
    p.validate()?;
    Ok(p)
}

impl PhysParams {
    /// Undegraded reference cell for a design.
    pub fn reference(design: &CellDesign) -> Self {
        consistent_params(&ReferenceFree::default(), design).expect("reference parameters are consistent")
    }
}
