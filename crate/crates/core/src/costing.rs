//! Time and energy cost of life-testing campaigns, with and without discovery learning.
//!
//! All arithmetic runs at full precision. `paper_rounding` reproduces the
//! published figures, which round the duration of one test round and each
//! energy component (to whole kWh) before they are multiplied or summed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostAssumptions<T> {
    /// Average full-life length, equivalent full cycles.
    pub avg_cycle_life: T,
    /// Hours for one charge/discharge cycle (2 at 1C/1C, 1 at 2C/2C).
    pub hours_per_cycle: T,
    /// Cells (or cell groups) a tester runs in parallel.
    pub units_per_round: u32,
    pub early_cycles: T,
    /// kWh of production energy per kWh of cell capacity.
    pub mfg_energy_factor: T,
    /// Cell energy capacity, kWh.
    pub cell_energy: T,
    /// Tester power draw, kW.
    pub tester_power: T,
    pub n_total_units: u32,
    pub n_selected_units: u32,
    pub n_total_cells: u32,
    pub n_selected_cells: u32,
    /// Decimal places the duration of one round is rounded to when reproducing printed figures.
    #[serde(default)]
    pub round_days_decimals: Option<u32>,
}

impl<T: Real> CostAssumptions<T> {
    /// 1C/1C cycling, eight cells per round, 63 of 123 cells prototyped.
    pub fn set1() -> Self {
        Self {
            avg_cycle_life: T::lit(1000.0),
            hours_per_cycle: T::lit(2.0),
            units_per_round: 8,
            early_cycles: T::lit(50.0),
            mfg_energy_factor: T::lit(15.45),
            cell_energy: T::lit(0.275),
            tester_power: T::lit(0.250),
            n_total_units: 123,
            n_selected_units: 63,
            n_total_cells: 123,
            n_selected_cells: 63,
            round_days_decimals: None,
        }
    }

    /// 2C/2C cycling, four cell groups per round, 26 of 37 groups tested.
    pub fn set2() -> Self {
        Self {
            hours_per_cycle: T::lit(1.0),
            units_per_round: 4,
            n_total_units: 37,
            n_selected_units: 26,
            round_days_decimals: Some(0),
            ..Self::set1()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("avg_cycle_life", self.avg_cycle_life),
            ("hours_per_cycle", self.hours_per_cycle),
            ("early_cycles", self.early_cycles),
            ("mfg_energy_factor", self.mfg_energy_factor),
            ("cell_energy", self.cell_energy),
            ("tester_power", self.tester_power),
        ];
        for (name, v) in positive {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        let counts = [
            ("units_per_round", self.units_per_round),
            ("n_total_units", self.n_total_units),
            ("n_selected_units", self.n_selected_units),
            ("n_total_cells", self.n_total_cells),
            ("n_selected_cells", self.n_selected_cells),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidInput(format!("{name} must be positive")));
            }
        }
        if self.n_selected_units > self.n_total_units || self.n_selected_cells > self.n_total_cells {
            return Err(Error::InvalidInput("selected count exceeds total".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignCost<T> {
    pub rounds: u32,
    pub test_days: T,
    pub test_energy_kwh: T,
    pub mfg_energy_kwh: T,
    pub total_energy_mwh: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Savings<T> {
    pub time_pct: T,
    pub energy_pct: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport<T> {
    pub baseline: CampaignCost<T>,
    pub dl: CampaignCost<T>,
    pub savings: Savings<T>,
    pub paper_rounding: bool,
}

/// Rounds needed to test `n_units` with `units_per_round` in parallel.
pub fn rounds(n_units: u32, units_per_round: u32) -> u32 {
    assert!(n_units > 0 && units_per_round > 0, "rounds: counts must be positive");
    n_units.div_ceil(units_per_round)
}

pub fn testing_time_days<T: Real>(rounds: u32, cycles: T, hours_per_cycle: T) -> T {
    T::from_u32(rounds).unwrap() * cycles * hours_per_cycle / T::lit(24.0)
}

pub fn testing_energy_kwh<T: Real>(rounds: u32, cycles: T, hours_per_cycle: T, tester_power: T) -> T {
    T::from_u32(rounds).unwrap() * cycles * hours_per_cycle * tester_power
}

pub fn manufacturing_energy_kwh<T: Real>(n_cells: u32, cell_energy: T, factor: T) -> Result<T> {
    if n_cells == 0 || !(cell_energy > T::zero()) || !(factor > T::zero()) {
        return Err(Error::InvalidInput("manufacturing energy inputs must be positive".into()));
    }
    Ok(T::from_u32(n_cells).unwrap() * cell_energy * factor)
}

fn round_to<T: Real>(x: T, decimals: u32) -> T {
    let scale = T::lit(10f64.powi(decimals as i32));
    (x * scale).round() / scale
}

fn campaign<T: Real>(a: &CostAssumptions<T>, units: u32, cells: u32, cycles: T, rounded: bool) -> Result<CampaignCost<T>> {
    let n_rounds = rounds(units, a.units_per_round);
    let test_days = match (rounded, a.round_days_decimals) {
        (true, Some(d)) => {
            let per_round = round_to(testing_time_days(1, cycles, a.hours_per_cycle), d);
            T::from_u32(n_rounds).unwrap() * per_round
        }
        _ => testing_time_days(n_rounds, cycles, a.hours_per_cycle),
    };
    let mut test_energy = testing_energy_kwh(n_rounds, cycles, a.hours_per_cycle, a.tester_power);
    let mut mfg = manufacturing_energy_kwh(cells, a.cell_energy, a.mfg_energy_factor)?;
    if rounded {
        test_energy = test_energy.round();
        mfg = mfg.round();
    }
    Ok(CampaignCost {
        rounds: n_rounds,
        test_days,
        test_energy_kwh: test_energy,
        mfg_energy_kwh: mfg,
        total_energy_mwh: (test_energy + mfg) / T::lit(1000.0),
    })
}

pub fn cost_report<T: Real>(a: &CostAssumptions<T>, paper_rounding: bool) -> Result<CostReport<T>> {
    a.validate()?;
    let baseline = campaign(a, a.n_total_units, a.n_total_cells, a.avg_cycle_life, paper_rounding)?;
    let dl = campaign(a, a.n_selected_units, a.n_selected_cells, a.early_cycles, paper_rounding)?;
    let hundred = T::lit(100.0);
    let clamp = |x: T| x.max(T::zero()).min(hundred);
    let savings = Savings {
        time_pct: clamp((T::one() - dl.test_days / baseline.test_days) * hundred),
        energy_pct: clamp((T::one() - dl.total_energy_mwh / baseline.total_energy_mwh) * hundred),
    };
    Ok(CostReport { baseline, dl, savings, paper_rounding })
}

impl<T: Real> CostReport<T> {
    /// Human-readable table; display rounding happens only here.
    pub fn table(&self) -> String {
        let row = |name: &str, c: &CampaignCost<T>| {
            format!(
                "{:<10} {:>7} {:>10.1} {:>14.1} {:>13.1} {:>12.3}\n",
                name,
                c.rounds,
                c.test_days.as_f64(),
                c.test_energy_kwh.as_f64(),
                c.mfg_energy_kwh.as_f64(),
                c.total_energy_mwh.as_f64()
            )
        };
        let mut s = format!(
            "{:<10} {:>7} {:>10} {:>14} {:>13} {:>12}\n",
            "campaign", "rounds", "days", "test kWh", "mfg kWh", "total MWh"
        );
        s += &row("baseline", &self.baseline);
        s += &row("dl", &self.dl);
        s += &format!(
            "savings: time {:.1}%  energy {:.1}%\n",
            self.savings.time_pct.as_f64(),
            self.savings.energy_pct.as_f64()
        );
        s
    }
}
