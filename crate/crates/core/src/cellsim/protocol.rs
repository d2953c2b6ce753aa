use serde::{Deserialize, Serialize};

use super::design::CellDesign;
use crate::error::{Error, Result};

/// One constant-current charge step, as a multiple of the condition's charge C-rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChargeStep {
    pub rate_factor: f64,
    pub until_v: f64,
}

/// Tabulated drive-cycle current shape, repeated until the lower cutoff.
/// Values are relative; the profile is rescaled so its mean equals `c_dis`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveProfile {
    pub step_s: f64,
    pub shape: Vec<f64>,
}

impl DriveProfile {
    /// One hour of synthetic urban/highway driving in 60 s segments.
    pub fn synthetic_hour() -> Self {
        let shape = (0..60)
            .map(|k| {
                let t = k as f64;
                let s = 1.0 + 0.7 * (std::f64::consts::TAU * t / 12.0).sin() + 0.45 * (std::f64::consts::TAU * t / 5.0).sin();
                if k % 15 == 14 { 0.0 } else { s.max(0.05) }
            })
            .collect();
        Self { step_s: 60.0, shape }
    }

    pub fn duration_s(&self) -> f64 {
        self.step_s * self.shape.len() as f64
    }

    /// C-rate of segment `k` (wrapping) after scaling the mean to `c_dis`.
    pub fn c_rate_at(&self, k: usize, c_dis: f64) -> f64 {
        let mean = self.shape.iter().sum::<f64>() / self.shape.len() as f64;
        self.shape[k % self.shape.len()] * c_dis / mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProtocolVariant {
    /// Constant-current discharge and constant-current charge.
    CcCc,
    /// Constant-current steps followed by a constant-voltage hold at `v_max`.
    MultiStepCharge { steps: Vec<ChargeStep>, cv_cutoff_c: f64 },
    /// Drive-cycle discharge, CC-CV charge.
    DynamicDischarge { profile: DriveProfile, cv_cutoff_c: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub variant: ProtocolVariant,
    pub rest_after_discharge_s: f64,
    pub rest_after_charge_s: f64,
}

impl Protocol {
    pub fn cc_cc() -> Self {
        Self { variant: ProtocolVariant::CcCc, rest_after_discharge_s: 600.0, rest_after_charge_s: 600.0 }
    }

    pub fn multi_step(v_max: f64) -> Self {
        Self {
            variant: ProtocolVariant::MultiStepCharge {
                steps: vec![
                    ChargeStep { rate_factor: 1.5, until_v: v_max - 0.2 },
                    ChargeStep { rate_factor: 1.0, until_v: v_max - 0.08 },
                    ChargeStep { rate_factor: 0.6, until_v: v_max },
                ],
                cv_cutoff_c: 0.05,
            },
            rest_after_discharge_s: 600.0,
            rest_after_charge_s: 600.0,
        }
    }

    pub fn dynamic() -> Self {
        Self {
            variant: ProtocolVariant::DynamicDischarge { profile: DriveProfile::synthetic_hour(), cv_cutoff_c: 0.05 },
            rest_after_discharge_s: 600.0,
            rest_after_charge_s: 600.0,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.variant {
            ProtocolVariant::CcCc => "cc_cc",
            ProtocolVariant::MultiStepCharge { .. } => "multi_step_charge",
            ProtocolVariant::DynamicDischarge { .. } => "dynamic_discharge",
        }
    }

    pub fn validate(&self, design: &CellDesign) -> Result<()> {
        if !(self.rest_after_charge_s >= 0.0 && self.rest_after_discharge_s >= 0.0) {
            return Err(Error::InvalidInput("rest durations must be non-negative".into()));
        }
        match &self.variant {
            ProtocolVariant::CcCc => {}
            ProtocolVariant::MultiStepCharge { steps, cv_cutoff_c } => {
                if steps.is_empty() {
                    return Err(Error::InvalidInput("multi-step charge needs at least one step".into()));
                }
                for s in steps {
                    if !(s.rate_factor > 0.0) {
                        return Err(Error::InvalidInput("charge step C-rates must be positive".into()));
                    }
                    if s.until_v > design.v_max || s.until_v <= design.v_min {
                        return Err(Error::InfeasibleProtocol(format!(
                            "step target {:.3} V outside [{:.3}, {:.3}] V",
                            s.until_v, design.v_min, design.v_max
                        )));
                    }
                }
                if !(*cv_cutoff_c > 0.0) {
                    return Err(Error::InvalidInput("CV hold needs a positive current cutoff".into()));
                }
            }
            ProtocolVariant::DynamicDischarge { profile, cv_cutoff_c } => {
                if !(profile.duration_s() > 0.0) || profile.shape.iter().any(|v| *v < 0.0) {
                    return Err(Error::InvalidInput("dynamic profile must have positive duration and non-negative shape".into()));
                }
                if profile.shape.iter().sum::<f64>() <= 0.0 {
                    return Err(Error::InvalidInput("dynamic profile has zero mean".into()));
                }
                if !(*cv_cutoff_c > 0.0) {
                    return Err(Error::InvalidInput("CV hold needs a positive current cutoff".into()));
                }
            }
        }
        Ok(())
    }
}
