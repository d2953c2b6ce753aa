//! Dataset schemas, loaders and the synthetic dataset generator.
//!
//! A dataset directory holds four files:
//!
//! | file               | content                                                          |
//! |--------------------|------------------------------------------------------------------|
//! | `manifest.json`    | version, role, design and protocol tables, provenance            |
//! | `cells.csv`        | one row per cell: identity, condition, observed life             |
//! | `trajectories.csv` | `cell_id, efc, capacity_ah`, one row per check-up                |
//! | `profiles.csv`     | `cell_id, cycle_index, direction, capacity_ah, v000..v099`       |

mod generate;
mod io;

pub use generate::{gen_synthetic_dataset, DesignSpec, FamilySpec, GeneratorConfig, GroupSpec, RateCoupling, TypeSpec};
pub use io::{load_dataset, write_dataset, CELLS_FILE, MANIFEST_FILE, PROFILES_FILE, TRAJECTORIES_FILE};

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::cellsim::{CapacityTrajectory, CellDesign, CycleLife, CyclingCondition, Protocol};
use crate::error::{Error, Result};
use crate::interpreter::CheckupProfiles;
use crate::learner::CellGroup;

pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Historical,
    Test,
}

/// Check-ups at the first cycle and at the cycle nearest 50 EFC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyProfiles {
    pub first: CheckupProfiles,
    pub fiftieth: CheckupProfiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub cell_id: String,
    pub cell_type: String,
    pub group_id: String,
    /// Key into the manifest design table.
    pub design: String,
    pub condition: CyclingCondition,
    /// Key into the manifest protocol table.
    pub protocol: String,
    pub nominal_capacity: f64,
    pub trajectory: CapacityTrajectory,
    pub early_profiles: EarlyProfiles,
    /// Evaluation label; `None` once stripped.
    pub observed_life: Option<CycleLife>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub role: Role,
    pub designs: Vec<CellDesign>,
    pub protocols: BTreeMap<String, Protocol>,
    pub provenance: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub records: Vec<CellRecord>,
}

fn invariant(path: &str, line: usize, message: String) -> Error {
    Error::Invariant { path: PathBuf::from(path), line, message }
}

impl Dataset {
    pub fn design(&self, name: &str) -> Result<&CellDesign> {
        self.manifest
            .designs
            .iter()
            .find(|d| d.name == name)
            .ok_or_else(|| Error::InvalidInput(format!("design {name} not in manifest")))
    }

    pub fn protocol(&self, name: &str) -> Result<&Protocol> {
        self.manifest.protocols.get(name).ok_or_else(|| Error::InvalidInput(format!("protocol {name} not in manifest")))
    }

    /// Checks every record invariant; `line` in errors is the `cells.csv` line.
    pub fn validate(&self) -> Result<()> {
        if self.manifest.version != DATASET_VERSION {
            return Err(Error::SchemaVersion {
                path: MANIFEST_FILE.into(),
                found: self.manifest.version,
                expected: DATASET_VERSION,
            });
        }
        let mut ids = HashSet::new();
        let mut groups: BTreeMap<&str, &CellRecord> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            let line = i + 2;
            let bad = |m: String| invariant(CELLS_FILE, line, m);
            if !ids.insert(r.cell_id.as_str()) {
                return Err(bad(format!("duplicate cell_id {}", r.cell_id)));
            }
            let design = self.design(&r.design).map_err(|e| bad(e.to_string()))?;
            self.protocol(&r.protocol).map_err(|e| bad(e.to_string()))?;
            r.condition.validate().map_err(|e| bad(e.to_string()))?;
            if !(r.nominal_capacity > 0.0) {
                return Err(bad(format!("cell {} has non-positive nominal capacity", r.cell_id)));
            }
            if let Some(life) = r.observed_life {
                if !(life.efc() > 0.0) {
                    return Err(bad(format!("cell {} has non-positive observed life", r.cell_id)));
                }
            }
            r.trajectory.validate().map_err(|e| bad(format!("cell {}: {e}", r.cell_id)))?;
            let p = &r.early_profiles;
            for (c, want) in [(&p.first, None), (&p.fiftieth, Some(()))] {
                if c.cell_id() != r.cell_id || c.charge.cell_id != r.cell_id {
                    return Err(bad(format!("profiles for {} carry another cell id", r.cell_id)));
                }
                if want.is_none() && c.cycle_index() != 1 {
                    return Err(bad(format!("first check-up of {} is cycle {}", r.cell_id, c.cycle_index())));
                }
                c.discharge.validate(design).map_err(|e| bad(e.to_string()))?;
                c.charge.validate(design).map_err(|e| bad(e.to_string()))?;
            }
            if let Some(g) = groups.get(r.group_id.as_str()) {
                if g.cell_type != r.cell_type || g.condition != r.condition || g.protocol != r.protocol {
                    return Err(bad(format!("cell {} disagrees with the rest of group {}", r.cell_id, r.group_id)));
                }
            } else {
                groups.insert(&r.group_id, r);
            }
        }
        Ok(())
    }

    /// Groups in order of first appearance.
    pub fn groups(&self) -> Result<Vec<CellGroup>> {
        let mut out: Vec<CellGroup> = Vec::new();
        for r in &self.records {
            match out.iter_mut().find(|g| g.group_id == r.group_id) {
                Some(g) => g.members.push(r.cell_id.clone()),
                None => out.push(CellGroup {
                    group_id: r.group_id.clone(),
                    cell_type: r.cell_type.clone(),
                    members: vec![r.cell_id.clone()],
                    condition: r.condition,
                    protocol: self.protocol(&r.protocol)?.clone(),
                }),
            }
        }
        Ok(out)
    }

    /// Copy without evaluation labels.
    pub fn without_labels(&self) -> Self {
        let mut d = self.clone();
        d.records.iter_mut().for_each(|r| r.observed_life = None);
        d
    }
}
