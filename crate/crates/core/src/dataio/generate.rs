//! Deterministic synthetic corpora built with the cell simulator.
//!
//! Every cell draws an initial parameter set around its family centre and a
//! degradation-rate multiplier `m = family · type · cell · coupling`, then is
//! aged to end of life. The first three factors are log-normal; the coupling
//! ties the rate to the cell's own anode, so thinner active material and
//! slower kinetics (higher local current density) age faster. Its observations are standardized check-ups
//! on the parameter state at cycle 1 and at the cycle nearest 50 EFC.

use std::collections::{BTreeMap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CellRecord, Dataset, DatasetManifest, EarlyProfiles, Role, DATASET_VERSION};
use crate::cellsim::{
    age_cell_with, consistent_params, cycle_life, AgingOptions, CellDesign, CyclingCondition, DegradationConfig,
    PhysParams, Protocol, ReferenceFree,
};
use crate::error::{Error, Result};
use crate::interpreter::{Checkup, CheckupProfiles};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub name: String,
    pub thickness_n: f64,
    pub thickness_p: f64,
    pub nominal_capacity: f64,
}

impl DesignSpec {
    pub fn build(&self) -> CellDesign {
        CellDesign::sized(&self.name, self.thickness_n, self.thickness_p, self.nominal_capacity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub group_id: String,
    pub condition: CyclingCondition,
    pub protocol: String,
    pub cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeSpec {
    pub cell_type: String,
    pub design: String,
    pub groups: Vec<GroupSpec>,
}

/// Parameter family of a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    /// Centre of the initial free parameters.
    pub centre: ReferenceFree,
    /// Per-field log-normal spread of the initial parameters across cells.
    pub spread: ReferenceFree,
    /// Median degradation-rate multiplier of the family.
    pub rate_multiplier: f64,
    /// Log-sd of the per-type multiplier.
    pub type_rate_sd: f64,
    /// Log-sd of the per-cell multiplier.
    pub cell_rate_sd: f64,
    #[serde(default)]
    pub coupling: RateCoupling,
}

/// Power-law dependence of the degradation rate on the initial anode state,
/// relative to the reference cell: `(eps_ref / eps_s_n)^eps_s_n · (k_ref / k_n)^k_n`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RateCoupling {
    pub eps_s_n: f64,
    pub k_n: f64,
}

impl RateCoupling {
    pub fn factor(&self, free: &ReferenceFree) -> f64 {
        let r = ReferenceFree::default();
        (r.eps_s_n / free.eps_s_n).powf(self.eps_s_n) * (r.k_n / free.k_n).powf(self.k_n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub role: Role,
    pub seed: u64,
    pub designs: Vec<DesignSpec>,
    pub protocols: BTreeMap<String, Protocol>,
    pub types: Vec<TypeSpec>,
    /// Rates at multiplier 1.
    pub degradation: DegradationConfig,
    pub family: FamilySpec,
    pub horizon_efc: f64,
    pub rpt_period_efc: f64,
    pub retention: f64,
    /// Gaussian noise added to every check-up voltage sample (V).
    pub voltage_noise_v: f64,
    pub checkup: Checkup,
}

fn base_degradation() -> DegradationConfig {
    DegradationConfig {
        sei_rate: 2e-4,
        sei_activation: 4000.0,
        lam_rate_n: 4e-5,
        lam_rate_p: 3e-5,
        lli_rate: 8e-5,
        noise_sd: 0.002,
        sei_lithium_loss: 2.0,
    }
}

fn default_spread() -> ReferenceFree {
    ReferenceFree {
        d_s_n: 0.15,
        d_s_p: 0.15,
        k_n: 0.15,
        k_p: 0.15,
        d_e: 0.10,
        sigma_e: 0.05,
        r_f: 0.20,
        eps_s_n: 0.015,
        eps_s_p: 0.015,
        theta_h_n: 0.004,
    }
}

fn anode_coupling() -> RateCoupling {
    RateCoupling { eps_s_n: 12.0, k_n: 1.0 }
}

fn protocols() -> BTreeMap<String, Protocol> {
    BTreeMap::from([("cc_cc".to_string(), Protocol::cc_cc())])
}

impl GeneratorConfig {
    /// Small-format historical corpus: four 5 Ah designs cycled at twelve
    /// conditions, four cells per design and condition.
    pub fn historical(seed: u64) -> Self {
        let designs = vec![
            DesignSpec { name: "HS-a".into(), thickness_n: 70e-6, thickness_p: 62e-6, nominal_capacity: 5.0 },
            DesignSpec { name: "HS-b".into(), thickness_n: 78e-6, thickness_p: 69e-6, nominal_capacity: 5.0 },
            DesignSpec { name: "HS-c".into(), thickness_n: 74e-6, thickness_p: 66e-6, nominal_capacity: 5.0 },
            DesignSpec { name: "HS-d".into(), thickness_n: 82e-6, thickness_p: 72e-6, nominal_capacity: 5.0 },
        ];
        let mut types = Vec::new();
        for d in &designs {
            let mut groups = Vec::new();
            for t in [15.0, 25.0, 35.0, 45.0] {
                for (c, dis) in [(0.5, 0.5), (1.0, 1.0), (1.5, 1.0)] {
                    groups.push(GroupSpec {
                        group_id: format!("{}-T{t}-C{c}-D{dis}", d.name),
                        condition: CyclingCondition::new(t, c, dis),
                        protocol: "cc_cc".into(),
                        cells: 4,
                    });
                }
            }
            types.push(TypeSpec { cell_type: d.name.clone(), design: d.name.clone(), groups });
        }
        Self {
            role: Role::Historical,
            seed,
            designs,
            protocols: protocols(),
            types,
            degradation: base_degradation(),
            family: FamilySpec {
                centre: ReferenceFree::default(),
                // Wide in the anode parameters so the corpus spans what later families look like.
                spread: ReferenceFree { eps_s_n: 0.03, k_n: 0.3, ..default_spread() },
                rate_multiplier: 1.0,
                type_rate_sd: 0.0,
                cell_rate_sd: 0.1,
                coupling: anode_coupling(),
            },
            horizon_efc: 5000.0,
            rpt_period_efc: 25.0,
            retention: 0.9,
            voltage_noise_v: 0.0,
            checkup: Checkup::default(),
        }
    }

    /// Large-format test corpus: eight cell types over four 80 Ah designs,
    /// 37 groups and 123 cells. The family starts from shifted transport,
    /// kinetics and film; through the anode coupling it ages about 1.6×
    /// faster than the historical one.
    pub fn test_family(seed: u64) -> Self {
        let designs = vec![
            DesignSpec { name: "PL-a".into(), thickness_n: 85.2e-6, thickness_p: 75.6e-6, nominal_capacity: 80.0 },
            DesignSpec { name: "PL-b".into(), thickness_n: 80e-6, thickness_p: 71e-6, nominal_capacity: 76.0 },
            DesignSpec { name: "PL-c".into(), thickness_n: 90e-6, thickness_p: 80e-6, nominal_capacity: 84.0 },
            DesignSpec { name: "PL-d".into(), thickness_n: 88e-6, thickness_p: 77e-6, nominal_capacity: 73.0 },
        ];
        let sizes = [6usize, 6, 6, 5, 4, 4, 4, 2];
        // Twelve four-cell groups, the rest with three: 123 cells.
        let four_cell = |k: usize| k.is_multiple_of(3) && k < 36;
        let temps = [15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 45.0];
        let chg = [0.5, 0.75, 1.0, 1.25, 1.5];
        let dis = [0.5, 0.75, 1.0];
        let mut types = Vec::new();
        let mut k = 0;
        for (t, &n) in sizes.iter().enumerate() {
            let mut groups = Vec::new();
            let mut used = HashSet::new();
            for g in 0..n {
                // Spread temperatures within the type; rates cycle with a type offset.
                let mut ti = (g * 3 + t) % temps.len();
                let mut ci = (g + 2 * t) % chg.len();
                let di = (g + t) % dis.len();
                while !used.insert((ti, ci, di)) {
                    ti = (ti + 1) % temps.len();
                    ci = (ci + 1) % chg.len();
                }
                groups.push(GroupSpec {
                    group_id: format!("PA-{}{:02}", (b'a' + t as u8) as char, g + 1),
                    condition: CyclingCondition::new(temps[ti], chg[ci], dis[di]),
                    protocol: "cc_cc".into(),
                    cells: if four_cell(k) { 4 } else { 3 },
                });
                k += 1;
            }
            types.push(TypeSpec {
                cell_type: format!("PA-{}", (b'a' + t as u8) as char),
                design: designs[t % designs.len()].name.clone(),
                groups,
            });
        }
        let centre = ReferenceFree { d_s_n: 0.8e-13, k_n: 1.2e-11, r_f: 3.0e-3, eps_s_n: 0.735, ..ReferenceFree::default() };
        Self {
            role: Role::Test,
            seed,
            designs,
            protocols: protocols(),
            types,
            degradation: base_degradation(),
            family: FamilySpec {
                centre,
                spread: default_spread(),
                rate_multiplier: 1.0,
                type_rate_sd: 0.1,
                cell_rate_sd: 0.08,
                coupling: anode_coupling(),
            },
            horizon_efc: 5000.0,
            rpt_period_efc: 25.0,
            retention: 0.9,
            voltage_noise_v: 0.0,
            checkup: Checkup::default(),
        }
    }

    pub fn cell_count(&self) -> usize {
        self.types.iter().flat_map(|t| &t.groups).map(|g| g.cells).sum()
    }

    pub fn group_count(&self) -> usize {
        self.types.iter().map(|t| t.groups.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InfeasibleConfig(m));
        if self.types.is_empty() {
            return bad("no cell types".into());
        }
        let mut groups = HashSet::new();
        let mut designs = HashSet::new();
        for d in &self.designs {
            if !designs.insert(d.name.as_str()) {
                return bad(format!("duplicate design {}", d.name));
            }
            if !(d.nominal_capacity > 0.0 && d.thickness_n > 0.0 && d.thickness_p > 0.0) {
                return bad(format!("design {} has non-positive dimensions", d.name));
            }
        }
        for t in &self.types {
            if t.groups.is_empty() {
                return bad(format!("type {} has no groups", t.cell_type));
            }
            if !designs.contains(t.design.as_str()) {
                return bad(format!("type {} uses unknown design {}", t.cell_type, t.design));
            }
            for g in &t.groups {
                if g.cells == 0 {
                    return bad(format!("group {} has no cells", g.group_id));
                }
                if !groups.insert(g.group_id.as_str()) {
                    return bad(format!("duplicate group {}", g.group_id));
                }
                if !self.protocols.contains_key(&g.protocol) {
                    return bad(format!("group {} uses unknown protocol {}", g.group_id, g.protocol));
                }
                g.condition.validate().map_err(|e| Error::InfeasibleConfig(e.to_string()))?;
            }
        }
        let f = &self.family;
        if !(f.rate_multiplier > 0.0 && f.type_rate_sd >= 0.0 && f.cell_rate_sd >= 0.0)
            || !(f.coupling.eps_s_n.is_finite() && f.coupling.k_n.is_finite())
        {
            return bad("family rate multipliers must be positive".into());
        }
        if !(self.horizon_efc >= 50.0 && self.rpt_period_efc >= 1.0 && self.retention > 0.0 && self.retention < 1.0) {
            return bad("horizon, RPT period or retention out of range".into());
        }
        if !(self.voltage_noise_v >= 0.0) {
            return bad("voltage noise must be non-negative".into());
        }
        self.degradation.validate().map_err(|e| Error::InfeasibleConfig(e.to_string()))
    }
}

/// Stream-separated seed for entity `index` of kind `salt`.
fn derive_seed(seed: u64, salt: u64, index: u64) -> u64 {
    let mut x = seed ^ salt.wrapping_mul(0xD1B5_4A32_D192_ED03) ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    // splitmix64 finalizer
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn jitter(centre: &ReferenceFree, spread: &ReferenceFree, rng: &mut ChaCha8Rng) -> ReferenceFree {
    let mut g = |c: f64, s: f64| {
        let z: f64 = StandardNormal.sample(rng);
        c * (s * z).exp()
    };
    ReferenceFree {
        d_s_n: g(centre.d_s_n, spread.d_s_n),
        d_s_p: g(centre.d_s_p, spread.d_s_p),
        k_n: g(centre.k_n, spread.k_n),
        k_p: g(centre.k_p, spread.k_p),
        d_e: g(centre.d_e, spread.d_e),
        sigma_e: g(centre.sigma_e, spread.sigma_e),
        r_f: g(centre.r_f, spread.r_f),
        eps_s_n: g(centre.eps_s_n, spread.eps_s_n),
        eps_s_p: g(centre.eps_s_p, spread.eps_s_p),
        theta_h_n: g(centre.theta_h_n, spread.theta_h_n),
    }
}

fn scaled(d: &DegradationConfig, m: f64) -> DegradationConfig {
    DegradationConfig {
        sei_rate: d.sei_rate * m,
        lam_rate_n: d.lam_rate_n * m,
        lam_rate_p: d.lam_rate_p * m,
        lli_rate: d.lli_rate * m,
        ..*d
    }
}

struct CellPlan<'a> {
    cell_id: String,
    ty: &'a TypeSpec,
    group: &'a GroupSpec,
    index: u64,
    type_factor: f64,
}

fn add_noise(c: &mut CheckupProfiles, sd: f64, rng: &mut ChaCha8Rng) {
    if sd > 0.0 {
        for v in c.discharge.voltage.iter_mut().chain(c.charge.voltage.iter_mut()) {
            let z: f64 = StandardNormal.sample(rng);
            *v += sd * z;
        }
    }
}

fn generate_cell(cfg: &GeneratorConfig, design: &CellDesign, plan: &CellPlan) -> Result<CellRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2, plan.index));
    let free = jitter(&cfg.family.centre, &cfg.family.spread, &mut rng);
    let initial: PhysParams = consistent_params(&free, design)
        .map_err(|e| Error::InfeasibleConfig(format!("cell {}: {e}", plan.cell_id)))?;
    let z: f64 = StandardNormal.sample(&mut rng);
    let m = cfg.family.rate_multiplier
        * plan.type_factor
        * (cfg.family.cell_rate_sd * z).exp()
        * cfg.family.coupling.factor(&free);
    let deg = scaled(&cfg.degradation, m);
    let protocol = &cfg.protocols[&plan.group.protocol];
    let opts = AgingOptions { stop_after_eol_rpts: Some(1), ..AgingOptions::default() };
    let aged = age_cell_with(
        &initial,
        design,
        &plan.group.condition,
        protocol,
        cfg.horizon_efc,
        &deg,
        cfg.rpt_period_efc,
        derive_seed(cfg.seed, 3, plan.index),
        &opts,
    )?;
    let life = cycle_life(&aged.trajectory, cfg.retention)?;

    let k = aged.cycle_nearest(50.0);
    let efc50 = aged.early_cycle_efc[k];
    let p50 = aged
        .param_history
        .iter()
        .find(|(e, _)| *e == efc50)
        .map(|(_, p)| *p)
        .ok_or_else(|| Error::InvalidInput("missing early-cycle parameters".into()))?;
    let mut first = cfg.checkup.run(&initial, design, &plan.cell_id, 1)?;
    let mut fiftieth = cfg.checkup.run(&p50, design, &plan.cell_id, k as u32 + 1)?;
    add_noise(&mut first, cfg.voltage_noise_v, &mut rng);
    add_noise(&mut fiftieth, cfg.voltage_noise_v, &mut rng);

    Ok(CellRecord {
        cell_id: plan.cell_id.clone(),
        cell_type: plan.ty.cell_type.clone(),
        group_id: plan.group.group_id.clone(),
        design: design.name.clone(),
        condition: plan.group.condition,
        protocol: plan.group.protocol.clone(),
        nominal_capacity: design.nominal_capacity,
        trajectory: aged.trajectory,
        early_profiles: EarlyProfiles { first, fiftieth },
        observed_life: Some(life),
    })
}

/// Ages every configured cell. Output order and content depend only on the config.
pub fn gen_synthetic_dataset(cfg: &GeneratorConfig) -> Result<Dataset> {
    cfg.validate()?;
    let designs: Vec<CellDesign> = cfg.designs.iter().map(DesignSpec::build).collect();
    for d in &designs {
        d.validate().map_err(|e| Error::InfeasibleConfig(format!("design {}: {e}", d.name)))?;
    }
    let mut plans = Vec::new();
    for (ti, ty) in cfg.types.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1, ti as u64));
        let z: f64 = StandardNormal.sample(&mut rng);
        let type_factor = (cfg.family.type_rate_sd * z).exp();
        for g in &ty.groups {
            for c in 0..g.cells {
                plans.push(CellPlan {
                    cell_id: format!("{}-{}", g.group_id, c + 1),
                    ty,
                    group: g,
                    index: plans.len() as u64,
                    type_factor,
                });
            }
        }
    }
    let records = plans
        .par_iter()
        .map(|p| {
            let design = designs.iter().find(|d| d.name == p.ty.design).expect("validated design");
            generate_cell(cfg, design, p)
        })
        .collect::<Result<Vec<_>>>()?;
    let role = match cfg.role {
        Role::Historical => "historical",
        Role::Test => "test",
    };
    let manifest = DatasetManifest {
        version: DATASET_VERSION,
        role: cfg.role,
        designs,
        protocols: cfg.protocols.clone(),
        provenance: vec![format!(
            "synthetic {role} corpus: {} cells in {} groups, seed {}",
            cfg.cell_count(),
            cfg.group_count(),
            cfg.seed
        )],
        generator: Some(cfg.clone()),
    };
    let ds = Dataset { manifest, records };
    ds.validate()?;
    Ok(ds)
}
