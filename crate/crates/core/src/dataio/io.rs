use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{CellRecord, Dataset, DatasetManifest, EarlyProfiles, DATASET_VERSION};
use crate::cellsim::{CapacityTrajectory, CycleLife, CyclingCondition, TrajectoryPoint};
use crate::error::{Error, Result};
use crate::interpreter::{CheckupProfiles, Direction, ObservationProfile, GRID_POINTS};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CELLS_FILE: &str = "cells.csv";
pub const TRAJECTORIES_FILE: &str = "trajectories.csv";
pub const PROFILES_FILE: &str = "profiles.csv";

const CELL_HEADER: [&str; 11] = [
    "cell_id",
    "cell_type",
    "group_id",
    "design",
    "protocol",
    "ambient_t",
    "c_chg",
    "c_dis",
    "nominal_capacity",
    "observed_life",
    "life_status",
];
const TRAJECTORY_HEADER: [&str; 3] = ["cell_id", "efc", "capacity_ah"];

fn profile_header() -> Vec<String> {
    ["cell_id", "cycle_index", "direction", "capacity_ah"]
        .iter()
        .map(|s| s.to_string())
        .chain((0..GRID_POINTS).map(|k| format!("v{k:03}")))
        .collect()
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidInput(format!("{}: {other:?}", path.display())),
    })
}

fn f(x: f64) -> String {
    // Display prints the shortest string that round-trips.
    format!("{x}")
}

/// Writes the four dataset files into `dir`, creating it if needed.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = dir.join(MANIFEST_FILE);
    fs::write(&manifest, serde_json::to_string_pretty(&dataset.manifest)?).map_err(|e| Error::io(&manifest, e))?;

    let mut w = writer(&dir.join(CELLS_FILE))?;
    w.write_record(CELL_HEADER)?;
    for r in &dataset.records {
        let (life, status) = match r.observed_life {
            Some(CycleLife::Reached(x)) => (f(x), "reached"),
            Some(CycleLife::Censored(x)) => (f(x), "censored"),
            None => (String::new(), ""),
        };
        w.write_record([
            r.cell_id.as_str(),
            &r.cell_type,
            &r.group_id,
            &r.design,
            &r.protocol,
            &f(r.condition.ambient_t),
            &f(r.condition.c_chg),
            &f(r.condition.c_dis),
            &f(r.nominal_capacity),
            &life,
            status,
        ])?;
    }
    w.flush().map_err(|e| Error::io(dir.join(CELLS_FILE), e))?;

    let mut w = writer(&dir.join(TRAJECTORIES_FILE))?;
    w.write_record(TRAJECTORY_HEADER)?;
    for r in &dataset.records {
        for p in &r.trajectory.points {
            w.write_record([r.cell_id.clone(), f(p.efc), f(p.capacity_ah)])?;
        }
    }
    w.flush().map_err(|e| Error::io(dir.join(TRAJECTORIES_FILE), e))?;

    let mut w = writer(&dir.join(PROFILES_FILE))?;
    w.write_record(profile_header())?;
    for r in &dataset.records {
        for c in [&r.early_profiles.first, &r.early_profiles.fiftieth] {
            for p in [&c.discharge, &c.charge] {
                let dir_s = match p.direction {
                    Direction::Discharge => "discharge",
                    Direction::Charge => "charge",
                };
                let mut row = vec![p.cell_id.clone(), p.cycle_index.to_string(), dir_s.to_string(), f(p.capacity_ah)];
                row.extend(p.voltage.iter().map(|v| f(*v)));
                w.write_record(&row)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(dir.join(PROFILES_FILE), e))?;
    Ok(())
}

struct CsvFile {
    path: PathBuf,
    rows: Vec<csv::StringRecord>,
}

impl CsvFile {
    fn open(dir: &Path, name: &str, header: &[String]) -> Result<Self> {
        let path = dir.join(name);
        if !path.exists() {
            return Err(Error::MissingFile(path));
        }
        let mut rdr = csv::Reader::from_path(&path)?;
        let got: Vec<String> = rdr.headers()?.iter().map(|s| s.to_string()).collect();
        if got != header {
            return Err(Error::Invariant { path, line: 1, message: format!("unexpected header {got:?}") });
        }
        let rows = rdr.records().collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self { path, rows })
    }

    fn err(&self, i: usize, message: String) -> Error {
        Error::Invariant { path: self.path.clone(), line: i + 2, message }
    }

    fn num(&self, i: usize, col: usize) -> Result<f64> {
        let s = &self.rows[i][col];
        s.parse::<f64>().map_err(|_| self.err(i, format!("column {col}: not a number: {s:?}")))
    }
}

/// Loads and validates a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(mpath.clone()),
        _ => Error::io(&mpath, e),
    })?;
    let raw: serde_json::Value = serde_json::from_str(&text)?;
    let version = raw.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != DATASET_VERSION {
        return Err(Error::SchemaVersion { path: mpath, found: version, expected: DATASET_VERSION });
    }
    let manifest: DatasetManifest = serde_json::from_value(raw)?;

    let header = |h: &[&str]| h.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let cells = CsvFile::open(dir, super::CELLS_FILE, &header(&CELL_HEADER))?;
    let trajectories = CsvFile::open(dir, TRAJECTORIES_FILE, &header(&TRAJECTORY_HEADER))?;
    let profiles = CsvFile::open(dir, PROFILES_FILE, &profile_header())?;

    let mut traj: HashMap<String, Vec<TrajectoryPoint>> = HashMap::new();
    for i in 0..trajectories.rows.len() {
        let id = trajectories.rows[i][0].to_string();
        let p = TrajectoryPoint { efc: trajectories.num(i, 1)?, capacity_ah: trajectories.num(i, 2)? };
        traj.entry(id).or_default().push(p);
    }
    let mut prof: HashMap<String, Vec<(usize, ObservationProfile)>> = HashMap::new();
    for i in 0..profiles.rows.len() {
        let row = &profiles.rows[i];
        let direction = match &row[2] {
            "discharge" => Direction::Discharge,
            "charge" => Direction::Charge,
            other => return Err(profiles.err(i, format!("unknown direction {other:?}"))),
        };
        let cycle_index: u32 = row[1].parse().map_err(|_| profiles.err(i, format!("bad cycle index {:?}", &row[1])))?;
        let voltage = (0..GRID_POINTS).map(|k| profiles.num(i, 4 + k)).collect::<Result<Vec<_>>>()?;
        let p = ObservationProfile {
            cell_id: row[0].to_string(),
            cycle_index,
            direction,
            voltage,
            capacity_ah: profiles.num(i, 3)?,
        };
        prof.entry(row[0].to_string()).or_default().push((i, p));
    }

    let mut records = Vec::with_capacity(cells.rows.len());
    for i in 0..cells.rows.len() {
        let row = &cells.rows[i];
        let id = row[0].to_string();
        let observed_life = match (&row[9], &row[10]) {
            ("", "") => None,
            (_, "reached") => Some(CycleLife::Reached(cells.num(i, 9)?)),
            (_, "censored") => Some(CycleLife::Censored(cells.num(i, 9)?)),
            (_, s) => return Err(cells.err(i, format!("unknown life status {s:?}"))),
        };
        let points = traj.remove(&id).ok_or_else(|| cells.err(i, format!("no trajectory for cell {id}")))?;
        let mut ps = prof.remove(&id).ok_or_else(|| cells.err(i, format!("no profiles for cell {id}")))?;
        ps.sort_by_key(|(line, p)| (p.cycle_index, *line));
        if ps.len() != 4 || ps[0].1.cycle_index != ps[1].1.cycle_index || ps[2].1.cycle_index != ps[3].1.cycle_index {
            return Err(cells.err(i, format!("cell {id} needs two check-ups with both directions")));
        }
        let mut it = ps.into_iter().map(|(_, p)| p);
        let mut checkup = || -> Result<CheckupProfiles> {
            let (a, b) = (it.next().expect("four rows"), it.next().expect("four rows"));
            match (a.direction, b.direction) {
                (Direction::Discharge, Direction::Charge) => Ok(CheckupProfiles { discharge: a, charge: b }),
                (Direction::Charge, Direction::Discharge) => Ok(CheckupProfiles { discharge: b, charge: a }),
                _ => Err(cells.err(i, format!("cell {id} has a check-up without both directions"))),
            }
        };
        let first = checkup()?;
        let fiftieth = checkup()?;
        records.push(CellRecord {
            cell_id: id,
            cell_type: row[1].to_string(),
            group_id: row[2].to_string(),
            design: row[3].to_string(),
            protocol: row[4].to_string(),
            condition: CyclingCondition::new(cells.num(i, 5)?, cells.num(i, 6)?, cells.num(i, 7)?),
            nominal_capacity: cells.num(i, 8)?,
            trajectory: CapacityTrajectory { points },
            early_profiles: EarlyProfiles { first, fiftieth },
            observed_life,
        });
    }
    if let Some((id, rows)) = prof.iter().min_by_key(|(id, _)| *id) {
        return Err(profiles.err(rows[0].0, format!("rows for unknown cell {id}")));
    }
    if let Some(id) = traj.keys().min() {
        return Err(Error::Invariant {
            path: trajectories.path.clone(),
            line: 0,
            message: format!("rows for unknown cell {id}"),
        });
    }
    let ds = Dataset { manifest, records };
    ds.validate().map_err(|e| match e {
        Error::Invariant { path, line, message } => Error::Invariant { path: dir.join(path), line, message },
        other => other,
    })?;
    Ok(ds)
}
