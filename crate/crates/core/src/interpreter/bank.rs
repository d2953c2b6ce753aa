//! Simulation banks: prior draws paired with their simulated check-up signatures.
//!
//! File layout (all integers and floats little-endian):
//!
//! ```text
//! magic        8 bytes  "DLBANK\0\0"
//! version      u32
//! prior hash   32 bytes (SHA-256)
//! bank key     32 bytes (SHA-256 of design, prior, check-up, size, seed)
//! rows         u64
//! n_params     u32      (14)
//! n_signature  u32      (202)
//! failed       u64
//! total        u64
//! rows × (n_params + n_signature) f64, row-major
//! ```

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::observe::{derive_full_params, Checkup, CheckupProfiles, SIGNATURE_LEN};
use super::prior::{sample_prior, FreeParams, PriorConfig};
use crate::cellsim::{CellDesign, PhysParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DLBANK\0\0";
pub const BANK_VERSION: u32 = 1;

/// Environment variable naming the on-disk bank cache directory.
pub const CACHE_DIR_ENV: &str = "DL_CACHE_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankSpec {
    pub prior: PriorConfig,
    pub checkup: Checkup,
    pub samples: usize,
    pub seed: u64,
}

impl Default for BankSpec {
    fn default() -> Self {
        Self { prior: PriorConfig::default(), checkup: Checkup::default(), samples: 50_000, seed: 0 }
    }
}

impl BankSpec {
    pub fn key(&self, design: &CellDesign) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(design.bank_key().as_bytes());
        h.update(self.prior.hash());
        h.update(self.checkup.hash());
        h.update((self.samples as u64).to_le_bytes());
        h.update(self.seed.to_le_bytes());
        h.finalize().into()
    }
}

/// Successful simulations of one batch, in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub params: Vec<PhysParams>,
    pub profiles: Vec<CheckupProfiles>,
    /// Input position of each surviving sample.
    pub source: Vec<usize>,
    pub failed: usize,
}

fn simulate_one(sample: &FreeParams, design: &CellDesign, checkup: &Checkup, i: usize) -> Result<(PhysParams, CheckupProfiles)> {
    let p = derive_full_params(sample, design)?;
    let prof = checkup.run(&p, design, &format!("sample-{i}"), 1)?;
    Ok((p, prof))
}

fn check_failures(failed: usize, total: usize) -> Result<()> {
    if 2 * failed > total {
        return Err(Error::AllFailed { failed, total });
    }
    Ok(())
}

/// Simulates the check-up for every draw; failures are dropped and counted.
pub fn simulate_batch(samples: &[FreeParams], design: &CellDesign, checkup: &Checkup) -> Result<Batch> {
    let results: Vec<_> =
        samples.par_iter().enumerate().map(|(i, s)| simulate_one(s, design, checkup, i).ok()).collect();
    let mut batch = Batch { params: Vec::new(), profiles: Vec::new(), source: Vec::new(), failed: 0 };
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Some((p, prof)) => {
                batch.params.push(p);
                batch.profiles.push(prof);
                batch.source.push(i);
            }
            None => batch.failed += 1,
        }
    }
    check_failures(batch.failed, samples.len())?;
    Ok(batch)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationBank {
    pub key: [u8; 32],
    pub prior_hash: [u8; 32],
    pub params: Vec<[f64; PhysParams::COUNT]>,
    pub signatures: Vec<Vec<f64>>,
    pub failed: usize,
    pub total: usize,
}

impl SimulationBank {
    pub fn build(design: &CellDesign, spec: &BankSpec) -> Result<Self> {
        let draws = sample_prior(spec.samples, &spec.prior, spec.seed)?;
        let rows: Vec<_> = draws
            .par_iter()
            .enumerate()
            .map(|(i, s)| simulate_one(s, design, &spec.checkup, i).ok().map(|(p, prof)| (p.to_array(), prof.signature())))
            .collect();
        let total = rows.len();
        let (params, signatures): (Vec<_>, Vec<_>) = rows.into_iter().flatten().unzip();
        let failed = total - params.len();
        check_failures(failed, total)?;
        Ok(Self { key: spec.key(design), prior_hash: spec.prior.hash(), params, signatures, failed, total })
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(f);
        let io = |e| Error::io(path, e);
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&BANK_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&self.prior_hash).map_err(io)?;
        w.write_all(&self.key).map_err(io)?;
        w.write_all(&(self.len() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&(PhysParams::COUNT as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&(SIGNATURE_LEN as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&(self.failed as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&(self.total as u64).to_le_bytes()).map_err(io)?;
        for (p, s) in self.params.iter().zip(&self.signatures) {
            for x in p.iter().chain(s) {
                w.write_all(&x.to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)?;
        drop(w);
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingFile(path.to_path_buf())
            } else {
                Error::io(path, e)
            }
        })?;
        let bad = |m: &str| Error::Invariant { path: path.to_path_buf(), line: 0, message: m.to_string() };
        let mut r = Reader { buf: &bytes, pos: 0 };
        if r.take(8).ok_or_else(|| bad("truncated header"))? != MAGIC {
            return Err(bad("not a simulation bank"));
        }
        let version = r.u32().ok_or_else(|| bad("truncated header"))?;
        if version != BANK_VERSION {
            return Err(Error::SchemaVersion { path: path.to_path_buf(), found: version, expected: BANK_VERSION });
        }
        let prior_hash: [u8; 32] = r.take(32).ok_or_else(|| bad("truncated header"))?.try_into().expect("32 bytes");
        let key: [u8; 32] = r.take(32).ok_or_else(|| bad("truncated header"))?.try_into().expect("32 bytes");
        let rows = r.u64().ok_or_else(|| bad("truncated header"))? as usize;
        let np = r.u32().ok_or_else(|| bad("truncated header"))? as usize;
        let ns = r.u32().ok_or_else(|| bad("truncated header"))? as usize;
        let failed = r.u64().ok_or_else(|| bad("truncated header"))? as usize;
        let total = r.u64().ok_or_else(|| bad("truncated header"))? as usize;
        if np != PhysParams::COUNT || ns != SIGNATURE_LEN {
            return Err(bad("unexpected row layout"));
        }
        let mut params = Vec::with_capacity(rows);
        let mut signatures = Vec::with_capacity(rows);
        for _ in 0..rows {
            let mut p = [0.0; PhysParams::COUNT];
            for x in p.iter_mut() {
                *x = r.f64().ok_or_else(|| bad("truncated rows"))?;
            }
            let s = (0..ns).map(|_| r.f64()).collect::<Option<Vec<_>>>().ok_or_else(|| bad("truncated rows"))?;
            params.push(p);
            signatures.push(s);
        }
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { key, prior_hash, params, signatures, failed, total })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }
    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Option<f64> {
        self.take(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    /// Requests served from memory.
    pub hits: usize,
    /// Requests served by reading a bank file.
    pub loads: usize,
    /// Requests that had to simulate.
    pub builds: usize,
}

/// Banks keyed by design and bank spec; concurrent reads, one builder at a time.
#[derive(Debug, Default)]
pub struct BankCache {
    dir: Option<PathBuf>,
    banks: RwLock<HashMap<[u8; 32], Arc<SimulationBank>>>,
    build: Mutex<()>,
    hits: AtomicUsize,
    loads: AtomicUsize,
    builds: AtomicUsize,
}

impl BankCache {
    pub fn new(dir: Option<PathBuf>) -> Self {
        Self { dir, ..Self::default() }
    }

    /// Uses the directory named by `DL_CACHE_DIR`, if set.
    pub fn from_env() -> Self {
        Self::new(std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from))
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            loads: self.loads.load(Ordering::Relaxed),
            builds: self.builds.load(Ordering::Relaxed),
        }
    }

    fn lookup(&self, key: &[u8; 32]) -> Option<Arc<SimulationBank>> {
        self.banks.read().expect("bank cache lock").get(key).cloned()
    }

    pub fn get_or_build(&self, design: &CellDesign, spec: &BankSpec) -> Result<Arc<SimulationBank>> {
        let key = spec.key(design);
        if let Some(b) = self.lookup(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(b);
        }
        let _guard = self.build.lock().expect("bank build lock");
        if let Some(b) = self.lookup(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(b);
        }
        let file = self.dir.as_ref().map(|d| d.join(format!("{}.bank", hex::encode(key))));
        let from_disk = match &file {
            Some(f) if f.exists() => Some(SimulationBank::read(f)?).filter(|b| b.key == key),
            _ => None,
        };
        let bank = match from_disk {
            Some(b) => {
                self.loads.fetch_add(1, Ordering::Relaxed);
                b
            }
            None => {
                self.builds.fetch_add(1, Ordering::Relaxed);
                let b = SimulationBank::build(design, spec)?;
                if let (Some(f), Some(d)) = (&file, &self.dir) {
                    fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
                    b.write(f)?;
                }
                b
            }
        };
        let bank = Arc::new(bank);
        self.banks.write().expect("bank cache lock").insert(key, bank.clone());
        Ok(bank)
    }
}
