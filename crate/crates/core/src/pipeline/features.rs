use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rayon::prelude::*;

use crate::dataio::{CellRecord, Dataset};
use crate::error::{Error, Result};
use crate::interpreter::{extract_features, infer_posterior, AbcConfig, BankCache, BankSpec, FeatureVector28, SimulationBank};
use crate::oracle::HistoricalCell;

/// Posterior at both check-ups, reduced to the 28 features.
pub fn cell_features(record: &CellRecord, bank: &SimulationBank, spec: &BankSpec, abc: &AbcConfig) -> Result<FeatureVector28> {
    let first = infer_posterior(&record.early_profiles.first, bank, &spec.prior, abc)?.full(bank, &spec.prior);
    let later = infer_posterior(&record.early_profiles.fiftieth, bank, &spec.prior, abc)?.full(bank, &spec.prior);
    extract_features(&first, &later)
}

/// Features for every cell in `only` (or all cells), keyed by cell id.
/// Banks are built one design at a time; cells fan out in parallel.
pub fn dataset_features(
    ds: &Dataset,
    only: Option<&BTreeSet<String>>,
    spec: &BankSpec,
    abc: &AbcConfig,
    cache: &BankCache,
) -> Result<BTreeMap<String, FeatureVector28>> {
    let records: Vec<&CellRecord> = ds.records.iter().filter(|r| only.is_none_or(|s| s.contains(&r.cell_id))).collect();
    if let Some(s) = only {
        if let Some(id) = s.iter().find(|id| !records.iter().any(|r| &r.cell_id == *id)) {
            return Err(Error::InvalidInput(format!("cell {id} not in dataset")));
        }
    }
    let mut banks: BTreeMap<&str, Arc<SimulationBank>> = BTreeMap::new();
    for r in &records {
        if !banks.contains_key(r.design.as_str()) {
            banks.insert(&r.design, cache.get_or_build(ds.design(&r.design)?, spec)?);
        }
    }
    let feats = records
        .par_iter()
        .map(|r| cell_features(r, &banks[r.design.as_str()], spec, abc).map(|f| (r.cell_id.clone(), f)))
        .collect::<Result<Vec<_>>>()?;
    Ok(feats.into_iter().collect())
}

/// Labelled historical cells, in dataset order.
pub fn historical_cells(ds: &Dataset, spec: &BankSpec, abc: &AbcConfig, cache: &BankCache) -> Result<Vec<HistoricalCell>> {
    let feats = dataset_features(ds, None, spec, abc, cache)?;
    ds.records
        .iter()
        .map(|r| {
            let life = r
                .observed_life
                .ok_or_else(|| Error::InvalidInput(format!("historical cell {} has no observed life", r.cell_id)))?;
            Ok(HistoricalCell {
                cell_id: r.cell_id.clone(),
                condition: r.condition,
                features: feats[&r.cell_id].to_vec(),
                life: life.efc(),
            })
        })
        .collect()
}
