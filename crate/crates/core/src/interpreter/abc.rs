//! Quantile rejection ABC.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbcConfig {
    /// Fraction of the bank accepted, in (0, 0.2].
    pub quantile: f64,
    pub min_accept: usize,
    /// Weight of the log-capacity channels, in volts per unit log capacity.
    pub capacity_weight: f64,
}

impl Default for AbcConfig {
    fn default() -> Self {
        Self { quantile: 0.01, min_accept: 200, capacity_weight: 1.0 }
    }
}

impl AbcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.quantile > 0.0 && self.quantile <= 0.2) {
            return Err(Error::InvalidInput(format!("ABC quantile {} outside (0, 0.2]", self.quantile)));
        }
        if !(self.capacity_weight >= 0.0) {
            return Err(Error::InvalidInput("capacity weight must be non-negative".into()));
        }
        Ok(())
    }
}

/// Number of draws accepted at `quantile` out of `n`.
pub fn accept_count(n: usize, quantile: f64) -> usize {
    ((quantile * n as f64 - 1e-9).ceil() as usize).clamp(1, n.max(1))
}

/// `sqrt(Σ w_k (a_k − b_k)²)`.
pub fn weighted_distance<T: Real>(a: &[T], b: &[T], w: &[T]) -> T {
    a.iter().zip(b).zip(w).map(|((x, y), w)| *w * (*x - *y) * (*x - *y)).sum::<T>().sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Acceptance<T> {
    /// Accepted row indices, nearest first (ties by index).
    pub indices: Vec<usize>,
    pub distances: Vec<T>,
}

/// Accepts the `quantile` fraction of simulated summaries closest to `observed`.
pub fn abc_reject<T: Real, S: AsRef<[T]> + Sync>(
    observed: &[T],
    simulated: &[S],
    weights: &[T],
    quantile: f64,
    min_accept: usize,
) -> Result<Acceptance<T>> {
    if observed.len() != weights.len() {
        return Err(Error::LengthMismatch(observed.len(), weights.len()));
    }
    abc_reject_by(simulated.len(), quantile, min_accept, |i| {
        let s = simulated[i].as_ref();
        if s.len() != observed.len() {
            return T::infinity();
        }
        weighted_distance(observed, s, weights)
    })
}

/// Rejection step over `n` candidates with an arbitrary distance; non-finite distances are dropped.
pub fn abc_reject_by<T: Real>(
    n: usize,
    quantile: f64,
    min_accept: usize,
    distance: impl Fn(usize) -> T,
) -> Result<Acceptance<T>> {
    if !(quantile > 0.0 && quantile <= 0.2) {
        return Err(Error::InvalidInput(format!("ABC quantile {quantile} outside (0, 0.2]")));
    }
    let mut d: Vec<(T, usize)> = (0..n).map(|i| (distance(i), i)).filter(|(x, _)| x.is_finite()).collect();
    let k = accept_count(n, quantile).min(d.len());
    if k < min_accept || k == 0 {
        return Err(Error::InsufficientAcceptance { accepted: k, required: min_accept.max(1) });
    }
    let cmp = |a: &(T, usize), b: &(T, usize)| a.0.partial_cmp(&b.0).expect("finite").then(a.1.cmp(&b.1));
    if k < d.len() {
        d.select_nth_unstable_by(k - 1, cmp);
        d.truncate(k);
    }
    d.sort_by(cmp);
    Ok(Acceptance { indices: d.iter().map(|x| x.1).collect(), distances: d.iter().map(|x| x.0).collect() })
}

/// Mean and population standard deviation of the accepted rows, column-wise.
pub fn moments<T: Real, S: AsRef<[T]>>(rows: &[S], accepted: &[usize]) -> (Vec<T>, Vec<T>) {
    let dim = accepted.first().map_or(0, |&i| rows[i].as_ref().len());
    let n = T::from_usize_lossy(accepted.len());
    let mut mean = vec![T::zero(); dim];
    for &i in accepted {
        for (m, x) in mean.iter_mut().zip(rows[i].as_ref()) {
            *m += *x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![T::zero(); dim];
    for &i in accepted {
        for ((v, x), m) in var.iter_mut().zip(rows[i].as_ref()).zip(&mean) {
            *v += (*x - *m) * (*x - *m);
        }
    }
    let sd = var.into_iter().map(|v| (v / n).sqrt()).collect();
    (mean, sd)
}
