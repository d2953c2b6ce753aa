//! Elastic net by cyclic coordinate descent on standardized features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::stats::{mean, std_dev, Standardizer};

/// Linear model on standardized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseWeights<T> {
    pub weights: Vec<T>,
    pub bias: T,
    pub standardization: Standardizer<T>,
}

impl<T: Real> BaseWeights<T> {
    /// `Σ w_j·x̃_j + b`, without flooring.
    pub fn raw_predict(&self, x: &[T]) -> Result<T> {
        let z = self.standardization.transform(x)?;
        Ok(z.iter().zip(&self.weights).map(|(a, b)| *a * *b).sum::<T>() + self.bias)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnetOptions {
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for EnetOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_sweeps: 200_000 }
    }
}

/// `(1/2n)·‖y − Zw − b‖² + l1·‖w‖₁ + (l2/2)·‖w‖²` for standardized `Z`.
pub fn enet_objective<T: Real>(z: &[Vec<T>], y: &[T], w: &[T], b: T, l1: T, l2: T) -> T {
    let n = T::from_usize_lossy(y.len());
    let rss: T = z
        .iter()
        .zip(y)
        .map(|(row, yi)| {
            let r = *yi - b - row.iter().zip(w).map(|(a, c)| *a * *c).sum::<T>();
            r * r
        })
        .sum();
    rss / (T::lit(2.0) * n)
        + l1 * w.iter().map(|x| x.abs()).sum::<T>()
        + l2 / T::lit(2.0) * w.iter().map(|x| *x * *x).sum::<T>()
}

fn soft_threshold<T: Real>(x: T, t: T) -> T {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        T::zero()
    }
}

/// Fits with a standardization computed from `features`.
pub fn fit_base<T: Real>(features: &[Vec<T>], lives: &[T], l1: T, l2: T) -> Result<BaseWeights<T>> {
    let s = Standardizer::fit(features)?;
    fit_base_with(&s, features, lives, l1, l2, &EnetOptions::default())
}

/// Fits with a supplied standardization (shared across condition clusters).
pub fn fit_base_with<T: Real>(
    standardization: &Standardizer<T>,
    features: &[Vec<T>],
    lives: &[T],
    l1: T,
    l2: T,
    opts: &EnetOptions,
) -> Result<BaseWeights<T>> {
    let n = lives.len();
    if features.len() != n {
        return Err(Error::LengthMismatch(features.len(), n));
    }
    if n < 2 {
        return Err(Error::DegenerateData("elastic net needs at least two samples".into()));
    }
    if l1 < T::zero() || l2 < T::zero() {
        return Err(Error::InvalidInput("penalties must be non-negative".into()));
    }
    if std_dev(lives) <= T::zero() {
        return Err(Error::DegenerateData("target has zero variance".into()));
    }
    let z: Vec<Vec<T>> = features.iter().map(|x| standardization.transform_lenient(x)).collect();
    let p = standardization.dim();
    let nt = T::from_usize_lossy(n);
    // Column means of z are not exactly zero under a foreign standardization,
    // so the intercept is updated alongside the weights.
    let col_sq: Vec<T> = (0..p).map(|j| z.iter().map(|r| r[j] * r[j]).sum::<T>() / nt).collect();
    let mut w = vec![T::zero(); p];
    let mut b = mean(lives);
    let mut resid: Vec<T> = lives.iter().map(|y| *y - b).collect();
    let tol = T::lit(opts.tol);
    // Coordinate steps are measured in target units.
    let scale = std_dev(lives);
    for sweep in 0.. {
        if sweep >= opts.max_sweeps {
            return Err(Error::NonConvergence(format!("elastic net after {} sweeps", opts.max_sweeps)));
        }
        let mut max_step = T::zero();
        for j in 0..p {
            if col_sq[j] <= T::zero() || !standardization.is_retained(j) {
                continue;
            }
            let rho = z.iter().zip(&resid).map(|(r, e)| r[j] * *e).sum::<T>() / nt + col_sq[j] * w[j];
            let new = soft_threshold(rho, l1) / (col_sq[j] + l2);
            let d = new - w[j];
            if d != T::zero() {
                for (e, r) in resid.iter_mut().zip(&z) {
                    *e -= d * r[j];
                }
                w[j] = new;
                max_step = max_step.max(d.abs());
            }
        }
        let db = resid.iter().copied().sum::<T>() / nt;
        if db != T::zero() {
            b += db;
            resid.iter_mut().for_each(|e| *e -= db);
            max_step = max_step.max(db.abs());
        }
        if max_step <= tol * scale {
            break;
        }
    }
    Ok(BaseWeights { weights: w, bias: b, standardization: standardization.clone() })
}

/// Largest subgradient-condition violation of a fit, in objective-gradient units.
pub fn kkt_violation<T: Real>(model: &BaseWeights<T>, features: &[Vec<T>], lives: &[T], l1: T, l2: T) -> T {
    let z: Vec<Vec<T>> = features.iter().map(|x| model.standardization.transform_lenient(x)).collect();
    let n = T::from_usize_lossy(lives.len());
    let resid: Vec<T> = z
        .iter()
        .zip(lives)
        .map(|(r, y)| *y - model.bias - r.iter().zip(&model.weights).map(|(a, c)| *a * *c).sum::<T>())
        .collect();
    let mut worst = (resid.iter().copied().sum::<T>() / n).abs();
    for j in 0..model.weights.len() {
        if !model.standardization.is_retained(j) {
            continue;
        }
        let g = z.iter().zip(&resid).map(|(r, e)| r[j] * *e).sum::<T>() / n - l2 * model.weights[j];
        let v = if model.weights[j] != T::zero() {
            (g - l1 * model.weights[j].signum()).abs()
        } else {
            (g.abs() - l1).max(T::zero())
        };
        worst = worst.max(v);
    }
    worst
}
