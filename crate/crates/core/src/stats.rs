//! Descriptive statistics and column standardization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub fn mean<T: Real>(xs: &[T]) -> T {
    if xs.is_empty() {
        return T::nan();
    }
    xs.iter().copied().sum::<T>() / T::from_usize_lossy(xs.len())
}

/// Population standard deviation (divides by `n`).
pub fn std_dev<T: Real>(xs: &[T]) -> T {
    let m = mean(xs);
    let var = xs.iter().map(|&x| (x - m) * (x - m)).sum::<T>() / T::from_usize_lossy(xs.len());
    var.sqrt()
}

/// Quantile with linear interpolation between order statistics at
/// position `q·(n−1)` (the default convention of most numeric libraries).
pub fn quantile_linear<T: Real>(xs: &[T], q: T) -> T {
    assert!(!xs.is_empty(), "quantile of empty slice");
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("NaN in quantile input"));
    let pos = q * T::from_usize_lossy(v.len() - 1);
    let lo = pos.floor();
    let i = lo.to_usize().unwrap_or(0).min(v.len() - 1);
    let frac = pos - lo;
    if i + 1 >= v.len() {
        v[i]
    } else {
        v[i] + frac * (v[i + 1] - v[i])
    }
}

pub fn median<T: Real>(xs: &[T]) -> T {
    quantile_linear(xs, T::lit(0.5))
}

/// Per-column `(mean, sd)` used to map raw values to z-scores.
///
/// Columns with zero spread keep `sd = 0`; transforming them yields 0 when the
/// input equals the fit-time mean and an error otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer<T> {
    pub mean: Vec<T>,
    pub sd: Vec<T>,
}

impl<T: Real> Standardizer<T> {
    pub fn fit(rows: &[Vec<T>]) -> Result<Self> {
        let first = rows.first().ok_or_else(|| Error::InvalidInput("no rows to standardize".into()))?;
        let d = first.len();
        let mut mean_v = Vec::with_capacity(d);
        let mut sd_v = Vec::with_capacity(d);
        for j in 0..d {
            let col: Vec<T> = rows.iter().map(|r| r[j]).collect();
            let m = mean(&col);
            let s = std_dev(&col);
            let tiny = T::epsilon() * T::lit(16.0) * (m.abs() + T::one());
            mean_v.push(m);
            sd_v.push(if s > tiny { s } else { T::zero() });
        }
        Ok(Self { mean: mean_v, sd: sd_v })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_retained(&self, j: usize) -> bool {
        self.sd[j] > T::zero()
    }

    pub fn transform(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.dim() {
            return Err(Error::LengthMismatch(x.len(), self.dim()));
        }
        x.iter()
            .enumerate()
            .map(|(j, &v)| {
                if self.sd[j] > T::zero() {
                    Ok((v - self.mean[j]) / self.sd[j])
                } else {
                    let tol = T::lit(1e-9) * (self.mean[j].abs() + T::one());
                    if (v - self.mean[j]).abs() <= tol {
                        Ok(T::zero())
                    } else {
                        Err(Error::Unstandardizable { index: j })
                    }
                }
            })
            .collect()
    }

    /// Like [`Self::transform`], but constant columns map to 0 unconditionally.
    pub fn transform_lenient(&self, x: &[T]) -> Vec<T> {
        x.iter()
            .enumerate()
            .map(|(j, &v)| if self.sd[j] > T::zero() { (v - self.mean[j]) / self.sd[j] } else { T::zero() })
            .collect()
    }

    pub fn inverse(&self, z: &[T]) -> Vec<T> {
        z.iter()
            .enumerate()
            .map(|(j, &v)| if self.sd[j] > T::zero() { v * self.sd[j] + self.mean[j] } else { self.mean[j] })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn upper_quartile_of_one_to_eight() {
        let v: Vec<f64> = (1..=8).map(f64::from).collect();
        assert_eq!(quantile_linear(&v, 0.75), 6.25);
        assert_eq!(median(&v), 4.5);
    }

    #[test]
    fn constant_column_is_flagged() {
        let rows = vec![vec![1.0, 5.0], vec![2.0, 5.0], vec![3.0, 5.0]];
        let s = Standardizer::fit(&rows).unwrap();
        assert!(s.is_retained(0));
        assert!(!s.is_retained(1));
        assert_eq!(s.transform(&[2.0, 5.0]).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(s.transform(&[2.0, 6.0]), Err(Error::Unstandardizable { index: 1 })));
    }

    proptest! {
        #[test]
        fn standardization_round_trips(rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 4), 3..30)) {
            let s = Standardizer::fit(&rows).unwrap();
            for r in &rows {
                let z = s.transform_lenient(r);
                let back = s.inverse(&z);
                for (a, b) in back.iter().zip(r) {
                    if s.sd.iter().all(|&v| v > 0.0) {
                        prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
                    }
                }
            }
        }
    }
}
