//! Evaluation metrics: MAPE (percent), RMSE (cycles) and Pearson correlation.

use crate::error::{Error, Result};
use crate::scalar::Real;

fn check_lengths<T>(predicted: &[T], observed: &[T], min: usize) -> Result<()> {
    if predicted.len() != observed.len() {
        return Err(Error::LengthMismatch(predicted.len(), observed.len()));
    }
    if predicted.len() < min {
        return Err(Error::InvalidInput(format!("need at least {min} samples, got {}", predicted.len())));
    }
    Ok(())
}

/// Mean absolute percentage error, in percent.
pub fn mape<T: Real>(predicted: &[T], observed: &[T]) -> Result<T> {
    check_lengths(predicted, observed, 1)?;
    let mut acc = T::zero();
    for (i, (&p, &y)) in predicted.iter().zip(observed).enumerate() {
        if y == T::zero() {
            return Err(Error::ZeroObserved(i));
        }
        acc += ((p - y) / y).abs();
    }
    Ok(acc / T::from_usize_lossy(predicted.len()) * T::lit(100.0))
}

pub fn rmse<T: Real>(predicted: &[T], observed: &[T]) -> Result<T> {
    check_lengths(predicted, observed, 1)?;
    let ss: T = predicted.iter().zip(observed).map(|(&p, &y)| (p - y) * (p - y)).sum();
    Ok((ss / T::from_usize_lossy(predicted.len())).sqrt())
}

/// Product-moment correlation coefficient.
pub fn pearson<T: Real>(predicted: &[T], observed: &[T]) -> Result<T> {
    check_lengths(predicted, observed, 2)?;
    let n = T::from_usize_lossy(predicted.len());
    let mp = predicted.iter().copied().sum::<T>() / n;
    let mo = observed.iter().copied().sum::<T>() / n;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&p, &y) in predicted.iter().zip(observed) {
        let dp = p - mp;
        let dy = y - mo;
        sxy += dp * dy;
        sxx += dp * dp;
        syy += dy * dy;
    }
    if sxx == T::zero() {
        return Err(Error::ZeroVariance("predicted"));
    }
    if syy == T::zero() {
        return Err(Error::ZeroVariance("observed"));
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    Ok(r.max(-T::one()).min(T::one()))
}
