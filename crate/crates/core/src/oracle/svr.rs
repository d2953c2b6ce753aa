//! ε-support vector regression with an RBF kernel, solved in the dual by SMO.
//!
//! The dual has `2n` variables `(α, α*)` stacked as one vector with labels
//! `+1` for the first half and `−1` for the second:
//!
//! ```text
//! min ½ aᵀQa + pᵀa   s.t.  yᵀa = 0,  0 ≤ a ≤ C
//! Q = [[K, −K], [−K, K]],  p = [ε − z; ε + z]
//! ```
//!
//! Working-set selection uses second-order information; among equally good
//! candidates the lowest index wins, so fits are bit-for-bit reproducible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvrConfig {
    /// RBF length scale `w` in `exp(−‖x − x'‖² / (2w²))`.
    pub width: f64,
    pub epsilon: f64,
    pub c: f64,
    /// Maximal-violating-pair gap at which SMO stops.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvrConfig {
    fn default() -> Self {
        Self { width: 1.5, epsilon: 0.05, c: 10.0, tol: 1e-6, max_iter: 1_000_000 }
    }
}

impl SvrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.epsilon >= 0.0 && self.c > 0.0 && self.tol > 0.0) {
            return Err(Error::InvalidInput(format!("invalid SVR config {self:?}")));
        }
        Ok(())
    }
}

pub fn rbf<T: Real>(a: &[T], b: &[T], width: T) -> T {
    let d2: T = a.iter().zip(b).map(|(x, y)| (*x - *y) * (*x - *y)).sum();
    (-d2 / (T::lit(2.0) * width * width)).exp()
}

/// Fitted regressor `f(x) = Σ β_i k(x_i, x) + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel<T> {
    pub width: T,
    pub support: Vec<Vec<T>>,
    pub coef: Vec<T>,
    pub bias: T,
    /// Dual objective at the solution.
    pub objective: T,
    pub iterations: usize,
}

impl<T: Real> SvrModel<T> {
    pub fn predict(&self, x: &[T]) -> T {
        self.support.iter().zip(&self.coef).map(|(s, c)| *c * rbf(s, x, self.width)).sum::<T>() + self.bias
    }
}

/// Full dual solution, including the per-sample differences `β = α − α*`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvrSolution<T> {
    pub beta: Vec<T>,
    pub bias: T,
    pub objective: T,
    pub iterations: usize,
}

/// Solves the dual for a precomputed kernel matrix (row-major `n × n`).
pub fn solve_dual<T: Real>(kernel: &[Vec<T>], z: &[T], epsilon: T, c: T, tol: T, max_iter: usize) -> Result<SvrSolution<T>> {
    let n = z.len();
    if kernel.len() != n {
        return Err(Error::LengthMismatch(kernel.len(), n));
    }
    if n == 0 {
        return Err(Error::DegenerateData("SVR needs at least one sample".into()));
    }
    let l = 2 * n;
    let y = |t: usize| if t < n { T::one() } else { -T::one() };
    let q = |s: usize, t: usize| y(s) * y(t) * kernel[s % n][t % n];
    let p: Vec<T> = (0..l).map(|t| if t < n { epsilon - z[t] } else { epsilon + z[t - n] }).collect();
    let mut a = vec![T::zero(); l];
    let mut g = p.clone();
    let tau = T::lit(1e-12);
    let up = |a: &[T], t: usize| if y(t) > T::zero() { a[t] < c } else { a[t] > T::zero() };
    let low = |a: &[T], t: usize| if y(t) > T::zero() { a[t] > T::zero() } else { a[t] < c };

    let mut iter = 0;
    loop {
        // i: maximal −y G over I_up, lowest index on ties.
        let mut gmax = T::neg_infinity();
        let mut i = usize::MAX;
        for t in 0..l {
            if up(&a, t) && -y(t) * g[t] > gmax {
                gmax = -y(t) * g[t];
                i = t;
            }
        }
        let mut gmin = T::infinity();
        let mut j = usize::MAX;
        let mut best = T::infinity();
        for t in 0..l {
            if !low(&a, t) {
                continue;
            }
            let v = -y(t) * g[t];
            gmin = gmin.min(v);
            if i == usize::MAX {
                continue;
            }
            let b = gmax - v;
            if b > T::zero() {
                let mut quad = q(i, i) + q(t, t) - T::lit(2.0) * y(i) * y(t) * q(i, t);
                if quad <= T::zero() {
                    quad = tau;
                }
                let score = -b * b / quad;
                if score < best {
                    best = score;
                    j = t;
                }
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin < tol {
            break;
        }
        if iter >= max_iter {
            return Err(Error::NonConvergence(format!(
                "SMO gap {} after {max_iter} iterations",
                (gmax - gmin).as_f64()
            )));
        }
        iter += 1;

        let (old_i, old_j) = (a[i], a[j]);
        if y(i) != y(j) {
            let mut quad = q(i, i) + q(j, j) + T::lit(2.0) * q(i, j);
            if quad <= T::zero() {
                quad = tau;
            }
            let delta = (-g[i] - g[j]) / quad;
            let diff = a[i] - a[j];
            a[i] += delta;
            a[j] += delta;
            if diff > T::zero() {
                if a[j] < T::zero() {
                    a[j] = T::zero();
                    a[i] = diff;
                }
            } else if a[i] < T::zero() {
                a[i] = T::zero();
                a[j] = -diff;
            }
            if diff > T::zero() {
                if a[i] > c {
                    a[i] = c;
                    a[j] = c - diff;
                }
            } else if a[j] > c {
                a[j] = c;
                a[i] = c + diff;
            }
        } else {
            let mut quad = q(i, i) + q(j, j) - T::lit(2.0) * q(i, j);
            if quad <= T::zero() {
                quad = tau;
            }
            let delta = (g[i] - g[j]) / quad;
            let sum = a[i] + a[j];
            a[i] -= delta;
            a[j] += delta;
            if sum > c {
                if a[i] > c {
                    a[i] = c;
                    a[j] = sum - c;
                }
                if a[j] > c {
                    a[j] = c;
                    a[i] = sum - c;
                }
            } else {
                if a[j] < T::zero() {
                    a[j] = T::zero();
                    a[i] = sum;
                }
                if a[i] < T::zero() {
                    a[i] = T::zero();
                    a[j] = sum;
                }
            }
        }
        let (di, dj) = (a[i] - old_i, a[j] - old_j);
        for t in 0..l {
            g[t] += q(i, t) * di + q(j, t) * dj;
        }
    }

    // Bias from free variables, or the midpoint of the feasible interval.
    let (mut ub, mut lb) = (T::infinity(), T::neg_infinity());
    let (mut sum_free, mut nr_free) = (T::zero(), 0usize);
    for t in 0..l {
        let yg = y(t) * g[t];
        let at_upper = a[t] >= c;
        let at_lower = a[t] <= T::zero();
        if at_upper {
            if y(t) < T::zero() {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if at_lower {
            if y(t) > T::zero() {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            nr_free += 1;
            sum_free += yg;
        }
    }
    let rho = if nr_free > 0 { sum_free / T::from_usize_lossy(nr_free) } else { (ub + lb) / T::lit(2.0) };
    let objective = (0..l).map(|t| a[t] * (g[t] + p[t])).sum::<T>() / T::lit(2.0);
    let beta = (0..n).map(|t| a[t] - a[t + n]).collect();
    Ok(SvrSolution { beta, bias: -rho, objective, iterations: iter })
}

/// Fits an ε-SVR on inputs `x` (already standardized) and targets `z`.
pub fn fit_svr<T: Real>(x: &[Vec<T>], z: &[T], cfg: &SvrConfig) -> Result<SvrModel<T>> {
    cfg.validate()?;
    if x.len() != z.len() {
        return Err(Error::LengthMismatch(x.len(), z.len()));
    }
    let width = T::lit(cfg.width);
    let kernel: Vec<Vec<T>> = x.iter().map(|a| x.iter().map(|b| rbf(a, b, width)).collect()).collect();
    let sol = solve_dual(&kernel, z, T::lit(cfg.epsilon), T::lit(cfg.c), T::lit(cfg.tol), cfg.max_iter)?;
    let (support, coef): (Vec<_>, Vec<_>) =
        x.iter().zip(&sol.beta).filter(|(_, b)| **b != T::zero()).map(|(s, b)| (s.clone(), *b)).unzip();
    Ok(SvrModel { width, support, coef, bias: sol.bias, objective: sol.objective, iterations: sol.iterations })
}
