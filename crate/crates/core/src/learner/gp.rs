//! Gaussian-process regression with an ARD squared-exponential kernel and
//! white noise; hyperparameters by type-II maximum likelihood.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyper<T> {
    pub length_scales: Vec<T>,
    pub signal_var: T,
    pub noise_var: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpConfig {
    /// Lower bound on the noise variance, in units of the target variance.
    pub noise_floor: f64,
    pub length_bounds: (f64, f64),
    pub signal_bounds: (f64, f64),
    /// Stop when the projected gradient norm falls below this.
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            noise_floor: 1e-6,
            length_bounds: (0.05, 20.0),
            signal_bounds: (1e-2, 1e2),
            grad_tol: 1e-6,
            max_iter: 5000,
        }
    }
}

/// Starting points `(length scale, signal variance, noise variance)`, applied
/// isotropically.
pub const GP_STARTS: [(f64, f64, f64); 5] =
    [(1.0, 1.0, 0.1), (0.5, 1.0, 0.01), (2.0, 1.0, 0.1), (1.0, 0.5, 1e-3), (3.0, 2.0, 0.05)];

/// Zero-mean GP conditioned on `(x, y)`.
#[derive(Debug, Clone)]
pub struct Gp<T> {
    pub hyper: GpHyper<T>,
    pub x: Vec<Vec<T>>,
    pub y: Vec<T>,
    /// Diagonal jitter added on top of the noise to factorize.
    pub jitter: T,
    chol: Cholesky<T>,
    alpha: Vec<T>,
}

fn ard<T: Real>(a: &[T], b: &[T], h: &GpHyper<T>) -> T {
    let r2: T = a
        .iter()
        .zip(b)
        .zip(&h.length_scales)
        .map(|((u, v), l)| {
            let d = (*u - *v) / *l;
            d * d
        })
        .sum();
    h.signal_var * (-r2 / T::lit(2.0)).exp()
}

fn covariance<T: Real>(x: &[Vec<T>], h: &GpHyper<T>, extra: T) -> Matrix<T> {
    let n = x.len();
    Matrix::from_fn(n, n, |i, j| ard(&x[i], &x[j], h) + if i == j { h.noise_var + extra } else { T::zero() })
}

/// Factorizes `K + σ²I`, escalating diagonal jitter up to 1e-6 when needed.
fn factorize<T: Real>(x: &[Vec<T>], h: &GpHyper<T>) -> Result<(Cholesky<T>, T)> {
    let mut jitter = T::zero();
    loop {
        if let Some(c) = Cholesky::new(&covariance(x, h, jitter)) {
            return Ok((c, jitter));
        }
        jitter = if jitter == T::zero() { T::lit(1e-12) } else { jitter * T::lit(10.0) };
        if jitter > T::lit(1e-6) * (T::one() + T::lit(1e-9)) {
            return Err(Error::Factorization(format!("covariance not positive definite for {h:?}")));
        }
    }
}

impl<T: Real> Gp<T> {
    pub fn fit_fixed(x: Vec<Vec<T>>, y: Vec<T>, hyper: GpHyper<T>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::LengthMismatch(x.len(), y.len()));
        }
        if x.is_empty() {
            return Err(Error::InvalidInput("GP needs at least one point".into()));
        }
        if !(hyper.noise_var > T::zero()) || !(hyper.signal_var > T::zero()) || hyper.length_scales.len() != x[0].len() {
            return Err(Error::InvalidInput(format!("invalid GP hyperparameters {hyper:?}")));
        }
        let (chol, jitter) = factorize(&x, &hyper)?;
        let alpha = chol.solve(&y);
        Ok(Self { hyper, x, y, jitter, chol, alpha })
    }

    /// Posterior mean and latent (noise-free) variance.
    pub fn predict(&self, x: &[T]) -> (T, T) {
        let k: Vec<T> = self.x.iter().map(|xi| ard(xi, x, &self.hyper)).collect();
        let mean = k.iter().zip(&self.alpha).map(|(a, b)| *a * *b).sum();
        let v = self.chol.forward(&k);
        let var = self.hyper.signal_var - v.iter().map(|a| *a * *a).sum::<T>();
        (mean, var.max(T::zero()))
    }

    pub fn log_marginal_likelihood(&self) -> T {
        let n = T::from_usize_lossy(self.y.len());
        let fit: T = self.y.iter().zip(&self.alpha).map(|(a, b)| *a * *b).sum();
        -fit / T::lit(2.0) - self.chol.log_det() / T::lit(2.0) - n * T::lit(std::f64::consts::TAU.ln()) / T::lit(2.0)
    }

    /// Gradient of the log marginal likelihood with respect to
    /// `(ln ℓ_1..ℓ_d, ln s², ln σ²)`.
    pub fn lml_gradient(&self) -> Vec<T> {
        let n = self.x.len();
        let d = self.hyper.length_scales.len();
        let kinv = self.chol.inverse();
        // W = ααᵀ − K⁻¹; ∂L/∂θ = ½ tr(W ∂K/∂θ).
        let w = |i: usize, j: usize| self.alpha[i] * self.alpha[j] - kinv.get(i, j);
        let half = T::lit(0.5);
        let mut g = vec![T::zero(); d + 2];
        for i in 0..n {
            for j in 0..n {
                let kf = ard(&self.x[i], &self.x[j], &self.hyper);
                let wij = w(i, j);
                for (q, l) in self.hyper.length_scales.iter().enumerate() {
                    let dq = (self.x[i][q] - self.x[j][q]) / *l;
                    g[q] += half * wij * kf * dq * dq;
                }
                g[d] += half * wij * kf;
            }
            g[d + 1] += half * w(i, i) * self.hyper.noise_var;
        }
        g
    }
}

fn to_log<T: Real>(h: &GpHyper<T>) -> Vec<T> {
    h.length_scales.iter().map(|l| l.ln()).chain([h.signal_var.ln(), h.noise_var.ln()]).collect()
}

fn from_log<T: Real>(t: &[T]) -> GpHyper<T> {
    let d = t.len() - 2;
    GpHyper { length_scales: t[..d].iter().map(|v| v.exp()).collect(), signal_var: t[d].exp(), noise_var: t[d + 1].exp() }
}

/// Maximizes the marginal likelihood by projected gradient ascent with
/// backtracking, from one start. Returns the fitted GP and its LML.
pub fn optimize_from<T: Real>(x: &[Vec<T>], y: &[T], start: GpHyper<T>, cfg: &GpConfig) -> Result<(Gp<T>, T)> {
    let d = start.length_scales.len();
    let lo: Vec<T> = std::iter::repeat_n(T::lit(cfg.length_bounds.0).ln(), d)
        .chain([T::lit(cfg.signal_bounds.0).ln(), T::lit(cfg.noise_floor).ln()])
        .collect();
    let hi: Vec<T> = std::iter::repeat_n(T::lit(cfg.length_bounds.1).ln(), d)
        .chain([T::lit(cfg.signal_bounds.1).ln(), T::zero()])
        .collect();
    let project = |t: &mut Vec<T>| {
        for ((v, a), b) in t.iter_mut().zip(&lo).zip(&hi) {
            *v = v.max(*a).min(*b);
        }
    };
    let mut theta = to_log(&start);
    project(&mut theta);
    let mut gp = Gp::fit_fixed(x.to_vec(), y.to_vec(), from_log(&theta))?;
    let mut f = gp.log_marginal_likelihood();
    let mut step = T::lit(0.1);
    for _ in 0..cfg.max_iter {
        let g = gp.lml_gradient();
        // Gradient components pushing against an active bound do not count.
        let pg: Vec<T> = g
            .iter()
            .enumerate()
            .map(|(k, gk)| {
                let at_lo = theta[k] <= lo[k] && *gk < T::zero();
                let at_hi = theta[k] >= hi[k] && *gk > T::zero();
                if at_lo || at_hi { T::zero() } else { *gk }
            })
            .collect();
        let norm = pg.iter().map(|v| *v * *v).sum::<T>().sqrt();
        if norm < T::lit(cfg.grad_tol) {
            break;
        }
        let mut accepted = false;
        while step > T::lit(1e-12) {
            let mut cand: Vec<T> = theta.iter().zip(&pg).map(|(t, gk)| *t + step * *gk / norm.max(T::one())).collect();
            project(&mut cand);
            if let Ok(c) = Gp::fit_fixed(x.to_vec(), y.to_vec(), from_log(&cand)) {
                let fc = c.log_marginal_likelihood();
                if fc > f {
                    theta = cand;
                    gp = c;
                    f = fc;
                    step *= T::lit(1.5);
                    accepted = true;
                    break;
                }
            }
            step *= T::lit(0.5);
        }
        if !accepted {
            break;
        }
    }
    Ok((gp, f))
}

/// Fits from every start in [`GP_STARTS`]; the best likelihood wins, and the
/// earlier start on exact ties.
pub fn fit_gp_ml<T: Real>(x: &[Vec<T>], y: &[T], cfg: &GpConfig) -> Result<Gp<T>> {
    let d = x.first().map_or(0, |r| r.len());
    let mut best: Option<(Gp<T>, T)> = None;
    let mut last_err = None;
    for &(l, s, n) in &GP_STARTS {
        let start = GpHyper { length_scales: vec![T::lit(l); d], signal_var: T::lit(s), noise_var: T::lit(n) };
        match optimize_from(x, y, start, cfg) {
            Ok((gp, f)) => {
                if best.as_ref().is_none_or(|(_, bf)| f > *bf) {
                    best = Some((gp, f));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.map(|(g, _)| g).ok_or_else(|| last_err.unwrap_or_else(|| Error::Factorization("no start succeeded".into())))
}
