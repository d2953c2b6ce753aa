//! Discovery learning for battery cycle-life evaluation.
//!
//! The pipeline couples three parts. The interpreter infers physical
//! parameters from early-cycle voltage profiles by simulation-based
//! inference. The oracle maps those physics features and the cycling
//! condition to cycle life, trained only on historical cells. The learner
//! chooses which new cell groups to prototype and generalizes the oracle's
//! pseudo-labels to the rest with a Gaussian process.

// `!(x > 0.0)` is the idiom here: it also rejects NaN. Numeric kernels
// index several arrays per loop and read better with explicit ranges.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cellsim;
pub mod costing;
pub mod dataio;
pub mod error;
pub mod interpreter;
pub mod learner;
pub mod linalg;
pub mod metrics;
pub mod oracle;
pub mod pipeline;
pub mod scalar;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Real;

/// Double-precision instances of the generic numeric types.
pub mod f64_types {
    pub type Matrix = crate::linalg::Matrix<f64>;
    pub type Cholesky = crate::linalg::Cholesky<f64>;
    pub type Standardizer = crate::stats::Standardizer<f64>;
    pub type Acceptance = crate::interpreter::Acceptance<f64>;
    pub type BaseWeights = crate::oracle::BaseWeights<f64>;
    pub type SvrModel = crate::oracle::SvrModel<f64>;
    pub type SvrSolution = crate::oracle::SvrSolution<f64>;
    pub type Gp = crate::learner::Gp<f64>;
    pub type GpHyper = crate::learner::GpHyper<f64>;
    pub type CostAssumptions = crate::costing::CostAssumptions<f64>;
    pub type CostReport = crate::costing::CostReport<f64>;
}

pub use f64_types::*;
