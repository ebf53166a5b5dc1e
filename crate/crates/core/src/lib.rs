//! Multi-fidelity, constrained, cost-aware Bayesian optimization.

// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// index loops mirror the per-dimension formulas they implement
#![allow(clippy::needless_range_loop)]

pub mod acquisition;
pub mod cli;
pub mod driver;
pub mod error;
pub mod evaluators;
pub mod fidelity_cost;
pub mod linalg;
pub mod normal;
pub mod problem;
pub mod qmc;
pub mod surrogate;

pub use error::{Error, Result};
