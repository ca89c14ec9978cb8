//! Kernel Cauchy ridge regression and robust kernel baselines.
//!
//! The crate fits Gaussian-kernel expansions under the Cauchy, correntropy,
//! absolute and Huber losses by iteratively reweighted least squares, runs
//! cross-validated benchmarks on Friedman and user-supplied data, and
//! numerically checks properties of the Cauchy loss.

pub mod data;
pub mod error;
pub mod evalsel;
pub mod kernel;
pub mod loss;
pub mod par;
pub mod seed;
pub mod solver;
pub mod theory;

pub use error::{Error, Result};
