//! Sequential Bayesian beam tracking for mmWave links.
//!
//! A learned LSTM predictor propagates per-path angle beliefs between beam
//! transmission cycles through an unscented transform, sounding beams are
//! picked by minimizing a Bayesian Cramer-Rao bound over a codebook, and the
//! channel estimate is refined with an EKF-style measurement update. EKF and
//! LMS trackers serve as baselines, and [`harness`] drives whole link-level
//! episodes and parameter sweeps.
//!
//! Angles are carried in the sine domain (`theta = sin(phi)`) throughout.

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops mirror the matrix formulas of the numerical kernels.
#![allow(clippy::needless_range_loop)]

pub mod array;
pub mod beamctl;
mod error;
pub mod filter;
pub mod harness;
pub mod measurement;
pub mod mobility;
pub mod neural;
pub mod predictor;
pub mod rng;
pub mod trackers;

pub use error::{Error, Result};
pub use num_complex::Complex64;
