//! Heavy-tailed p-value combination tests.
//!
//! The crate computes the asymptotic calibration ratio of a homogeneous
//! combination statistic (Pareto, Cauchy, Tippett, power-mean, max-linear
//! Fréchet) under any discrete angular measure, and checks those ratios with
//! seeded, reproducible Monte Carlo over concrete regularly varying models.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod angular;
pub mod combiners;
pub mod error;
pub mod experiments;
pub mod samplers;
pub mod stats;
pub mod transforms;

pub use error::{Error, Result};
