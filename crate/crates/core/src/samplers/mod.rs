//! Seeded samplers for regularly varying null models.

pub mod models;
pub mod rng;
pub mod sigma;

pub use models::{Model, ModelSpec};
pub use rng::{derive_seed, RngStream};
pub use sigma::{sigma_build, SigmaKind, SigmaSpec};
