//! Named model families and the default experiment grids.

use crate::angular::DiscreteAngularMeasure;
use crate::error::{config, Result};
use crate::samplers::{ModelSpec, SigmaSpec};

/// Degrees of freedom swept in the calibration grids.
pub const NUS: [f64; 6] = [1.0, 2.0, 3.0, 5.0, 10.0, 25.0];
pub const ALPHAS: [f64; 4] = [1e-2, 1e-3, 1e-4, 1e-5];
pub const D: usize = 10;
pub const N_FULL: u64 = 1_000_000;
pub const N_DESK: u64 = 100_000;
pub const SEED: u64 = 42;

pub const PRESET_NAMES: [&str; 5] = ["t", "gaussian", "frechet", "breiman-axes", "s1s-axes"];

/// Expands a preset into one model per degree of freedom (`t`) or a single
/// model (the rest, which ignore `nus`).
pub fn preset_models(
    name: &str,
    nus: &[f64],
    d: usize,
    sigma: &SigmaSpec,
) -> Result<Vec<ModelSpec>> {
    if d == 0 {
        return config("d must be positive");
    }
    let identity: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    Ok(match name {
        "t" => {
            if nus.is_empty() {
                return config("preset t needs at least one nu");
            }
            nus.iter()
                .map(|&nu| ModelSpec::MultivariateT {
                    d,
                    nu,
                    sigma: sigma.clone(),
                    mu: None,
                })
                .collect()
        }
        "gaussian" => vec![ModelSpec::GaussianCopula {
            d,
            sigma: sigma.clone(),
        }],
        "frechet" => vec![ModelSpec::MaxLinearFrechet {
            d: Some(d),
            a: identity,
            measure: None,
        }],
        "breiman-axes" => vec![ModelSpec::BreimanDiscrete {
            d: Some(d),
            measure: DiscreteAngularMeasure::axes(d, 1.0)?,
        }],
        "s1s-axes" => vec![ModelSpec::S1sDiscrete {
            d: Some(d),
            atoms: identity,
            scales: vec![1.0; d],
            standardized: true,
        }],
        other => {
            return config(format!(
                "unknown preset '{other}', expected one of {}",
                PRESET_NAMES.join(", ")
            ))
        }
    })
}
