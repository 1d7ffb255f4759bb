use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

const NORM_TOL: f64 = 1e-12;
const WEIGHT_TOL: f64 = 1e-12;
/// Relative tolerance for equal margins.
pub const EQUAL_MARGIN_TOL: f64 = 1e-9;

/// A discrete angular measure: atoms on the unit L1 sphere with probability
/// weights, together with the tail index `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureFile", into = "MeasureFile")]
pub struct DiscreteAngularMeasure {
    beta: f64,
    atoms: Vec<Vec<f64>>,
    weights: Vec<f64>,
    signed: bool,
}

/// On-disk schema of an angular measure, version 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasureFile {
    pub version: u32,
    pub beta: f64,
    #[serde(default)]
    pub signed: bool,
    pub atoms: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl TryFrom<MeasureFile> for DiscreteAngularMeasure {
    type Error = Error;

    fn try_from(f: MeasureFile) -> Result<Self> {
        if f.version != 1 {
            return Err(Error::Parse(format!(
                "unsupported angular measure version {}",
                f.version
            )));
        }
        Self::new(f.beta, f.atoms, f.weights, f.signed)
    }
}

impl From<DiscreteAngularMeasure> for MeasureFile {
    fn from(m: DiscreteAngularMeasure) -> Self {
        MeasureFile {
            version: 1,
            beta: m.beta,
            signed: m.signed,
            atoms: m.atoms,
            weights: m.weights,
        }
    }
}

impl DiscreteAngularMeasure {
    pub fn new(beta: f64, atoms: Vec<Vec<f64>>, weights: Vec<f64>, signed: bool) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() {
            return domain(format!("tail index {beta} must be positive"));
        }
        if atoms.is_empty() {
            return domain("angular measure needs at least one atom");
        }
        if atoms.len() != weights.len() {
            return domain(format!(
                "{} atoms but {} weights",
                atoms.len(),
                weights.len()
            ));
        }
        let d = atoms[0].len();
        if d == 0 {
            return domain("atoms must have dimension >= 1");
        }
        for (k, atom) in atoms.iter().enumerate() {
            if atom.len() != d {
                return domain(format!(
                    "atom {k} has dimension {}, expected {d}",
                    atom.len()
                ));
            }
            if atom.iter().any(|v| !v.is_finite()) {
                return domain(format!("atom {k} has a non-finite coordinate"));
            }
            let norm: f64 = atom.iter().map(|v| v.abs()).sum();
            if (norm - 1.0).abs() > NORM_TOL {
                return domain(format!("atom {k} has L1 norm {norm}, expected 1"));
            }
            if !signed && atom.iter().any(|&v| v < 0.0) {
                return domain(format!(
                    "atom {k} has a negative coordinate in an unsigned measure"
                ));
            }
        }
        if let Some(bad) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return domain(format!("weight {bad} is not a nonnegative finite number"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return domain(format!("weights sum to {total}, expected 1"));
        }
        Ok(Self {
            beta,
            atoms,
            weights,
            signed,
        })
    }

    /// Normalizes arbitrary nonzero directions and nonnegative masses into a measure.
    pub fn from_directions(
        beta: f64,
        directions: Vec<Vec<f64>>,
        masses: Vec<f64>,
        signed: bool,
    ) -> Result<Self> {
        let atoms = directions
            .into_iter()
            .map(|v| {
                let n: f64 = v.iter().map(|x| x.abs()).sum();
                if !(n > 0.0) {
                    return domain("zero direction cannot be normalized");
                }
                Ok(v.into_iter().map(|x| x / n).collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) {
            return domain("total mass must be positive");
        }
        let weights = masses.into_iter().map(|m| m / total).collect();
        Self::new(beta, atoms, weights, signed)
    }

    /// Equal mass on the unit vectors `e_1..e_d` (asymptotic independence).
    pub fn axes(d: usize, beta: f64) -> Result<Self> {
        let atoms = (0..d).map(|i| unit(d, i)).collect();
        Self::new(beta, atoms, vec![1.0 / d as f64; d], false)
    }

    /// A single atom on the diagonal (complete dependence).
    pub fn comonotone(d: usize, beta: f64) -> Result<Self> {
        Self::new(beta, vec![vec![1.0 / d as f64; d]], vec![1.0], false)
    }

    /// Each atom paired with its negation, every weight halved.
    pub fn symmetrized(&self) -> Self {
        let mut atoms = Vec::with_capacity(2 * self.atoms.len());
        let mut weights = Vec::with_capacity(2 * self.atoms.len());
        for (a, w) in self.atoms.iter().zip(&self.weights) {
            atoms.push(a.clone());
            atoms.push(a.iter().map(|v| -v).collect());
            weights.push(0.5 * w);
            weights.push(0.5 * w);
        }
        Self {
            beta: self.beta,
            atoms,
            weights,
            signed: true,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("measure serializes")
    }

    /// Same atoms and weights with a different tail index.
    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        Self::new(beta, self.atoms.clone(), self.weights.clone(), self.signed)
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].len()
    }

    pub fn atoms(&self) -> &[Vec<f64>] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_signed(&self) -> bool {
        self.signed
    }

    /// Whether every atom with positive weight is a signed unit vector.
    pub fn is_axes_supported(&self) -> bool {
        self.support()
            .all(|(a, _)| a.iter().filter(|v| **v != 0.0).count() == 1)
    }

    /// Atoms with positive weight.
    pub fn support(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.atoms
            .iter()
            .zip(&self.weights)
            .filter(|(_, w)| **w > 0.0)
            .map(|(a, w)| (a.as_slice(), *w))
    }
}

pub(crate) fn unit(d: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[i] = 1.0;
    v
}

/// The common margin value `E[(Theta_i)_+^beta]` of a standardized measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginConstraint {
    pub target: f64,
    pub tolerance: f64,
}

/// `E[(Theta_i)_+^beta] = sum_k p_k ((theta_ki)_+)^beta` for each coordinate.
pub fn margin_moments(m: &DiscreteAngularMeasure) -> Vec<f64> {
    let beta = m.beta();
    let mut out = vec![0.0; m.dim()];
    for (atom, w) in m.atoms().iter().zip(m.weights()) {
        for (o, &v) in out.iter_mut().zip(atom) {
            if v > 0.0 {
                *o += w * v.powf(beta);
            }
        }
    }
    out
}

/// Checks that all margins agree within `EQUAL_MARGIN_TOL` (relative) and are positive.
pub fn margin_constraint(m: &DiscreteAngularMeasure) -> Result<MarginConstraint> {
    let moments = margin_moments(m);
    let hi = moments.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = moments.iter().copied().fold(f64::INFINITY, f64::min);
    if !(hi > 0.0) {
        return domain("angular measure puts no mass on positive coordinates");
    }
    if hi - lo > EQUAL_MARGIN_TOL * hi {
        return domain(format!(
            "angular measure is not standardized: margins range over [{lo}, {hi}]"
        ));
    }
    Ok(MarginConstraint {
        target: moments.iter().sum::<f64>() / moments.len() as f64,
        tolerance: EQUAL_MARGIN_TOL,
    })
}
