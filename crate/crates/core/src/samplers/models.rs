//! Null models with exact marginal distributions.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::rng::RngStream;
use super::sigma::{cholesky_factor, SigmaSpec};
use crate::angular::{factor_columns, factor_model_measure, DiscreteAngularMeasure};
use crate::error::{config, domain, Error, Result};
use crate::transforms::{
    cauchy_survival, cauchy_transform, frechet_transform, normal_sf, student_t_sf,
};

const SCALE_TOL: f64 = 1e-9;

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

/// Which null model to sample, as stored in a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// `X = mu + W / sqrt(G / nu)` with `W ~ N(0, sigma)`, `G ~ chi^2_nu`.
    MultivariateT {
        d: usize,
        nu: f64,
        sigma: SigmaSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mu: Option<Vec<f64>>,
    },
    GaussianCopula {
        d: usize,
        sigma: SigmaSpec,
    },
    /// `X = Y * Theta` with `Y` standard `beta`-Pareto and `Theta` drawn from the measure.
    BreimanDiscrete {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        d: Option<usize>,
        measure: DiscreteAngularMeasure,
    },
    /// `X = A Z` with iid standard `beta`-Pareto factors. Emits no p-values.
    LinearFactor {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        d: Option<usize>,
        #[serde(default = "one")]
        beta: f64,
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
    },
    /// `X_i = max_j a_ij Z_j` with standard 1-Frechet factors, iid unless a
    /// factor-space measure is given.
    MaxLinearFrechet {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        d: Option<usize>,
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        measure: Option<DiscreteAngularMeasure>,
    },
    /// `X = sum_k gamma_k s_k C_k` with iid standard Cauchy `C_k`, over the
    /// symmetric hull of the atoms.
    S1sDiscrete {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        d: Option<usize>,
        atoms: Vec<Vec<f64>>,
        scales: Vec<f64>,
        #[serde(default = "yes")]
        standardized: bool,
    },
}

impl ModelSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ModelSpec::MultivariateT { .. } => "multivariate_t",
            ModelSpec::GaussianCopula { .. } => "gaussian_copula",
            ModelSpec::BreimanDiscrete { .. } => "breiman_discrete",
            ModelSpec::LinearFactor { .. } => "linear_factor",
            ModelSpec::MaxLinearFrechet { .. } => "max_linear_frechet",
            ModelSpec::S1sDiscrete { .. } => "s1s_discrete",
        }
    }

    /// `kind-xxxxxxxx` with the first 8 hex digits of the SHA-256 of the spec JSON.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("model spec serializes");
        let digest = Sha256::digest(json.as_bytes());
        let hex: String = digest[..4].iter().map(|b| format!("{b:02x}")).collect();
        format!("{}-{hex}", self.kind_name())
    }

    pub fn nu(&self) -> Option<f64> {
        match self {
            ModelSpec::MultivariateT { nu, .. } => Some(*nu),
            _ => None,
        }
    }

    pub fn sigma(&self) -> Option<&SigmaSpec> {
        match self {
            ModelSpec::MultivariateT { sigma, .. } | ModelSpec::GaussianCopula { sigma, .. } => {
                Some(sigma)
            }
            _ => None,
        }
    }

    pub fn sigma_kind(&self) -> Option<&'static str> {
        self.sigma().map(SigmaSpec::kind_name)
    }

    pub fn rho(&self) -> Option<f64> {
        self.sigma().and_then(SigmaSpec::rho)
    }

    pub fn emits_pvalues(&self) -> bool {
        !matches!(self, ModelSpec::LinearFactor { .. })
    }

    pub fn prepare(&self) -> Result<Model> {
        Model::new(self.clone())
    }
}

#[derive(Debug, Clone)]
struct Breiman {
    beta: f64,
    atoms: Vec<Vec<f64>>,
    cumulative: Vec<f64>,
    weights: Vec<f64>,
    /// `P[X_i > 0]` per coordinate.
    positive_mass: Vec<f64>,
}

impl Breiman {
    fn new(m: &DiscreteAngularMeasure) -> Result<Self> {
        if m.is_signed() {
            return config("a Breiman model needs an unsigned angular measure");
        }
        let d = m.dim();
        let mut positive_mass = vec![0.0; d];
        for (a, w) in m.support() {
            for (pm, v) in positive_mass.iter_mut().zip(a) {
                if *v > 0.0 {
                    *pm += w;
                }
            }
        }
        if let Some(i) = positive_mass.iter().position(|&pm| pm == 0.0) {
            return config(format!(
                "degenerate margin: coordinate {} is zero on every atom",
                i + 1
            ));
        }
        let mut acc = 0.0;
        let cumulative = m
            .weights()
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Ok(Self {
            beta: m.beta(),
            atoms: m.atoms().to_vec(),
            cumulative,
            weights: m.weights().to_vec(),
            positive_mass,
        })
    }

    fn dim(&self) -> usize {
        self.atoms[0].len()
    }

    fn survival(&self, i: usize, x: f64) -> f64 {
        let mut s = 0.0;
        for (a, w) in self.atoms.iter().zip(&self.weights) {
            let t = a[i];
            if t > 0.0 {
                s += if x <= t {
                    *w
                } else {
                    w * (t / x).powf(self.beta)
                };
            }
        }
        s
    }

    fn sample(&self, rng: &mut RngStream, x: &mut [f64], p: &mut [f64]) {
        let u = rng.open01() * self.cumulative[self.cumulative.len() - 1];
        let k = self
            .cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.cumulative.len() - 1);
        let y = rng.open01().powf(-1.0 / self.beta);
        for (i, (xi, pi)) in x.iter_mut().zip(p.iter_mut()).enumerate() {
            *xi = y * self.atoms[k][i];
            *pi = if *xi > 0.0 {
                self.survival(i, *xi)
            } else {
                // randomized PIT across the point mass at zero
                let s0 = self.positive_mass[i];
                s0 + rng.open01() * (1.0 - s0)
            };
        }
    }
}

#[derive(Debug, Clone)]
enum Prepared {
    Mvt {
        nu: f64,
        chol: DMatrix<f64>,
        mu: Vec<f64>,
        gamma: Gamma<f64>,
    },
    Gauss {
        chol: DMatrix<f64>,
    },
    Breiman(Breiman),
    LinearFactor {
        beta: f64,
        a: Vec<Vec<f64>>,
    },
    MaxLinear {
        a: Vec<Vec<f64>>,
        row_sums: Vec<f64>,
        factors: Option<Breiman>,
    },
    S1s {
        atoms: Vec<Vec<f64>>,
        scales: Vec<f64>,
        sigma: Vec<f64>,
    },
}

/// A validated model ready for sampling.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    d: usize,
    inner: Prepared,
}

fn check_dim(declared: Option<usize>, actual: usize) -> Result<()> {
    match declared {
        Some(d) if d != actual => domain(format!(
            "declared d = {d} but the parameters have dimension {actual}"
        )),
        _ => Ok(()),
    }
}

fn check_matrix(a: &[Vec<f64>]) -> Result<(usize, usize)> {
    if a.is_empty() || a[0].is_empty() || a.iter().any(|r| r.len() != a[0].len()) {
        return domain("matrix A must be non-empty and rectangular");
    }
    if a.iter().flatten().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return domain("matrix A must have nonnegative finite entries");
    }
    Ok((a.len(), a[0].len()))
}

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        let (d, inner) = match &spec {
            ModelSpec::MultivariateT { d, nu, sigma, mu } => {
                if !(*nu > 0.0) || !nu.is_finite() {
                    return domain(format!("degrees of freedom {nu} must be positive"));
                }
                let chol = cholesky_factor(&sigma.build(*d)?)?;
                let mu = match mu {
                    Some(m) if m.len() != *d => {
                        return domain(format!("mu has length {} but d = {d}", m.len()))
                    }
                    Some(m) => m.clone(),
                    None => vec![0.0; *d],
                };
                let gamma = Gamma::new(0.5 * nu, 2.0)
                    .map_err(|e| Error::Domain(format!("gamma parameters: {e}")))?;
                (
                    *d,
                    Prepared::Mvt {
                        nu: *nu,
                        chol,
                        mu,
                        gamma,
                    },
                )
            }
            ModelSpec::GaussianCopula { d, sigma } => {
                let chol = cholesky_factor(&sigma.build(*d)?)?;
                (*d, Prepared::Gauss { chol })
            }
            ModelSpec::BreimanDiscrete { d, measure } => {
                check_dim(*d, measure.dim())?;
                (measure.dim(), Prepared::Breiman(Breiman::new(measure)?))
            }
            ModelSpec::LinearFactor { d, beta, a } => {
                factor_columns(a, *beta)?;
                check_dim(*d, a.len())?;
                (
                    a.len(),
                    Prepared::LinearFactor {
                        beta: *beta,
                        a: a.clone(),
                    },
                )
            }
            ModelSpec::MaxLinearFrechet { d, a, measure } => {
                let (rows, cols) = check_matrix(a)?;
                check_dim(*d, rows)?;
                let row_sums: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
                if let Some(i) = row_sums.iter().position(|s| *s == 0.0) {
                    return domain(format!("row {} of A is zero", i + 1));
                }
                let factors = match measure {
                    None => None,
                    Some(m) => {
                        if m.dim() != cols {
                            return domain(format!(
                                "factor measure has dimension {} but A has {cols} columns",
                                m.dim()
                            ));
                        }
                        if a.iter()
                            .any(|r| r.iter().filter(|v| **v > 0.0).count() != 1)
                        {
                            return config(
                                "dependent factors need exactly one positive entry per row of A \
                                 for the margins to stay exact",
                            );
                        }
                        Some(Breiman::new(m)?)
                    }
                };
                (
                    rows,
                    Prepared::MaxLinear {
                        a: a.clone(),
                        row_sums,
                        factors,
                    },
                )
            }
            ModelSpec::S1sDiscrete {
                d,
                atoms,
                scales,
                standardized,
            } => {
                if atoms.len() != scales.len() {
                    return domain(format!("{} atoms but {} scales", atoms.len(), scales.len()));
                }
                if let Some(g) = scales.iter().find(|g| !(**g > 0.0) || !g.is_finite()) {
                    return domain(format!("scale {g} must be positive"));
                }
                let hull = DiscreteAngularMeasure::from_directions(
                    1.0,
                    atoms.clone(),
                    scales.clone(),
                    true,
                )?;
                for a in atoms {
                    let n: f64 = a.iter().map(|v| v.abs()).sum();
                    if (n - 1.0).abs() > 1e-12 {
                        return domain(format!("S1S atom has L1 norm {n}, expected 1"));
                    }
                }
                let dim = hull.dim();
                check_dim(*d, dim)?;
                let mut sym_atoms = Vec::with_capacity(2 * atoms.len());
                let mut sym_scales = Vec::with_capacity(2 * atoms.len());
                for (a, g) in atoms.iter().zip(scales) {
                    sym_atoms.push(a.clone());
                    sym_atoms.push(a.iter().map(|v| -v).collect());
                    sym_scales.push(0.5 * g);
                    sym_scales.push(0.5 * g);
                }
                let sigma: Vec<f64> = (0..dim)
                    .map(|i| {
                        sym_atoms
                            .iter()
                            .zip(&sym_scales)
                            .map(|(a, g)| g * a[i].abs())
                            .sum()
                    })
                    .collect();
                if let Some(i) = sigma.iter().position(|s| *s == 0.0) {
                    return config(format!("coordinate {} has zero Cauchy scale", i + 1));
                }
                if *standardized {
                    if let Some(s) = sigma.iter().find(|s| (**s - 1.0).abs() > SCALE_TOL) {
                        return domain(format!(
                            "standardized S1S spec has a marginal scale {s}, expected 1"
                        ));
                    }
                }
                (
                    dim,
                    Prepared::S1s {
                        atoms: sym_atoms,
                        scales: sym_scales,
                        sigma,
                    },
                )
            }
        };
        Ok(Self { spec, d, inner })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn emits_pvalues(&self) -> bool {
        self.spec.emits_pvalues()
    }

    /// Draws one replicate into `x` (raw statistics) and `p` (marginal
    /// p-values; left as NaN for models without exact margins).
    pub fn sample(&self, rng: &mut RngStream, x: &mut [f64], p: &mut [f64]) {
        debug_assert!(x.len() == self.d && p.len() == self.d);
        match &self.inner {
            Prepared::Mvt {
                nu,
                chol,
                mu,
                gamma,
            } => {
                let scale = (gamma.sample(rng) / nu).sqrt().recip();
                gaussian(chol, rng, x);
                for i in 0..self.d {
                    x[i] = mu[i] + x[i] * scale;
                    p[i] = student_t_sf(x[i], *nu).expect("nu validated");
                }
            }
            Prepared::Gauss { chol } => {
                gaussian(chol, rng, x);
                for (pi, xi) in p.iter_mut().zip(x.iter()) {
                    *pi = normal_sf(*xi);
                }
            }
            Prepared::Breiman(b) => b.sample(rng, x, p),
            Prepared::LinearFactor { beta, a } => {
                x.fill(0.0);
                for j in 0..a[0].len() {
                    let z = rng.open01().powf(-1.0 / beta);
                    for (xi, row) in x.iter_mut().zip(a) {
                        *xi += row[j] * z;
                    }
                }
                p.fill(f64::NAN);
            }
            Prepared::MaxLinear {
                a,
                row_sums,
                factors,
            } => {
                let n_factors = a[0].len();
                let mut z = vec![0.0; n_factors];
                match factors {
                    None => {
                        for zj in z.iter_mut() {
                            *zj = -1.0 / rng.open01().ln();
                        }
                    }
                    Some(b) => {
                        let mut w = vec![0.0; b.dim()];
                        let mut q = vec![0.0; b.dim()];
                        b.sample(rng, &mut w, &mut q);
                        for (zj, qj) in z.iter_mut().zip(&q) {
                            *zj = frechet_transform(*qj).expect("exact margin in (0,1)");
                        }
                    }
                }
                for i in 0..self.d {
                    let y = a[i]
                        .iter()
                        .zip(&z)
                        .map(|(aij, zj)| aij * zj)
                        .fold(0.0, f64::max);
                    x[i] = y;
                    p[i] = -(-row_sums[i] / y).exp_m1();
                }
            }
            Prepared::S1s {
                atoms,
                scales,
                sigma,
            } => {
                x.fill(0.0);
                for (s, g) in atoms.iter().zip(scales) {
                    let c = cauchy_transform(rng.open01()).expect("open interval");
                    for (xi, sk) in x.iter_mut().zip(s) {
                        *xi += g * sk * c;
                    }
                }
                for i in 0..self.d {
                    p[i] = cauchy_survival(x[i] / sigma[i]);
                }
            }
        }
    }

    /// Like [`Model::sample`] but only the raw statistics; skips the marginal
    /// p-value evaluation where that is separable.
    pub fn sample_raw(&self, rng: &mut RngStream, x: &mut [f64]) {
        match &self.inner {
            Prepared::Mvt {
                nu,
                chol,
                mu,
                gamma,
            } => {
                let scale = (gamma.sample(rng) / nu).sqrt().recip();
                gaussian(chol, rng, x);
                for i in 0..self.d {
                    x[i] = mu[i] + x[i] * scale;
                }
            }
            Prepared::Gauss { chol } => gaussian(chol, rng, x),
            _ => {
                let mut p = vec![0.0; self.d];
                self.sample(rng, x, &mut p);
            }
        }
    }

    /// For models whose angular measure is discrete and known in closed form,
    /// the pair `(c, m)` with `t^beta P[h(X) > t] -> c * E[h(Theta)^beta]`, `Theta ~ m`.
    pub fn limit_measure(&self) -> Option<(f64, DiscreteAngularMeasure)> {
        match &self.spec {
            ModelSpec::BreimanDiscrete { measure, .. } => Some((1.0, measure.clone())),
            ModelSpec::LinearFactor { beta, a, .. } => {
                let (_, masses) = factor_columns(a, *beta).ok()?;
                Some((masses.iter().sum(), factor_model_measure(a, *beta).ok()?))
            }
            ModelSpec::MaxLinearFrechet {
                a, measure: None, ..
            } => {
                let (_, masses) = factor_columns(a, 1.0).ok()?;
                Some((masses.iter().sum(), factor_model_measure(a, 1.0).ok()?))
            }
            _ => None,
        }
    }

    /// Tail index of the raw statistics.
    pub fn beta(&self) -> f64 {
        match &self.inner {
            Prepared::Mvt { nu, .. } => *nu,
            Prepared::Breiman(b) => b.beta,
            Prepared::LinearFactor { beta, .. } => *beta,
            Prepared::Gauss { .. } => f64::INFINITY,
            Prepared::MaxLinear { .. } | Prepared::S1s { .. } => 1.0,
        }
    }
}

fn gaussian(chol: &DMatrix<f64>, rng: &mut RngStream, out: &mut [f64]) {
    let d = out.len();
    let mut xi = [0.0f64; 64];
    let mut heap;
    let xi: &mut [f64] = if d <= 64 {
        &mut xi[..d]
    } else {
        heap = vec![0.0; d];
        &mut heap
    };
    for v in xi.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    for i in 0..d {
        let mut s = 0.0;
        for j in 0..=i {
            s += chol[(i, j)] * xi[j];
        }
        out[i] = s;
    }
}
