//! Discrete angular measures and the closed-form asymptotic calibration ratio
//! of homogeneous combination statistics.
//!
//! For a standardized measure (all margins `E[(Theta_i)_+^beta]` equal), the
//! limit of `P[h(X) > t] / P[X_1 > t]` is
//! `E[h(Theta)^beta] / E[(Theta_1)_+^beta]`, evaluated here as a finite sum
//! over atoms.

mod measure;
pub mod nnls;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combiners::CombinerSpec;
use crate::error::{domain, Error, Result};
use crate::samplers::rng::RngStream;
use crate::transforms::student_t_cdf;

use measure::unit;
pub use measure::{
    margin_constraint, margin_moments, DiscreteAngularMeasure, MarginConstraint, MeasureFile,
    EQUAL_MARGIN_TOL,
};

/// Residual tolerance of the standardization solve.
pub const STANDARDIZE_TOL: f64 = 1e-9;

/// Asymptotic calibration ratio `lim P[h(X) > t] / P[X_1 > t]`.
///
/// For the max-linear combiner the statistic is `Y_w / c_w`, so the ratio is
/// additionally divided by `c_w`.
pub fn asymptotic_ratio(combiner: &CombinerSpec, m: &DiscreteAngularMeasure) -> Result<f64> {
    if let Some(d) = combiner.dim() {
        if d != m.dim() {
            return domain(format!(
                "{} combiner has dimension {d} but the measure has dimension {}",
                combiner.name(),
                m.dim()
            ));
        }
    }
    margin_constraint(m)?;
    let beta = m.beta();
    let denominator: f64 = m
        .atoms()
        .iter()
        .zip(m.weights())
        .map(|(a, w)| w * a[0].max(0.0).powf(beta))
        .sum();
    if !(denominator > 0.0) {
        return domain("first margin of the angular measure is zero");
    }
    let mut ratio = spectral_moment(combiner, m)? / denominator;
    if let CombinerSpec::MaxLinear { coefficients } = combiner {
        ratio /= coefficients.c_w();
    }
    Ok(ratio)
}

/// `E[h(Theta)_+^beta]` under the measure, with no standardization check.
pub fn spectral_moment(combiner: &CombinerSpec, m: &DiscreteAngularMeasure) -> Result<f64> {
    let beta = m.beta();
    let mut total = 0.0;
    for (atom, w) in m.support() {
        let h = combiner.evaluate(atom)?;
        if h > 0.0 {
            total += w * h.powf(beta);
        }
    }
    Ok(total)
}

/// Asymptotic behaviour of a test at small levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Honesty {
    Calibrated,
    StrictlyHonest,
    Liberal,
}

impl Honesty {
    pub fn name(self) -> &'static str {
        match self {
            Honesty::Calibrated => "calibrated",
            Honesty::StrictlyHonest => "strictly_honest",
            Honesty::Liberal => "liberal",
        }
    }
}

pub fn classify_ratio(ratio: f64, tol: f64) -> Honesty {
    if (ratio - 1.0).abs() <= tol {
        Honesty::Calibrated
    } else if ratio < 1.0 {
        Honesty::StrictlyHonest
    } else {
        Honesty::Liberal
    }
}

pub fn classify(combiner: &CombinerSpec, m: &DiscreteAngularMeasure, tol: f64) -> Result<Honesty> {
    Ok(classify_ratio(asymptotic_ratio(combiner, m)?, tol))
}

/// True iff every charged atom lies in `[0, inf)^d` or in `(-inf, 0]^d`.
pub fn cct_support_condition(m: &DiscreteAngularMeasure) -> bool {
    m.support()
        .all(|(a, _)| a.iter().all(|&v| v >= 0.0) || a.iter().all(|&v| v <= 0.0))
}

/// Angular measure of the linear (or max-linear) factor model `X = A Z` with
/// iid standard `beta`-Pareto factors: atoms `a_j / ||a_j||_1` with weights
/// proportional to `||a_j||_1^beta`.
///
/// `a` is given row-major, `d` rows by `p` columns.
pub fn factor_model_measure(a: &[Vec<f64>], beta: f64) -> Result<DiscreteAngularMeasure> {
    let (directions, masses) = factor_columns(a, beta)?;
    DiscreteAngularMeasure::from_directions(beta, directions, masses, false)
}

/// Columns of `a` and their masses `||a_j||_1^beta`.
pub(crate) fn factor_columns(a: &[Vec<f64>], beta: f64) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if a.is_empty() || a[0].is_empty() {
        return domain("factor matrix is empty");
    }
    let p = a[0].len();
    if a.iter().any(|row| row.len() != p) {
        return domain("factor matrix rows have different lengths");
    }
    if a.iter().flatten().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return domain("factor matrix entries must be nonnegative and finite");
    }
    let mut directions = Vec::with_capacity(p);
    let mut masses = Vec::with_capacity(p);
    for j in 0..p {
        let col: Vec<f64> = a.iter().map(|row| row[j]).collect();
        let norm: f64 = col.iter().sum();
        if norm == 0.0 {
            return domain(format!("column {} of the factor matrix is zero", j + 1));
        }
        masses.push(norm.powf(beta));
        directions.push(col);
    }
    Ok((directions, masses))
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

/// Monte Carlo ratio `E[h(W)^beta] / E[(W_1)_+^beta]` for a Breiman vector
/// `X = Y W`; by homogeneity this equals the ratio under the angular measure
/// of `X`. Replicate `r` draws from `RngStream::new(seed, r)`. The standard
/// error is the delete-one jackknife.
pub fn breiman_ratio_mc<F>(
    w_sampler: F,
    combiner: &CombinerSpec,
    beta: f64,
    n: usize,
    seed: u64,
) -> Result<Estimate>
where
    F: Fn(&mut RngStream) -> Vec<f64> + Sync,
{
    if n < 2 {
        return domain("breiman_ratio_mc needs n >= 2");
    }
    if !(beta > 0.0) {
        return domain(format!("tail index {beta} must be positive"));
    }
    let pairs: Vec<(f64, f64)> = (0..n as u64)
        .into_par_iter()
        .map(|r| {
            let mut stream = RngStream::new(seed, r);
            let w = w_sampler(&mut stream);
            let h = combiner.evaluate(&w)?;
            Ok((h.powf(beta), w[0].max(0.0).powf(beta)))
        })
        .collect::<Result<_>>()?;
    let (sum_h, sum_m) = pairs
        .iter()
        .fold((0.0, 0.0), |(a, b), (h, m)| (a + h, b + m));
    if !(sum_m > 0.0) {
        return Err(Error::Domain(
            "degenerate sampler: first coordinate of W is never positive".into(),
        ));
    }
    let value = sum_h / sum_m;
    let nf = n as f64;
    let loo: Vec<f64> = pairs
        .iter()
        .map(|(h, m)| {
            let den = sum_m - m;
            if den > 0.0 {
                (sum_h - h) / den
            } else {
                value
            }
        })
        .collect();
    let mean_loo = loo.iter().sum::<f64>() / nf;
    let var = (nf - 1.0) / nf * loo.iter().map(|r| (r - mean_loo).powi(2)).sum::<f64>();
    Ok(Estimate {
        value,
        se: var.sqrt(),
    })
}

/// Upper tail-dependence coefficient of the bivariate t copula.
pub fn t_copula_lambda(nu: f64, rho: f64) -> Result<f64> {
    if !(nu > 0.0) || !nu.is_finite() {
        return domain(format!("degrees of freedom {nu} must be positive"));
    }
    if !(rho > -1.0 && rho < 1.0) {
        return domain(format!("correlation {rho} must lie in (-1, 1)"));
    }
    let arg = -((nu + 1.0) * (1.0 - rho) / (1.0 + rho)).sqrt();
    Ok(2.0 * student_t_cdf(arg, nu + 1.0)?)
}

/// Result of [`standardize_weights`].
#[derive(Debug, Clone, PartialEq)]
pub enum Standardization {
    /// The given atoms admit equal-margin weights.
    Feasible(DiscreteAngularMeasure),
    /// The unit vectors `e_1..e_d` had to be added to the atom list.
    Augmented {
        measure: DiscreteAngularMeasure,
        added: usize,
    },
}

impl Standardization {
    pub fn measure(&self) -> &DiscreteAngularMeasure {
        match self {
            Standardization::Feasible(m) | Standardization::Augmented { measure: m, .. } => m,
        }
    }

    pub fn into_measure(self) -> DiscreteAngularMeasure {
        match self {
            Standardization::Feasible(m) | Standardization::Augmented { measure: m, .. } => m,
        }
    }

    pub fn was_augmented(&self) -> bool {
        matches!(self, Standardization::Augmented { .. })
    }
}

/// Finds probability weights on the given sphere atoms so that every margin
/// `E[(Theta_i)_+^beta]` takes the same positive value.
///
/// Solves `min ||M q - 1||` over `q >= 0` where `M_ik = ((theta_ki)_+)^beta`,
/// then normalizes `q`. When the residual exceeds [`STANDARDIZE_TOL`], the
/// unit vectors are appended and the solve repeated.
pub fn standardize_weights(atoms: &[Vec<f64>], d: usize, beta: f64) -> Result<Standardization> {
    if atoms.is_empty() {
        return domain("standardize_weights needs at least one atom");
    }
    if let Some(a) = atoms.iter().find(|a| a.len() != d) {
        return domain(format!("atom of dimension {} given for d = {d}", a.len()));
    }
    let signed = atoms.iter().flatten().any(|&v| v < 0.0);
    if let Some(m) = solve_equal_margins(atoms, d, beta, signed)? {
        return Ok(Standardization::Feasible(m));
    }
    let mut augmented = atoms.to_vec();
    augmented.extend((0..d).map(|i| unit(d, i)));
    match solve_equal_margins(&augmented, d, beta, signed)? {
        Some(measure) => Ok(Standardization::Augmented { measure, added: d }),
        None => Err(Error::Numerical(
            "no equal-margin weights exist even after adding the unit vectors".into(),
        )),
    }
}

fn solve_equal_margins(
    atoms: &[Vec<f64>],
    d: usize,
    beta: f64,
    signed: bool,
) -> Result<Option<DiscreteAngularMeasure>> {
    let k = atoms.len();
    let m = DMatrix::from_fn(d, k, |i, j| atoms[j][i].max(0.0).powf(beta));
    let ones = DVector::from_element(d, 1.0);
    let sol = nnls::nnls(&m, &ones);
    let max_dev = (&m * &sol.x - &ones).amax();
    let total: f64 = sol.x.sum();
    if max_dev > STANDARDIZE_TOL || !(total > 0.0) {
        return Ok(None);
    }
    let weights: Vec<f64> = sol.x.iter().map(|q| q / total).collect();
    let atoms: Vec<Vec<f64>> = atoms
        .iter()
        .map(|a| {
            let n: f64 = a.iter().map(|v| v.abs()).sum();
            a.iter().map(|v| v / n).collect()
        })
        .collect();
    DiscreteAngularMeasure::new(beta, atoms, weights, signed).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combiners::{MaxLinearCoefficients, Weights};
    use approx::assert_relative_eq;

    fn w(v: &[f64]) -> Weights {
        Weights::new(v.to_vec()).unwrap()
    }

    fn measure(atoms: &[&[f64]], weights: &[f64], signed: bool) -> DiscreteAngularMeasure {
        DiscreteAngularMeasure::new(
            1.0,
            atoms.iter().map(|a| a.to_vec()).collect(),
            weights.to_vec(),
            signed,
        )
        .unwrap()
    }

    #[test]
    fn ratio_examples() {
        let lin = CombinerSpec::linear(w(&[0.5, 0.5]));
        let axes = DiscreteAngularMeasure::axes(2, 1.0).unwrap();
        assert_relative_eq!(
            asymptotic_ratio(&lin, &axes).unwrap(),
            1.0,
            max_relative = 1e-15
        );
        let co = DiscreteAngularMeasure::comonotone(2, 1.0).unwrap();
        assert_relative_eq!(
            asymptotic_ratio(&CombinerSpec::Tippett, &co).unwrap(),
            0.5,
            max_relative = 1e-15
        );
        let mixed = measure(&[&[0.5, -0.5], &[-0.5, 0.5]], &[0.5, 0.5], true);
        assert_eq!(asymptotic_ratio(&lin, &mixed).unwrap(), 0.0);
        let pm = CombinerSpec::power_mean(w(&[0.5, 0.5]), 2.0).unwrap();
        assert_relative_eq!(
            asymptotic_ratio(&pm, &axes).unwrap(),
            2.0f64.sqrt(),
            max_relative = 1e-15
        );
    }

    #[test]
    fn ratio_errors() {
        let lin = CombinerSpec::linear(w(&[0.5, 0.5]));
        let lopsided = measure(&[&[1.0, 0.0], &[0.5, 0.5]], &[0.5, 0.5], false);
        assert!(asymptotic_ratio(&lin, &lopsided).is_err());
        let three = DiscreteAngularMeasure::axes(3, 1.0).unwrap();
        assert!(asymptotic_ratio(&lin, &three).is_err());
        let negative = measure(&[&[-0.5, -0.5]], &[1.0], true);
        assert!(asymptotic_ratio(&lin, &negative).is_err());
    }

    #[test]
    fn classify_examples() {
        let lin = CombinerSpec::linear(w(&[0.3, 0.7]));
        let m = measure(&[&[0.9, 0.1], &[0.1, 0.9]], &[0.5, 0.5], false);
        assert_eq!(classify(&lin, &m, 1e-9).unwrap(), Honesty::Calibrated);
        let co = DiscreteAngularMeasure::comonotone(2, 1.0).unwrap();
        assert_eq!(
            classify(&CombinerSpec::Tippett, &co, 1e-9).unwrap(),
            Honesty::StrictlyHonest
        );
        let pm = CombinerSpec::power_mean(w(&[0.5, 0.5]), 2.0).unwrap();
        let axes = DiscreteAngularMeasure::axes(2, 1.0).unwrap();
        assert_eq!(classify(&pm, &axes, 1e-9).unwrap(), Honesty::Liberal);
    }

    #[test]
    fn cct_support_examples() {
        let pm_axes = measure(
            &[&[1.0, 0.0], &[-1.0, 0.0], &[0.0, 1.0], &[0.0, -1.0]],
            &[0.25; 4],
            true,
        );
        assert!(cct_support_condition(&pm_axes));
        assert!(!cct_support_condition(&measure(
            &[&[0.5, -0.5]],
            &[1.0],
            true
        )));
        let pair = measure(&[&[0.5, 0.5], &[-0.5, -0.5]], &[0.5, 0.5], true);
        assert!(cct_support_condition(&pair));
        // zero-weight atoms do not count
        let masked = measure(&[&[0.5, 0.5], &[0.5, -0.5]], &[1.0, 0.0], true);
        assert!(cct_support_condition(&masked));
    }

    #[test]
    fn factor_model_examples() {
        let m = factor_model_measure(&[vec![1.0, 0.0], vec![0.0, 1.0]], 1.0).unwrap();
        assert_eq!(m.atoms(), &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(m.weights(), &[0.5, 0.5]);
        let m = factor_model_measure(&[vec![1.0], vec![1.0]], 1.0).unwrap();
        assert_eq!(m.atoms(), &[vec![0.5, 0.5]]);
        let m = factor_model_measure(&[vec![2.0, 0.0], vec![0.0, 1.0]], 1.0).unwrap();
        assert_relative_eq!(m.weights()[0], 2.0 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(m.weights()[1], 1.0 / 3.0, max_relative = 1e-15);
        assert!(factor_model_measure(&[vec![1.0, 0.0], vec![1.0, 0.0]], 1.0).is_err());
        assert!(factor_model_measure(&[vec![-1.0]], 1.0).is_err());
    }

    #[test]
    fn t_copula_lambda_examples() {
        // 2 T_2(-sqrt 2) = 1 - sqrt(2)/2
        assert_relative_eq!(
            t_copula_lambda(1.0, 0.0).unwrap(),
            1.0 - 0.5 * 2.0f64.sqrt(),
            max_relative = 1e-13
        );
        assert!((t_copula_lambda(3.0, 1.0 - 1e-12).unwrap() - 1.0).abs() < 2e-6);
        // reference value from an arbitrary-precision incomplete beta
        assert_relative_eq!(
            t_copula_lambda(100.0, 0.0).unwrap(),
            6.967_610_398_722_273e-17,
            max_relative = 1e-9
        );
        assert_relative_eq!(
            t_copula_lambda(1.0, 0.5).unwrap(),
            0.5,
            max_relative = 1e-13
        );
        assert!(t_copula_lambda(0.0, 0.1).is_err());
        assert!(t_copula_lambda(1.0, 1.0).is_err());
    }

    #[test]
    fn standardize_examples() {
        let s = standardize_weights(&[vec![1.0, 0.0], vec![0.0, 1.0]], 2, 1.0).unwrap();
        assert!(!s.was_augmented());
        assert_relative_eq!(s.measure().weights()[0], 0.5, max_relative = 1e-14);
        let s = standardize_weights(&[vec![0.5, 0.5]], 2, 1.0).unwrap();
        assert_eq!(s.measure().weights(), &[1.0]);
        let s = standardize_weights(&[vec![0.9, 0.1], vec![0.1, 0.9]], 2, 1.0).unwrap();
        assert_relative_eq!(s.measure().weights()[0], 0.5, max_relative = 1e-12);
        assert_relative_eq!(s.measure().weights()[1], 0.5, max_relative = 1e-12);
    }

    #[test]
    fn standardize_augments_when_needed() {
        let s = standardize_weights(&[vec![0.8, 0.2]], 2, 1.0).unwrap();
        assert!(s.was_augmented());
        let m = margin_moments(s.measure());
        assert!((m[0] - m[1]).abs() < 1e-12);
        assert!(standardize_weights(&[vec![0.8, 0.2, 0.0]], 2, 1.0).is_err());
    }

    #[test]
    fn standardize_signed_atoms() {
        let atoms = vec![vec![0.6, -0.4], vec![-0.3, 0.7], vec![0.5, 0.5]];
        let s = standardize_weights(&atoms, 2, 1.0).unwrap();
        assert!(s.measure().is_signed());
        let m = margin_moments(s.measure());
        assert!((m[0] - m[1]).abs() < 1e-12 && m[0] > 0.0);
    }

    #[test]
    fn max_linear_ratio_on_factor_measures() {
        let coef =
            MaxLinearCoefficients::new(vec![vec![0, 1], vec![2, 3]], w(&[0.5, 0.5]), 4).unwrap();
        let ml = CombinerSpec::max_linear(coef);
        let axes = DiscreteAngularMeasure::axes(4, 1.0).unwrap();
        assert_relative_eq!(
            asymptotic_ratio(&ml, &axes).unwrap(),
            1.0,
            max_relative = 1e-14
        );
        // All factors comonotone: E[max_j a_w(j)/4] / (c_w * 1/4) = (1/4)/1.
        let co = DiscreteAngularMeasure::comonotone(4, 1.0).unwrap();
        assert_relative_eq!(
            asymptotic_ratio(&ml, &co).unwrap(),
            0.25,
            max_relative = 1e-14
        );
    }

    #[test]
    fn breiman_mc_examples() {
        let lin = CombinerSpec::linear(w(&[0.5, 0.5]));
        let fixed = |_: &mut RngStream| vec![0.5, 0.5];
        let e = breiman_ratio_mc(fixed, &lin, 1.0, 1000, 1).unwrap();
        assert_relative_eq!(e.value, 1.0, max_relative = 1e-14);
        assert!(e.se < 1e-12);
        let e = breiman_ratio_mc(fixed, &CombinerSpec::Tippett, 1.0, 1000, 1).unwrap();
        assert_relative_eq!(e.value, 0.5, max_relative = 1e-14);
        let coin = |s: &mut RngStream| {
            if s.open01() < 0.5 {
                vec![1.0, 0.0]
            } else {
                vec![0.0, 1.0]
            }
        };
        let e = breiman_ratio_mc(coin, &lin, 1.0, 100_000, 9).unwrap();
        assert!((e.value - 1.0).abs() <= 3.0 * e.se, "{e:?}");
        let zero = |_: &mut RngStream| vec![0.0, 0.0];
        assert!(breiman_ratio_mc(zero, &lin, 1.0, 100, 1).is_err());
    }
}
