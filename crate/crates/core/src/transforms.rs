//! Marginal p-value transforms onto heavy-tailed scales, plus the scalar
//! distribution functions used by the samplers.
//!
//! Every scale maps small p-values to large values, so the rejection
//! direction is the same for all tests built on top of them.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{domain, Result};

/// Smallest p-value accepted after clamping.
pub const P_MIN: f64 = 1e-300;
/// Largest p-value accepted after clamping.
pub const P_MAX: f64 = 1.0 - 1e-16;

const BETA_CF_TOL: f64 = 1e-14;
const BETA_CF_MAX_ITER: usize = 300;

/// Clamps a p-value into `[P_MIN, P_MAX]`. Values outside `[0, 1]` (or NaN)
/// are rejected.
pub fn clamp_pvalue(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return domain(format!("p-value {p} is not in [0, 1]"));
    }
    Ok(p.clamp(P_MIN, P_MAX))
}

/// A vector of marginal p-values, each clamped strictly inside (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PValueVector(Vec<f64>);

impl PValueVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return domain("p-value vector must have at least one entry");
        }
        let values = values
            .into_iter()
            .map(clamp_pvalue)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for PValueVector {
    type Error = crate::Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<PValueVector> for Vec<f64> {
    fn from(p: PValueVector) -> Self {
        p.0
    }
}

impl AsRef<[f64]> for PValueVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Standard 1-Pareto scale: `X = 1/p`.
pub fn pareto_transform(p: f64) -> Result<f64> {
    Ok(1.0 / clamp_pvalue(p)?)
}

/// Standard Cauchy scale: `X = tan(pi (1/2 - p))`.
pub fn cauchy_transform(p: f64) -> Result<f64> {
    let p = clamp_pvalue(p)?;
    Ok(cauchy_quantile_upper(p))
}

// tan(pi(1/2 - p)) without cancellation near either endpoint.
fn cauchy_quantile_upper(p: f64) -> f64 {
    if p < 0.25 {
        1.0 / (PI * p).tan()
    } else if p > 0.75 {
        -1.0 / (PI * (1.0 - p)).tan()
    } else {
        (PI * (0.5 - p)).tan()
    }
}

/// Standard 1-Fréchet scale: `X = -1/log(1 - p)`.
///
/// Decreasing in `p`; `X ≈ 1/p` for small `p`.
pub fn frechet_transform(p: f64) -> Result<f64> {
    let p = clamp_pvalue(p)?;
    Ok(-1.0 / (-p).ln_1p())
}

/// Sidak screening of the minimum of `m` p-values: `1 - (1 - p_min)^m`.
pub fn sidak_screen(p_min: f64, m: usize) -> Result<f64> {
    if m == 0 {
        return domain("sidak_screen needs m >= 1");
    }
    if !(0.0..=1.0).contains(&p_min) {
        return domain(format!("p_min {p_min} is not in [0, 1]"));
    }
    if p_min == 1.0 {
        return Ok(1.0);
    }
    Ok(-(m as f64 * (-p_min).ln_1p()).exp_m1())
}

/// Heavy-tailed scale onto which p-values are mapped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailScale {
    Pareto1,
    Cauchy,
    Frechet1,
}

impl TailScale {
    /// `F^{-1}(1 - p)` for the scale's distribution `F`.
    pub fn inverse_survival(self, p: f64) -> Result<f64> {
        match self {
            TailScale::Pareto1 => pareto_transform(p),
            TailScale::Cauchy => cauchy_transform(p),
            TailScale::Frechet1 => frechet_transform(p),
        }
    }

    /// Exact survival function `P[X > x]` of the scale's distribution.
    pub fn survival(self, x: f64) -> f64 {
        match self {
            TailScale::Pareto1 => {
                if x <= 1.0 {
                    1.0
                } else {
                    1.0 / x
                }
            }
            TailScale::Cauchy => cauchy_survival(x),
            TailScale::Frechet1 => {
                if x <= 0.0 {
                    1.0
                } else {
                    -(-1.0 / x).exp_m1()
                }
            }
        }
    }

    /// Limit of `t * P[X > t]`: 1 for Pareto and Fréchet, `1/pi` for Cauchy.
    pub fn tail_constant(self) -> f64 {
        match self {
            TailScale::Cauchy => 1.0 / PI,
            _ => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TailScale::Pareto1 => "pareto1",
            TailScale::Cauchy => "cauchy",
            TailScale::Frechet1 => "frechet1",
        }
    }
}

/// Survival function of the standard Cauchy law.
pub fn cauchy_survival(x: f64) -> f64 {
    if x > 0.0 {
        (1.0 / x).atan() / PI
    } else {
        0.5 - x.atan() / PI
    }
}

/// Standard normal upper tail `P[N > x]`.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(x / std::f64::consts::SQRT_2)
}

/// CDF of the Student t distribution with `nu` degrees of freedom.
pub fn student_t_cdf(x: f64, nu: f64) -> Result<f64> {
    if !(nu > 0.0) || !nu.is_finite() {
        return domain(format!("degrees of freedom {nu} must be positive"));
    }
    if x.is_nan() {
        return domain("student_t_cdf of NaN");
    }
    if x == 0.0 {
        return Ok(0.5);
    }
    if x.is_infinite() {
        return Ok(if x > 0.0 { 1.0 } else { 0.0 });
    }
    if nu == 1.0 {
        return Ok(cauchy_survival(-x));
    }
    if nu == 2.0 {
        let r = (2.0 + x * x).sqrt();
        let tail = 1.0 / (r * (r + x.abs()));
        return Ok(if x > 0.0 { 1.0 - tail } else { tail });
    }
    // P[|T| > |x|] = I_z(nu/2, 1/2) with z = nu / (nu + x^2).
    let x2 = x * x;
    let (z, one_minus_z) = if x2 < nu {
        let denom = nu + x2;
        (nu / denom, x2 / denom)
    } else {
        // Avoid overflow of x^2 for huge |x| by dividing through.
        let r = nu / x2;
        (r / (1.0 + r), 1.0 / (1.0 + r))
    };
    let two_sided = reg_inc_beta(0.5 * nu, 0.5, z, one_minus_z)?;
    let tail = 0.5 * two_sided;
    Ok(if x > 0.0 { 1.0 - tail } else { tail })
}

/// Upper tail `P[T > x]` of the Student t distribution, accurate far into the tail.
pub fn student_t_sf(x: f64, nu: f64) -> Result<f64> {
    student_t_cdf(-x, nu)
}

/// Regularized incomplete beta `I_x(a, b)`, with `y = 1 - x` supplied by the
/// caller so that no precision is lost forming it.
pub fn reg_inc_beta(a: f64, b: f64, x: f64, y: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) {
        return domain(format!("incomplete beta needs a, b > 0 (got {a}, {b})"));
    }
    if !(0.0..=1.0).contains(&x) {
        return domain(format!("incomplete beta argument {x} not in [0, 1]"));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if y == 0.0 {
        return Ok(1.0);
    }
    if x > (a + 1.0) / (a + b + 2.0) {
        Ok(1.0 - beta_tail(b, a, y, x)?)
    } else {
        beta_tail(a, b, x, y)
    }
}

// I_x(a, b) by the continued fraction, valid for x < (a+1)/(a+b+2).
fn beta_tail(a: f64, b: f64, x: f64, y: f64) -> Result<f64> {
    let log_front = a * x.ln() + b * y.ln() - ln_beta(a, b);
    let cf = beta_continued_fraction(a, b, x)?;
    Ok(log_front.exp() * cf / a)
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> Result<f64> {
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=BETA_CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() <= BETA_CF_TOL {
            return Ok(h);
        }
    }
    Err(crate::Error::Numerical(format!(
        "incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})"
    )))
}

fn ln_beta(a: f64, b: f64) -> f64 {
    // The Student t path always has one half-integer argument; for large
    // partners lgamma differences cancel badly, so use the ratio expansion.
    if b == 0.5 && a >= 25.0 {
        return ln_gamma(0.5) - ln_gamma_half_ratio(a);
    }
    if a == 0.5 && b >= 25.0 {
        return ln_gamma(0.5) - ln_gamma_half_ratio(b);
    }
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

// ln Γ(a + 1/2) - ln Γ(a), asymptotic expansion; error below 4e-15 for a >= 20.
fn ln_gamma_half_ratio(a: f64) -> f64 {
    let r = 1.0 / a;
    let r2 = r * r;
    0.5 * a.ln() - r / 8.0 + r * r2 / 192.0 - r * r2 * r2 / 640.0
        + 17.0 * r * r2 * r2 * r2 / 14336.0
}
