//! Homogeneous combination statistics and anchor-calibrated combined p-values.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Error, Result};
use crate::transforms::{
    cauchy_survival, frechet_transform, sidak_screen, PValueVector, TailScale,
};

const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Weights(Vec<f64>);

impl Weights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return domain("weight vector is empty");
        }
        if let Some(bad) = w.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return domain(format!("weight {bad} is not a nonnegative finite number"));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return domain(format!("weights sum to {sum}, expected 1"));
        }
        Ok(Self(w))
    }

    /// Equal weights `1/d`.
    pub fn uniform(d: usize) -> Result<Self> {
        if d == 0 {
            return domain("uniform weights need d >= 1");
        }
        Ok(Self(vec![1.0 / d as f64; d]))
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
}

impl TryFrom<Vec<f64>> for Weights {
    type Error = Error;

    fn try_from(w: Vec<f64>) -> Result<Self> {
        Self::new(w)
    }
}

impl From<Weights> for Vec<f64> {
    fn from(w: Weights) -> Self {
        w.0
    }
}

/// Coefficients of the max-linear (Fréchet) combination over screening blocks.
///
/// Row `i` of `a` is block `I_i` with entries `1/|I_i|` on its members, so
/// `a_w(j) = max_i w_i a_ij` and `c_w = sum_j a_w(j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MaxLinearDef", into = "MaxLinearDef")]
pub struct MaxLinearCoefficients {
    blocks: Vec<Vec<usize>>,
    weights: Weights,
    n_factors: usize,
    a: Vec<Vec<f64>>,
    a_w: Vec<f64>,
    c_w: f64,
}

/// Serialized form: zero-based block member indices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaxLinearDef {
    pub blocks: Vec<Vec<usize>>,
    pub weights: Vec<f64>,
    pub n_factors: usize,
}

impl TryFrom<MaxLinearDef> for MaxLinearCoefficients {
    type Error = Error;

    fn try_from(d: MaxLinearDef) -> Result<Self> {
        Self::new(d.blocks, Weights::new(d.weights)?, d.n_factors)
    }
}

impl From<MaxLinearCoefficients> for MaxLinearDef {
    fn from(c: MaxLinearCoefficients) -> Self {
        MaxLinearDef {
            blocks: c.blocks,
            weights: c.weights.0,
            n_factors: c.n_factors,
        }
    }
}

impl MaxLinearCoefficients {
    /// Builds the coefficients from zero-based blocks over `n_factors` base tests.
    ///
    /// Blocks may overlap, but every factor must belong to at least one block.
    pub fn new(blocks: Vec<Vec<usize>>, weights: Weights, n_factors: usize) -> Result<Self> {
        if blocks.is_empty() {
            return config("max-linear combiner needs at least one block");
        }
        if weights.len() != blocks.len() {
            return config(format!(
                "{} weights given for {} blocks",
                weights.len(),
                blocks.len()
            ));
        }
        let mut covered = vec![false; n_factors];
        for (i, block) in blocks.iter().enumerate() {
            if block.is_empty() {
                return config(format!("block {} is empty", i + 1));
            }
            for &j in block {
                if j >= n_factors {
                    return config(format!(
                        "block {} references index {} but there are {} base tests",
                        i + 1,
                        j + 1,
                        n_factors
                    ));
                }
                covered[j] = true;
            }
        }
        if let Some(j) = covered.iter().position(|c| !c) {
            return config(format!("base test {} is not covered by any block", j + 1));
        }
        let a: Vec<Vec<f64>> = blocks
            .iter()
            .map(|block| {
                let mut row = vec![0.0; n_factors];
                let share = 1.0 / block.len() as f64;
                for &j in block {
                    row[j] = share;
                }
                row
            })
            .collect();
        let a_w: Vec<f64> = (0..n_factors)
            .map(|j| {
                a.iter()
                    .zip(weights.as_slice())
                    .map(|(row, w)| w * row[j])
                    .fold(0.0, f64::max)
            })
            .collect();
        let c_w: f64 = a_w.iter().sum();
        if !(c_w > 0.0) {
            return config("max-linear normalizing constant c_w is zero");
        }
        Ok(Self {
            blocks,
            weights,
            n_factors,
            a,
            a_w,
            c_w,
        })
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    /// Number of screening blocks (tests combined).
    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Number of base tests (factors).
    pub fn n_factors(&self) -> usize {
        self.n_factors
    }

    /// The `d x n` coefficient matrix, row-major.
    pub fn matrix(&self) -> &[Vec<f64>] {
        &self.a
    }

    pub fn a_w(&self) -> &[f64] {
        &self.a_w
    }

    pub fn c_w(&self) -> f64 {
        self.c_w
    }

    /// Sidak-screened Fréchet statistic `Y_w = max_j w_j Psi(p(I_j))` over raw
    /// base-test p-values.
    pub fn statistic(&self, p_raw: &[f64]) -> Result<f64> {
        if p_raw.len() != self.n_factors {
            return domain(format!(
                "expected {} base p-values, got {}",
                self.n_factors,
                p_raw.len()
            ));
        }
        let mut y_w: f64 = 0.0;
        for (block, w) in self.blocks.iter().zip(self.weights.as_slice()) {
            let p_min = block
                .iter()
                .map(|&j| p_raw[j])
                .fold(f64::INFINITY, f64::min);
            let screened = sidak_screen(p_min, block.len())?;
            let y = frechet_transform(screened)?;
            y_w = y_w.max(w * y);
        }
        Ok(y_w)
    }
}

/// `(Y_w, c_w)` of the Fréchet combination test for zero-based `blocks`.
pub fn fct_statistic(
    blocks: &[Vec<usize>],
    weights: &Weights,
    p_raw: &PValueVector,
) -> Result<(f64, f64)> {
    let coef = MaxLinearCoefficients::new(blocks.to_vec(), weights.clone(), p_raw.len())?;
    Ok((coef.statistic(p_raw.as_slice())?, coef.c_w()))
}

/// A 1-homogeneous combination function `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CombinerSpec {
    /// `(sum_i w_i x_i)_+`
    Linear { weights: Weights },
    /// `(1/d) max_i x_i`
    Tippett,
    /// `(sum_i w_i x_i^gamma)^(1/gamma)`
    PowerMean { weights: Weights, gamma: f64 },
    /// `max_j a_w(j) z_j` over the factor vector `z`.
    MaxLinear { coefficients: MaxLinearCoefficients },
}

impl CombinerSpec {
    pub fn linear(weights: Weights) -> Self {
        CombinerSpec::Linear { weights }
    }

    pub fn power_mean(weights: Weights, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return domain(format!("power-mean order {gamma} must be positive"));
        }
        Ok(CombinerSpec::PowerMean { weights, gamma })
    }

    pub fn max_linear(coefficients: MaxLinearCoefficients) -> Self {
        CombinerSpec::MaxLinear { coefficients }
    }

    /// Input dimension, when the combiner fixes one.
    pub fn dim(&self) -> Option<usize> {
        match self {
            CombinerSpec::Linear { weights } | CombinerSpec::PowerMean { weights, .. } => {
                Some(weights.len())
            }
            CombinerSpec::Tippett => None,
            CombinerSpec::MaxLinear { coefficients } => Some(coefficients.n_factors()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CombinerSpec::Linear { .. } => "linear",
            CombinerSpec::Tippett => "tippett",
            CombinerSpec::PowerMean { .. } => "powermean",
            CombinerSpec::MaxLinear { .. } => "maxlinear",
        }
    }

    /// Whether the combiner accepts negative coordinates.
    pub fn allows_negative(&self) -> bool {
        matches!(self, CombinerSpec::Linear { .. })
    }

    /// Evaluates `h(x)`.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        if let Some(d) = self.dim() {
            if x.len() != d {
                return domain(format!(
                    "{} combiner expects dimension {d}, got {}",
                    self.name(),
                    x.len()
                ));
            }
        } else if x.is_empty() {
            return domain("cannot combine an empty vector");
        }
        if !self.allows_negative() {
            if let Some(v) = x.iter().find(|v| !(**v >= 0.0)) {
                return domain(format!("{} combiner needs x >= 0, got {v}", self.name()));
            }
        }
        Ok(self.evaluate_unchecked(x))
    }

    /// `h(x)` without dimension or sign checks.
    pub(crate) fn evaluate_unchecked(&self, x: &[f64]) -> f64 {
        match self {
            CombinerSpec::Linear { weights } => {
                let s: f64 = weights.as_slice().iter().zip(x).map(|(w, v)| w * v).sum();
                s.max(0.0)
            }
            CombinerSpec::Tippett => {
                x.iter().copied().fold(f64::NEG_INFINITY, f64::max) / x.len() as f64
            }
            CombinerSpec::PowerMean { weights, gamma } => power_mean(weights.as_slice(), x, *gamma),
            CombinerSpec::MaxLinear { coefficients } => coefficients
                .a_w()
                .iter()
                .zip(x)
                .map(|(a, z)| a * z)
                .fold(0.0, f64::max),
        }
    }

    /// Parses the command line combiner grammar against input dimension `dim`:
    ///
    /// * `linear` or `linear:w1,w2,...`
    /// * `tippett`
    /// * `powermean:GAMMA` or `powermean:GAMMA:w1,w2,...`
    /// * `maxlinear:1,2;3,4` or `maxlinear:1,2;3,4:w1,w2` (one-based blocks over `dim` factors)
    ///
    /// Omitted weights default to equal weights.
    pub fn parse(spec: &str, dim: usize) -> Result<Self> {
        let mut parts = spec.trim().split(':');
        let kind = parts.next().unwrap_or_default().to_ascii_lowercase();
        let rest: Vec<&str> = parts.collect();
        let weights_or_uniform = |s: Option<&&str>, d: usize| -> Result<Weights> {
            match s {
                Some(s) => Weights::new(parse_list(s)?),
                None => Weights::uniform(d),
            }
        };
        match kind.as_str() {
            "linear" => {
                if rest.len() > 1 {
                    return config(format!("bad linear combiner '{spec}'"));
                }
                Ok(CombinerSpec::linear(weights_or_uniform(rest.first(), dim)?))
            }
            "tippett" => {
                if !rest.is_empty() {
                    return config("tippett combiner takes no parameters");
                }
                Ok(CombinerSpec::Tippett)
            }
            "powermean" => {
                let gamma = rest
                    .first()
                    .ok_or_else(|| {
                        Error::Config("powermean needs an order: powermean:GAMMA".into())
                    })?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("bad power-mean order: {e}")))?;
                if rest.len() > 2 {
                    return config(format!("bad powermean combiner '{spec}'"));
                }
                CombinerSpec::power_mean(weights_or_uniform(rest.get(1), dim)?, gamma)
            }
            "maxlinear" => {
                let blocks_src = rest.first().ok_or_else(|| {
                    Error::Config("maxlinear needs blocks: maxlinear:1,2;3,4".into())
                })?;
                let blocks = parse_blocks(blocks_src)?;
                if rest.len() > 2 {
                    return config(format!("bad maxlinear combiner '{spec}'"));
                }
                let weights = weights_or_uniform(rest.get(1), blocks.len())?;
                Ok(CombinerSpec::max_linear(MaxLinearCoefficients::new(
                    blocks, weights, dim,
                )?))
            }
            other => config(format!("unknown combiner '{other}'")),
        }
    }
}

impl fmt::Display for CombinerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CombinerSpec::PowerMean { gamma, .. } => write!(f, "powermean({gamma})"),
            other => f.write_str(other.name()),
        }
    }
}

fn power_mean(w: &[f64], x: &[f64], gamma: f64) -> f64 {
    let m = x.iter().copied().fold(0.0, f64::max);
    if m == 0.0 {
        return 0.0;
    }
    let s: f64 = w.iter().zip(x).map(|(w, v)| w * (v / m).powf(gamma)).sum();
    m * s.powf(1.0 / gamma)
}

/// Comma- or whitespace-separated reals.
pub(crate) fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|e| Error::Parse(format!("'{t}': {e}")))
        })
        .collect()
}

/// One-based blocks separated by `;`, members by `,` or whitespace.
pub(crate) fn parse_blocks(s: &str) -> Result<Vec<Vec<usize>>> {
    s.split(';')
        .map(|block| {
            block
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(|t| match t.parse::<usize>() {
                    Ok(0) => Err(Error::Parse("block indices are one-based".into())),
                    Ok(i) => Ok(i - 1),
                    Err(e) => Err(Error::Parse(format!("block index '{t}': {e}"))),
                })
                .collect()
        })
        .collect()
}

/// True iff `h(c x) = c h(x)` within `1e-10 (1 + |h(x)| c)`.
pub fn homogeneity_check(combiner: &CombinerSpec, x: &[f64], c: f64) -> Result<bool> {
    if !(c > 0.0) {
        return domain(format!("scale {c} must be positive"));
    }
    let hx = combiner.evaluate(x)?;
    let scaled: Vec<f64> = x.iter().map(|v| c * v).collect();
    let hcx = combiner.evaluate(&scaled)?;
    Ok((hcx - c * hx).abs() <= 1e-10 * (1.0 + hx.abs() * c))
}

/// The supported (scale, combiner) pairings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    Pct,
    Cct,
    Tippett,
    Fct,
    PowerMean,
}

impl TestKind {
    pub fn name(self) -> &'static str {
        match self {
            TestKind::Pct => "pct",
            TestKind::Cct => "cct",
            TestKind::Tippett => "tippett",
            TestKind::Fct => "fct",
            TestKind::PowerMean => "powermean",
        }
    }
}

/// A combination test: marginal transform onto `scale`, then `combiner`,
/// then inversion of the independence anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TestDef", into = "TestDef")]
pub struct CombinationTest {
    scale: TailScale,
    combiner: CombinerSpec,
    kind: TestKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestDef {
    pub scale: TailScale,
    pub combiner: CombinerSpec,
}

impl TryFrom<TestDef> for CombinationTest {
    type Error = Error;

    fn try_from(d: TestDef) -> Result<Self> {
        Self::new(d.scale, d.combiner)
    }
}

impl From<CombinationTest> for TestDef {
    fn from(t: CombinationTest) -> Self {
        TestDef {
            scale: t.scale,
            combiner: t.combiner,
        }
    }
}

impl CombinationTest {
    pub fn new(scale: TailScale, combiner: CombinerSpec) -> Result<Self> {
        let kind = match (scale, &combiner) {
            (TailScale::Pareto1, CombinerSpec::Linear { .. }) => TestKind::Pct,
            (TailScale::Cauchy, CombinerSpec::Linear { .. }) => TestKind::Cct,
            (TailScale::Frechet1, CombinerSpec::Tippett) => TestKind::Tippett,
            (TailScale::Frechet1, CombinerSpec::MaxLinear { .. }) => TestKind::Fct,
            (TailScale::Pareto1, CombinerSpec::PowerMean { .. }) => TestKind::PowerMean,
            (scale, c) => {
                return config(format!(
                    "unsupported pairing of {} scale with {} combiner",
                    scale.name(),
                    c.name()
                ))
            }
        };
        Ok(Self {
            scale,
            combiner,
            kind,
        })
    }

    /// Pareto combination test (weighted harmonic mean).
    pub fn pct(weights: Weights) -> Self {
        Self::new(TailScale::Pareto1, CombinerSpec::linear(weights)).expect("valid pairing")
    }

    /// Cauchy combination test.
    pub fn cct(weights: Weights) -> Self {
        Self::new(TailScale::Cauchy, CombinerSpec::linear(weights)).expect("valid pairing")
    }

    pub fn tippett() -> Self {
        Self::new(TailScale::Frechet1, CombinerSpec::Tippett).expect("valid pairing")
    }

    /// Fréchet combination test over screening blocks.
    pub fn fct(coefficients: MaxLinearCoefficients) -> Self {
        Self::new(TailScale::Frechet1, CombinerSpec::max_linear(coefficients))
            .expect("valid pairing")
    }

    pub fn power_mean(weights: Weights, gamma: f64) -> Result<Self> {
        Self::new(
            TailScale::Pareto1,
            CombinerSpec::power_mean(weights, gamma)?,
        )
    }

    /// Builds a test by name for `d` base p-values with equal weights.
    ///
    /// `fct` uses singleton blocks; `powermean` needs `gamma`.
    pub fn by_name(name: &str, d: usize, gamma: Option<f64>) -> Result<Self> {
        let name = name.trim().to_ascii_lowercase();
        match name.as_str() {
            "pct" => Ok(Self::pct(Weights::uniform(d)?)),
            "cct" => Ok(Self::cct(Weights::uniform(d)?)),
            "tippett" => Ok(Self::tippett()),
            "fct" => {
                let blocks = (0..d).map(|j| vec![j]).collect();
                Ok(Self::fct(MaxLinearCoefficients::new(
                    blocks,
                    Weights::uniform(d)?,
                    d,
                )?))
            }
            "powermean" => {
                let gamma =
                    gamma.ok_or_else(|| Error::Config("powermean test needs --gamma".into()))?;
                Self::power_mean(Weights::uniform(d)?, gamma)
            }
            other => config(format!("unknown test '{other}'")),
        }
    }

    pub fn kind(&self) -> TestKind {
        self.kind
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn scale(&self) -> TailScale {
        self.scale
    }

    pub fn combiner(&self) -> &CombinerSpec {
        &self.combiner
    }

    /// Number of base p-values the test expects, when fixed.
    pub fn dim(&self) -> Option<usize> {
        self.combiner.dim()
    }

    /// Combined p-value in (0, 1].
    pub fn combined_pvalue(&self, p: &PValueVector) -> Result<f64> {
        if let Some(d) = self.dim() {
            if p.len() != d {
                return domain(format!(
                    "{} expects {d} p-values, got {}",
                    self.name(),
                    p.len()
                ));
            }
        }
        let x = match self.kind {
            TestKind::Tippett | TestKind::Fct => Vec::new(),
            _ => p
                .as_slice()
                .iter()
                .map(|&pi| self.scale.inverse_survival(pi))
                .collect::<Result<Vec<_>>>()?,
        };
        self.combined_pvalue_scaled(p.as_slice(), &x)
    }

    /// Combined p-value from clamped p-values `p` and, for the Pareto and
    /// Cauchy tests, their transforms `x` onto [`Self::scale`].
    pub fn combined_pvalue_scaled(&self, p: &[f64], x: &[f64]) -> Result<f64> {
        let out = match self.kind {
            TestKind::Pct | TestKind::PowerMean => {
                let t = self.combiner.evaluate_unchecked(x);
                if t <= 1.0 {
                    1.0
                } else {
                    1.0 / t
                }
            }
            TestKind::Cct => {
                let CombinerSpec::Linear { weights } = &self.combiner else {
                    unreachable!()
                };
                let t: f64 = weights.as_slice().iter().zip(x).map(|(w, v)| w * v).sum();
                cauchy_survival(t)
            }
            TestKind::Tippett => {
                let p_min = p.iter().copied().fold(f64::INFINITY, f64::min);
                sidak_screen(p_min, p.len())?
            }
            TestKind::Fct => {
                let CombinerSpec::MaxLinear { coefficients } = &self.combiner else {
                    unreachable!()
                };
                let y_w = coefficients.statistic(p)?;
                -(-coefficients.c_w() / y_w).exp_m1()
            }
        };
        if !out.is_finite() {
            return Err(Error::Numerical(format!(
                "{} produced a non-finite p-value",
                self.name()
            )));
        }
        Ok(out)
    }
}

impl fmt::Display for CombinationTest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
