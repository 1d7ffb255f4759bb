//! Correlation matrices for the elliptical models.

use std::fmt;

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Error, Result};

const UNIT_DIAG_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaKind {
    /// `rho^|i-j|`
    Ar,
    /// ones on the diagonal, `rho` elsewhere
    Exch,
}

/// Either a parametric family or an explicit dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaSpec {
    Param { kind: SigmaKind, rho: f64 },
    Dense(Vec<Vec<f64>>),
}

impl SigmaSpec {
    pub fn identity() -> Self {
        SigmaSpec::Param {
            kind: SigmaKind::Ar,
            rho: 0.0,
        }
    }

    /// `ar:0.5`, `exch:0.3`, `identity`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "identity" || s == "iid" {
            return Ok(Self::identity());
        }
        let (kind, rho) = s.split_once(':').ok_or_else(|| {
            Error::Config(format!("bad sigma spec '{s}', expected ar:RHO or exch:RHO"))
        })?;
        let rho: f64 = rho
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad correlation '{rho}' in sigma spec")))?;
        let kind = match kind.trim() {
            "ar" => SigmaKind::Ar,
            "exch" => SigmaKind::Exch,
            other => return config(format!("unknown sigma kind '{other}'")),
        };
        Ok(SigmaSpec::Param { kind, rho })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            SigmaSpec::Param {
                kind: SigmaKind::Ar,
                ..
            } => "ar",
            SigmaSpec::Param {
                kind: SigmaKind::Exch,
                ..
            } => "exch",
            SigmaSpec::Dense(_) => "dense",
        }
    }

    pub fn rho(&self) -> Option<f64> {
        match self {
            SigmaSpec::Param { rho, .. } => Some(*rho),
            SigmaSpec::Dense(_) => None,
        }
    }

    pub fn build(&self, d: usize) -> Result<DMatrix<f64>> {
        sigma_build(self, d)
    }
}

impl fmt::Display for SigmaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SigmaSpec::Param { rho, .. } => write!(f, "{}:{rho}", self.kind_name()),
            SigmaSpec::Dense(_) => f.write_str("dense"),
        }
    }
}

/// Builds and validates a correlation matrix.
pub fn sigma_build(spec: &SigmaSpec, d: usize) -> Result<DMatrix<f64>> {
    if d == 0 {
        return domain("dimension must be at least 1");
    }
    let m = match spec {
        SigmaSpec::Param {
            kind: SigmaKind::Ar,
            rho,
        } => {
            if !(rho.abs() < 1.0) {
                return domain(format!("AR correlation {rho} must lie in (-1, 1)"));
            }
            DMatrix::from_fn(d, d, |i, j| rho.powi(i.abs_diff(j) as i32))
        }
        SigmaSpec::Param {
            kind: SigmaKind::Exch,
            rho,
        } => {
            let lo = if d > 1 { -1.0 / (d as f64 - 1.0) } else { -1.0 };
            if !(*rho > lo && *rho < 1.0) {
                return domain(format!(
                    "exchangeable correlation {rho} must lie in ({lo}, 1) for d = {d}"
                ));
            }
            DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { *rho })
        }
        SigmaSpec::Dense(rows) => {
            if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                return domain(format!("dense sigma must be {d} x {d}"));
            }
            let m = DMatrix::from_fn(d, d, |i, j| rows[i][j]);
            for i in 0..d {
                if (m[(i, i)] - 1.0).abs() > UNIT_DIAG_TOL {
                    return domain(format!("sigma[{i}][{i}] = {} but must be 1", m[(i, i)]));
                }
                for j in 0..i {
                    if m[(i, j)] != m[(j, i)] {
                        return domain("sigma is not symmetric");
                    }
                }
            }
            m
        }
    };
    cholesky_factor(&m)?;
    Ok(m)
}

/// Lower-triangular `L` with `L L^T = sigma`.
pub fn cholesky_factor(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Cholesky::<f64, Dyn>::new(sigma.clone())
        .map(|c| c.l())
        .ok_or_else(|| Error::Domain("sigma is not positive definite".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_examples() {
        let i3 = sigma_build(&SigmaSpec::identity(), 3).unwrap();
        assert_eq!(i3, DMatrix::identity(3, 3));
        let ar = sigma_build(&SigmaSpec::parse("ar:0.5").unwrap(), 3).unwrap();
        assert_eq!(
            ar,
            DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.25, 0.5, 1.0, 0.5, 0.25, 0.5, 1.0])
        );
        let ex = sigma_build(&SigmaSpec::parse("exch:0.5").unwrap(), 2).unwrap();
        assert_eq!(ex, DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]));
    }

    #[test]
    fn rejects_invalid() {
        assert!(sigma_build(&SigmaSpec::parse("ar:1").unwrap(), 3).is_err());
        assert!(sigma_build(&SigmaSpec::parse("exch:-0.5").unwrap(), 3).is_err());
        let not_pd = SigmaSpec::Dense(vec![vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(sigma_build(&not_pd, 2).is_err());
        let asym = SigmaSpec::Dense(vec![vec![1.0, 0.1], vec![0.2, 1.0]]);
        assert!(sigma_build(&asym, 2).is_err());
        let diag = SigmaSpec::Dense(vec![vec![2.0, 0.0], vec![0.0, 1.0]]);
        assert!(sigma_build(&diag, 2).is_err());
        assert!(SigmaSpec::parse("toeplitz:0.3").is_err());
    }

    #[test]
    fn cholesky_reconstructs() {
        let s = sigma_build(&SigmaSpec::parse("ar:0.7").unwrap(), 5).unwrap();
        let l = cholesky_factor(&s).unwrap();
        assert!((&l * l.transpose() - &s).amax() < 1e-14);
    }

    #[test]
    fn json_forms() {
        let p: SigmaSpec = serde_json::from_str(r#"{"kind":"ar","rho":0.5}"#).unwrap();
        assert_eq!(p, SigmaSpec::parse("ar:0.5").unwrap());
        let d: SigmaSpec = serde_json::from_str("[[1,0],[0,1]]").unwrap();
        assert_eq!(d.kind_name(), "dense");
    }
}
