use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::format::{
    cmp_opt, fmt_g17, fmt_opt, parse_f64, parse_opt, parse_u64, read_table, write_table, NA,
};
use super::{count_replicates, LabeledTest};
use crate::error::{config, Error, Result};
use crate::samplers::{ModelSpec, RngStream};
use crate::transforms::{clamp_pvalue, TailScale};

/// One `(test, model, alpha)` cell of a calibration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub test: String,
    pub model: String,
    pub nu: Option<f64>,
    pub d: usize,
    pub sigma_kind: Option<String>,
    pub rho: Option<f64>,
    pub alpha: f64,
    pub n_sims: u64,
    pub rejections: u64,
    pub alpha_hat_ratio: f64,
    pub se_ratio: f64,
    pub seed: u64,
}

pub const HEADER: [&str; 12] = [
    "test",
    "model",
    "nu",
    "d",
    "sigma_kind",
    "rho",
    "alpha",
    "n_sims",
    "rejections",
    "alpha_hat_ratio",
    "se_ratio",
    "seed",
];

impl CalibrationRecord {
    fn new(
        test: &str,
        model: &ModelSpec,
        d: usize,
        alpha: f64,
        n: u64,
        rejections: u64,
        seed: u64,
    ) -> Self {
        let a_hat = rejections as f64 / n as f64;
        Self {
            test: test.to_string(),
            model: model.fingerprint(),
            nu: model.nu(),
            d,
            sigma_kind: model.sigma_kind().map(str::to_string),
            rho: model.rho(),
            alpha,
            n_sims: n,
            rejections,
            alpha_hat_ratio: a_hat / alpha,
            se_ratio: (a_hat * (1.0 - a_hat) / n as f64).sqrt() / alpha,
            seed,
        }
    }

    fn fields(&self) -> Vec<String> {
        vec![
            self.test.clone(),
            self.model.clone(),
            fmt_opt(self.nu),
            self.d.to_string(),
            self.sigma_kind.clone().unwrap_or_else(|| NA.into()),
            fmt_opt(self.rho),
            fmt_g17(self.alpha),
            self.n_sims.to_string(),
            self.rejections.to_string(),
            fmt_g17(self.alpha_hat_ratio),
            fmt_g17(self.se_ratio),
            self.seed.to_string(),
        ]
    }

    fn from_fields(f: &[String]) -> Result<Self> {
        if f.len() != HEADER.len() {
            return Err(Error::Parse(format!(
                "expected {} fields, got {}",
                HEADER.len(),
                f.len()
            )));
        }
        Ok(Self {
            test: f[0].clone(),
            model: f[1].clone(),
            nu: parse_opt(&f[2])?,
            d: parse_u64(&f[3])? as usize,
            sigma_kind: (f[4] != NA).then(|| f[4].clone()),
            rho: parse_opt(&f[5])?,
            alpha: parse_f64(&f[6])?,
            n_sims: parse_u64(&f[7])?,
            rejections: parse_u64(&f[8])?,
            alpha_hat_ratio: parse_f64(&f[9])?,
            se_ratio: parse_f64(&f[10])?,
            seed: parse_u64(&f[11])?,
        })
    }

    /// Sorted by `(test, nu, alpha)`, header line first, trailing newline.
    pub fn to_csv(records: &[CalibrationRecord]) -> String {
        let mut sorted: Vec<&CalibrationRecord> = records.iter().collect();
        sorted.sort_by(|a, b| {
            a.test
                .cmp(&b.test)
                .then(cmp_opt(a.nu, b.nu))
                .then(a.alpha.total_cmp(&b.alpha))
        });
        let rows: Vec<Vec<String>> = sorted.iter().map(|r| r.fields()).collect();
        write_table(&HEADER, &rows)
    }

    pub fn parse_csv(text: &str) -> Result<Vec<CalibrationRecord>> {
        read_table(text, &HEADER)?
            .iter()
            .map(|f| Self::from_fields(f))
            .collect()
    }

    pub fn emit_csv(records: &[CalibrationRecord], path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, Self::to_csv(records))?;
        Ok(())
    }
}

/// Warning text when `n * min(alpha)` is below 50 expected rejections.
pub fn low_count_warning(n: u64, alphas: &[f64]) -> Option<String> {
    let a = alphas.iter().copied().fold(f64::INFINITY, f64::min);
    let expected = n as f64 * a;
    (expected < 50.0).then(|| {
        format!("n * alpha = {expected} at alpha = {a}; fewer than 50 expected rejections")
    })
}

struct Scratch {
    x: Vec<f64>,
    p: Vec<f64>,
    pareto: Vec<f64>,
    cauchy: Vec<f64>,
}

/// Counts rejections (`combined p <= alpha`) of every test at every level
/// over `n` replicates of `model`.
pub fn run_calibration(
    model: &ModelSpec,
    tests: &[LabeledTest],
    alphas: &[f64],
    n: u64,
    seed: u64,
    workers: usize,
) -> Result<Vec<CalibrationRecord>> {
    if !model.emits_pvalues() {
        return config(format!(
            "{} models have no exact margins; use the tail-scale experiment instead",
            model.kind_name()
        ));
    }
    if n == 0 {
        return config("n must be positive");
    }
    if tests.is_empty() || alphas.is_empty() {
        return config("need at least one test and one alpha");
    }
    if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && **a <= 0.5)) {
        return config(format!("alpha {a} must lie in (0, 0.5]"));
    }
    let prepared = model.prepare()?;
    let d = prepared.d();
    for t in tests {
        if let Some(k) = t.test.dim() {
            if k != d {
                return config(format!(
                    "test {} expects {k} p-values but the model has d = {d}",
                    t.label
                ));
            }
        }
    }
    let need_pareto = tests.iter().any(|t| t.test.scale() == TailScale::Pareto1);
    let need_cauchy = tests.iter().any(|t| t.test.scale() == TailScale::Cauchy);
    let n_alpha = alphas.len();

    let counts = count_replicates(
        n,
        workers,
        tests.len() * n_alpha,
        || Scratch {
            x: vec![0.0; d],
            p: vec![0.0; d],
            pareto: vec![0.0; d],
            cauchy: vec![0.0; d],
        },
        |r, s, counts| {
            let mut rng = RngStream::new(seed, r);
            prepared.sample(&mut rng, &mut s.x, &mut s.p);
            for pi in s.p.iter_mut() {
                *pi = clamp_pvalue(*pi)
                    .map_err(|e| Error::Numerical(format!("replicate {r}: {e}")))?;
            }
            if need_pareto {
                for (x, p) in s.pareto.iter_mut().zip(&s.p) {
                    *x = TailScale::Pareto1.inverse_survival(*p)?;
                }
            }
            if need_cauchy {
                for (x, p) in s.cauchy.iter_mut().zip(&s.p) {
                    *x = TailScale::Cauchy.inverse_survival(*p)?;
                }
            }
            for (ti, t) in tests.iter().enumerate() {
                let x: &[f64] = match t.test.scale() {
                    TailScale::Pareto1 => &s.pareto,
                    TailScale::Cauchy => &s.cauchy,
                    TailScale::Frechet1 => &[],
                };
                let pv = t.test.combined_pvalue_scaled(&s.p, x)?;
                for (ai, a) in alphas.iter().enumerate() {
                    if pv <= *a {
                        counts[ti * n_alpha + ai] += 1;
                    }
                }
            }
            Ok(())
        },
    )?;

    let mut records = Vec::with_capacity(counts.len());
    for (ti, t) in tests.iter().enumerate() {
        for (ai, a) in alphas.iter().enumerate() {
            records.push(CalibrationRecord::new(
                &t.label,
                model,
                d,
                *a,
                n,
                counts[ti * n_alpha + ai],
                seed,
            ));
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::angular::DiscreteAngularMeasure;
    use crate::experiments::parse_tests;
    use crate::samplers::SigmaSpec;

    fn iid(d: usize) -> ModelSpec {
        ModelSpec::GaussianCopula {
            d,
            sigma: SigmaSpec::identity(),
        }
    }

    #[test]
    fn record_invariants() {
        let tests = parse_tests("pct,tippett", 4).unwrap();
        let recs = run_calibration(&iid(4), &tests, &[0.05, 0.1], 20_000, 7, 1).unwrap();
        assert_eq!(recs.len(), 4);
        for r in &recs {
            let a_hat = r.rejections as f64 / r.n_sims as f64;
            assert_eq!(r.alpha_hat_ratio, a_hat / r.alpha);
            assert_eq!(
                r.se_ratio,
                (a_hat * (1.0 - a_hat) / r.n_sims as f64).sqrt() / r.alpha
            );
            assert_eq!(r.sigma_kind.as_deref(), Some("ar"));
            assert_eq!(r.nu, None);
        }
        let tippett = recs
            .iter()
            .find(|r| r.test == "tippett" && r.alpha == 0.05)
            .unwrap();
        assert!((tippett.alpha_hat_ratio - 1.0).abs() <= 4.0 * tippett.se_ratio);
    }

    #[test]
    fn worker_count_does_not_change_output() {
        let tests = parse_tests("pct,cct,tippett,fct", 3).unwrap();
        let model = ModelSpec::MultivariateT {
            d: 3,
            nu: 2.0,
            sigma: SigmaSpec::parse("ar:0.5").unwrap(),
            mu: None,
        };
        let a = run_calibration(&model, &tests, &[0.01, 0.1], 10_000, 3, 1).unwrap();
        let b = run_calibration(&model, &tests, &[0.01, 0.1], 10_000, 3, 3).unwrap();
        assert_eq!(CalibrationRecord::to_csv(&a), CalibrationRecord::to_csv(&b));
    }

    #[test]
    fn csv_round_trip_and_layout() {
        assert_eq!(CalibrationRecord::to_csv(&[]), HEADER.join(",") + "\n");
        let tests = parse_tests("pct", 2).unwrap();
        let recs = run_calibration(&iid(2), &tests, &[0.1, 0.01], 1000, 1, 1).unwrap();
        let text = CalibrationRecord::to_csv(&recs);
        assert!(text.ends_with('\n'));
        let back = CalibrationRecord::parse_csv(&text).unwrap();
        assert_eq!(back[0].alpha, 0.01);
        assert_eq!(CalibrationRecord::to_csv(&back), text);
        for (a, b) in back.iter().zip(recs.iter().rev()) {
            assert_eq!(a.alpha_hat_ratio.to_bits(), b.alpha_hat_ratio.to_bits());
            assert_eq!(a.se_ratio.to_bits(), b.se_ratio.to_bits());
        }
        assert!(CalibrationRecord::parse_csv("a,b\n1,2\n").is_err());
    }

    #[test]
    fn configuration_errors() {
        let lf = ModelSpec::LinearFactor {
            d: None,
            beta: 1.0,
            a: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        };
        let tests = parse_tests("pct", 2).unwrap();
        assert!(matches!(
            run_calibration(&lf, &tests, &[0.1], 10, 1, 1),
            Err(Error::Config(_))
        ));
        assert!(run_calibration(&iid(2), &tests, &[0.6], 10, 1, 1).is_err());
        let wrong_d = parse_tests("pct", 3).unwrap();
        assert!(run_calibration(&iid(2), &wrong_d, &[0.1], 10, 1, 1).is_err());
        assert!(low_count_warning(1000, &[0.01]).is_some());
        assert!(low_count_warning(10_000, &[0.01]).is_none());
    }

    #[test]
    fn breiman_axes_is_calibrated_for_pct() {
        let model = ModelSpec::BreimanDiscrete {
            d: None,
            measure: DiscreteAngularMeasure::axes(3, 1.0).unwrap(),
        };
        let tests = parse_tests("pct,tippett", 3).unwrap();
        let recs = run_calibration(&model, &tests, &[0.01], 100_000, 5, 1).unwrap();
        for r in recs {
            assert!(
                (r.alpha_hat_ratio - 1.0).abs() <= 4.0 * r.se_ratio + 0.03,
                "{r:?}"
            );
        }
    }
}
