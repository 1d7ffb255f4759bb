use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::format::{
    cmp_opt, fmt_g17, fmt_opt, parse_f64, parse_opt, parse_u64, read_table, write_table,
};
use super::{count_replicates, LabeledTest};
use crate::error::{config, Error, Result};
use crate::samplers::{derive_seed, ModelSpec, RngStream, SigmaSpec};
use crate::transforms::{clamp_pvalue, TailScale};

/// Name of the likelihood-ratio baseline rows.
pub const BASELINE_NAME: &str = "np_lrt";

/// Which eigenvector of `Sigma^{-1}` the location shift follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// largest eigenvalue
    TopEigen,
    /// smallest eigenvalue
    BottomEigen,
}

impl Direction {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "top" | "top_eigen" => Ok(Direction::TopEigen),
            "bottom" | "bottom_eigen" => Ok(Direction::BottomEigen),
            other => config(format!(
                "unknown direction '{other}', expected top or bottom"
            )),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::TopEigen => "top_eigen",
            Direction::BottomEigen => "bottom_eigen",
        }
    }
}

/// Unit eigenvector of `sigma^{-1}` and its eigenvalue, signed so that its
/// entries sum to a nonnegative number (first nonzero entry positive on ties).
pub fn eigen_direction(sigma: &DMatrix<f64>, direction: Direction) -> Result<(Vec<f64>, f64)> {
    let inv = sigma
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("sigma is singular".into()))?;
    let eig = SymmetricEigen::new(inv);
    let values = eig.eigenvalues.as_slice();
    let pick = (0..values.len())
        .max_by(|&i, &j| match direction {
            Direction::TopEigen => values[i].total_cmp(&values[j]),
            Direction::BottomEigen => values[j].total_cmp(&values[i]),
        })
        .expect("nonempty spectrum");
    let mut v: Vec<f64> = eig.eigenvectors.column(pick).iter().copied().collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    let sum: f64 = v.iter().sum();
    let flip = if sum.abs() > 1e-12 {
        sum < 0.0
    } else {
        v.iter().find(|x| x.abs() > 1e-12).is_some_and(|x| *x < 0.0)
    };
    if flip {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    Ok((v, values[pick]))
}

/// Power study of a multivariate t location shift `mu = effect * v`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerConfig {
    pub nu: f64,
    pub d: usize,
    pub sigma: SigmaSpec,
    pub direction: Direction,
    pub effects: Vec<f64>,
    pub alpha: f64,
    pub n: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRecord {
    pub test: String,
    pub effect_size: f64,
    pub mu_direction: Direction,
    pub nu: f64,
    pub d: usize,
    pub alpha: f64,
    pub n_sims: u64,
    pub rejections: u64,
    pub power: f64,
    pub power_ratio_vs_baseline: Option<f64>,
    pub seed: u64,
}

pub const HEADER: [&str; 11] = [
    "test",
    "effect_size",
    "mu_direction",
    "nu",
    "d",
    "alpha",
    "n_sims",
    "rejections",
    "power",
    "power_ratio_vs_baseline",
    "seed",
];

impl PowerRecord {
    /// Standard error of `power`.
    pub fn se(&self) -> f64 {
        (self.power * (1.0 - self.power) / self.n_sims as f64).sqrt()
    }

    /// Sorted by `(test, nu, effect_size)`, header line first, trailing newline.
    pub fn to_csv(records: &[PowerRecord]) -> String {
        let mut sorted: Vec<&PowerRecord> = records.iter().collect();
        sorted.sort_by(|a, b| {
            a.test
                .cmp(&b.test)
                .then(a.nu.total_cmp(&b.nu))
                .then(a.effect_size.total_cmp(&b.effect_size))
                .then(cmp_opt(Some(a.alpha), Some(b.alpha)))
        });
        let rows: Vec<Vec<String>> = sorted
            .iter()
            .map(|r| {
                vec![
                    r.test.clone(),
                    fmt_g17(r.effect_size),
                    r.mu_direction.name().to_string(),
                    fmt_g17(r.nu),
                    r.d.to_string(),
                    fmt_g17(r.alpha),
                    r.n_sims.to_string(),
                    r.rejections.to_string(),
                    fmt_g17(r.power),
                    fmt_opt(r.power_ratio_vs_baseline),
                    r.seed.to_string(),
                ]
            })
            .collect();
        write_table(&HEADER, &rows)
    }

    pub fn parse_csv(text: &str) -> Result<Vec<PowerRecord>> {
        read_table(text, &HEADER)?
            .iter()
            .map(|f| {
                Ok(PowerRecord {
                    test: f[0].clone(),
                    effect_size: parse_f64(&f[1])?,
                    mu_direction: Direction::parse(&f[2])
                        .map_err(|e| Error::Parse(e.to_string()))?,
                    nu: parse_f64(&f[3])?,
                    d: parse_u64(&f[4])? as usize,
                    alpha: parse_f64(&f[5])?,
                    n_sims: parse_u64(&f[6])?,
                    rejections: parse_u64(&f[7])?,
                    power: parse_f64(&f[8])?,
                    power_ratio_vs_baseline: parse_opt(&f[9])?,
                    seed: parse_u64(&f[10])?,
                })
            })
            .collect()
    }

    pub fn emit_csv(records: &[PowerRecord], path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, Self::to_csv(records))?;
        Ok(())
    }
}

/// Log-likelihood ratio `log f(x; mu) / f(x; 0)` of the multivariate t.
struct LogLikelihoodRatio {
    precision: DMatrix<f64>,
    mu: DVector<f64>,
    nu: f64,
    d: f64,
}

impl LogLikelihoodRatio {
    fn quad(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.precision * x))
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let x = DVector::from_column_slice(x);
        let shifted = &x - &self.mu;
        -0.5 * (self.nu + self.d)
            * ((self.quad(&shifted) / self.nu).ln_1p() - (self.quad(&x) / self.nu).ln_1p())
    }
}

/// Randomized test at exact level `alpha` on the null sample: reject when
/// the statistic exceeds `threshold`, and with probability `tie_prob` on equality.
struct Cutoff {
    threshold: f64,
    tie_prob: f64,
}

fn null_cutoff(mut stats: Vec<f64>, alpha: f64) -> Cutoff {
    let n = stats.len();
    stats.sort_by(f64::total_cmp);
    let k = (((1.0 - alpha) * n as f64).ceil() as usize).clamp(1, n) - 1;
    let threshold = stats[k];
    let above = stats.iter().filter(|s| **s > threshold).count() as f64;
    let ties = stats.iter().filter(|s| **s == threshold).count() as f64;
    Cutoff {
        threshold,
        tie_prob: ((alpha * n as f64 - above) / ties).clamp(0.0, 1.0),
    }
}

struct Scratch {
    x: Vec<f64>,
    p: Vec<f64>,
    pareto: Vec<f64>,
    cauchy: Vec<f64>,
}

/// Power of each test and of the likelihood-ratio baseline on an effect grid.
///
/// All effect sizes reuse the same alternative streams (`RngStream::new(seed, r)`),
/// so rejection counts of monotone tests are monotone in the effect pathwise.
/// The baseline threshold comes from an independent null sample of the same
/// size keyed by `derive_seed(seed, 1)`.
pub fn run_power(
    config: &PowerConfig,
    tests: &[LabeledTest],
    workers: usize,
) -> Result<Vec<PowerRecord>> {
    let PowerConfig {
        nu,
        d,
        sigma,
        direction,
        effects,
        alpha,
        n,
        seed,
    } = config.clone();
    if !effects.contains(&0.0) {
        return self::config("effect grid must include 0");
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return self::config(format!("alpha {alpha} must lie in (0, 1)"));
    }
    if n == 0 {
        return self::config("n must be positive");
    }
    for t in tests {
        if let Some(k) = t.test.dim() {
            if k != d {
                return self::config(format!("test {} expects {k} p-values but d = {d}", t.label));
            }
        }
    }
    let sigma_matrix = sigma.build(d)?;
    let (v, _) = eigen_direction(&sigma_matrix, direction)?;
    let precision = sigma_matrix
        .try_inverse()
        .ok_or_else(|| Error::Numerical("sigma is singular".into()))?;
    let null_model = ModelSpec::MultivariateT {
        d,
        nu,
        sigma: sigma.clone(),
        mu: None,
    }
    .prepare()?;
    let null_seed = derive_seed(seed, 1);
    let width = tests.len() + 1;
    let mut records = Vec::with_capacity(effects.len() * width);

    for &effect in &effects {
        let mu: Vec<f64> = v.iter().map(|vi| effect * vi).collect();
        let llr = LogLikelihoodRatio {
            precision: precision.clone(),
            mu: DVector::from_column_slice(&mu),
            nu,
            d: d as f64,
        };
        let cutoff = null_cutoff(
            null_statistics(&null_model, &llr, n, null_seed, workers)?,
            alpha,
        );
        let model = ModelSpec::MultivariateT {
            d,
            nu,
            sigma: sigma.clone(),
            mu: Some(mu),
        }
        .prepare()?;
        let counts = count_replicates(
            n,
            workers,
            width,
            || Scratch {
                x: vec![0.0; d],
                p: vec![0.0; d],
                pareto: vec![0.0; d],
                cauchy: vec![0.0; d],
            },
            |r, s, counts| {
                let mut rng = RngStream::new(seed, r);
                model.sample(&mut rng, &mut s.x, &mut s.p);
                let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
                for pi in s.p.iter_mut() {
                    *pi = clamp_pvalue(*pi)?;
                }
                for i in 0..d {
                    s.pareto[i] = TailScale::Pareto1.inverse_survival(s.p[i])?;
                    s.cauchy[i] = TailScale::Cauchy.inverse_survival(s.p[i])?;
                }
                for (ti, t) in tests.iter().enumerate() {
                    let x: &[f64] = match t.test.scale() {
                        TailScale::Pareto1 => &s.pareto,
                        TailScale::Cauchy => &s.cauchy,
                        TailScale::Frechet1 => &[],
                    };
                    if t.test.combined_pvalue_scaled(&s.p, x)? <= alpha {
                        counts[ti] += 1;
                    }
                }
                let l = llr.eval(&s.x);
                if l > cutoff.threshold || (l == cutoff.threshold && u < cutoff.tie_prob) {
                    counts[tests.len()] += 1;
                }
                Ok(())
            },
        )?;
        let baseline_power = counts[tests.len()] as f64 / n as f64;
        let names = tests
            .iter()
            .map(|t| t.label.as_str())
            .chain(std::iter::once(BASELINE_NAME));
        for (name, k) in names.zip(counts) {
            let power = k as f64 / n as f64;
            records.push(PowerRecord {
                test: name.to_string(),
                effect_size: effect,
                mu_direction: direction,
                nu,
                d,
                alpha,
                n_sims: n,
                rejections: k,
                power,
                power_ratio_vs_baseline: (baseline_power > 0.0).then(|| power / baseline_power),
                seed,
            });
        }
    }
    Ok(records)
}

fn null_statistics(
    model: &crate::samplers::Model,
    llr: &LogLikelihoodRatio,
    n: u64,
    seed: u64,
    workers: usize,
) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    let d = model.d();
    let pool = super::thread_pool(workers)?;
    Ok(pool.install(|| {
        (0..n)
            .into_par_iter()
            .map_init(
                || vec![0.0; d],
                |x, r| {
                    let mut rng = RngStream::new(seed, r);
                    model.sample_raw(&mut rng, x);
                    llr.eval(x)
                },
            )
            .collect()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::parse_tests;

    fn config(effects: Vec<f64>, n: u64) -> PowerConfig {
        PowerConfig {
            nu: 10.0,
            d: 4,
            sigma: SigmaSpec::parse("ar:0.5").unwrap(),
            direction: Direction::BottomEigen,
            effects,
            alpha: 0.05,
            n,
            seed: 9,
        }
    }

    #[test]
    fn eigen_residuals() {
        let s = SigmaSpec::parse("ar:0.5").unwrap().build(6).unwrap();
        let inv = s.clone().try_inverse().unwrap();
        for dir in [Direction::TopEigen, Direction::BottomEigen] {
            let (v, lambda) = eigen_direction(&s, dir).unwrap();
            let v = DVector::from_vec(v);
            assert!((&inv * &v - &v * lambda).amax() <= 1e-10);
            assert!(v.sum() >= -1e-12);
        }
        let (bottom, _) = eigen_direction(&s, Direction::BottomEigen).unwrap();
        assert!(bottom.iter().all(|x| *x > 0.0));
        let (_, l) = eigen_direction(&DMatrix::identity(3, 3), Direction::TopEigen).unwrap();
        assert!((l - 1.0).abs() < 1e-12);
    }

    #[test]
    fn null_power_is_alpha() {
        let tests = parse_tests("pct,cct", 4).unwrap();
        let recs = run_power(&config(vec![0.0], 40_000), &tests, 1).unwrap();
        assert_eq!(recs.len(), 3);
        let baseline = recs.iter().find(|r| r.test == BASELINE_NAME).unwrap();
        assert!(
            (baseline.power - 0.05).abs() <= 4.0 * baseline.se(),
            "{baseline:?}"
        );
        // combination tests are only asymptotically calibrated
        for r in &recs {
            assert!((r.power / 0.05 - 1.0).abs() < 0.3, "{r:?}");
        }
    }

    #[test]
    fn power_grows_and_baseline_dominates() {
        let tests = parse_tests("pct,cct", 4).unwrap();
        let recs = run_power(&config(vec![0.0, 1.0, 3.0], 20_000), &tests, 1).unwrap();
        for name in ["pct", "cct", BASELINE_NAME] {
            let p: Vec<f64> = recs
                .iter()
                .filter(|r| r.test == name)
                .map(|r| r.power)
                .collect();
            assert!(p[0] < p[1] && p[1] < p[2], "{name}: {p:?}");
        }
        let at = |name: &str| {
            recs.iter()
                .find(|r| r.test == name && r.effect_size == 3.0)
                .unwrap()
                .power
        };
        assert!(at(BASELINE_NAME) >= at("pct") - 0.02);
    }

    #[test]
    fn csv_round_trip() {
        let tests = parse_tests("pct", 4).unwrap();
        let recs = run_power(&config(vec![0.0, 1.0], 2000), &tests, 1).unwrap();
        let text = PowerRecord::to_csv(&recs);
        assert!(text.starts_with(&(HEADER.join(",") + "\n")));
        let back = PowerRecord::parse_csv(&text).unwrap();
        assert_eq!(PowerRecord::to_csv(&back), text);
    }

    #[test]
    fn grid_needs_zero() {
        let tests = parse_tests("pct", 4).unwrap();
        assert!(matches!(
            run_power(&config(vec![1.0], 10), &tests, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn cutoff_handles_ties() {
        let c = null_cutoff(vec![0.0; 100], 0.05);
        assert_eq!(c.threshold, 0.0);
        assert!((c.tie_prob - 0.05).abs() < 1e-15);
        let c = null_cutoff((0..100).map(f64::from).collect(), 0.05);
        assert_eq!(c.threshold, 94.0);
        assert_eq!(c.tie_prob, 0.0);
    }
}
