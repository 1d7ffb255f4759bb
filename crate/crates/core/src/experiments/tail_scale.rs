use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::count_replicates;
use super::format::{fmt_g17, fmt_opt, write_table};
use crate::angular::spectral_moment;
use crate::combiners::CombinerSpec;
use crate::error::{config, Result};
use crate::samplers::{ModelSpec, RngStream};

/// Direct estimate of `t^beta P[h(X) > t]` at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailScaleRecord {
    pub combiner: String,
    pub model: String,
    pub threshold: f64,
    pub n_sims: u64,
    pub exceedances: u64,
    pub estimate: f64,
    pub se: f64,
    /// `c * E[h(Theta)^beta]` when the model's angular measure is known.
    pub limit: Option<f64>,
    pub seed: u64,
}

pub const HEADER: [&str; 9] = [
    "combiner",
    "model",
    "threshold",
    "n_sims",
    "exceedances",
    "estimate",
    "se",
    "limit",
    "seed",
];

impl TailScaleRecord {
    /// Rows in threshold order, header line first, trailing newline.
    pub fn to_csv(records: &[TailScaleRecord]) -> String {
        let mut sorted: Vec<&TailScaleRecord> = records.iter().collect();
        sorted.sort_by(|a, b| {
            a.combiner
                .cmp(&b.combiner)
                .then(a.threshold.total_cmp(&b.threshold))
        });
        let rows: Vec<Vec<String>> = sorted
            .iter()
            .map(|r| {
                vec![
                    r.combiner.clone(),
                    r.model.clone(),
                    fmt_g17(r.threshold),
                    r.n_sims.to_string(),
                    r.exceedances.to_string(),
                    fmt_g17(r.estimate),
                    fmt_g17(r.se),
                    fmt_opt(r.limit),
                    r.seed.to_string(),
                ]
            })
            .collect();
        write_table(&HEADER, &rows)
    }

    pub fn emit_csv(records: &[TailScaleRecord], path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, Self::to_csv(records))?;
        Ok(())
    }
}

/// Counts `h(X) > t` over `n` replicates of the raw model statistics.
pub fn run_tail_scale(
    model: &ModelSpec,
    combiner: &CombinerSpec,
    thresholds: &[f64],
    n: u64,
    seed: u64,
    workers: usize,
) -> Result<Vec<TailScaleRecord>> {
    if n == 0 || thresholds.is_empty() {
        return config("need n > 0 and at least one threshold");
    }
    if let Some(t) = thresholds.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
        return config(format!("threshold {t} must be positive"));
    }
    let prepared = model.prepare()?;
    let d = prepared.d();
    if let Some(k) = combiner.dim() {
        if k != d {
            return config(format!(
                "combiner has dimension {k} but the model has d = {d}"
            ));
        }
    }
    let beta = prepared.beta();
    if !beta.is_finite() {
        return config(format!("{} models are not heavy tailed", model.kind_name()));
    }
    let limit = match prepared.limit_measure() {
        Some((c, m)) => Some(c * spectral_moment(combiner, &m)?),
        None => None,
    };
    let counts = count_replicates(
        n,
        workers,
        thresholds.len(),
        || vec![0.0; d],
        |r, x, counts| {
            let mut rng = RngStream::new(seed, r);
            prepared.sample_raw(&mut rng, x);
            let h = combiner.evaluate(x)?;
            for (c, t) in counts.iter_mut().zip(thresholds) {
                if h > *t {
                    *c += 1;
                }
            }
            Ok(())
        },
    )?;
    let name = combiner.to_string();
    Ok(thresholds
        .iter()
        .zip(counts)
        .map(|(&t, k)| {
            let q = k as f64 / n as f64;
            let scale = t.powf(beta);
            TailScaleRecord {
                combiner: name.clone(),
                model: model.fingerprint(),
                threshold: t,
                n_sims: n,
                exceedances: k,
                estimate: scale * q,
                se: scale * (q * (1.0 - q) / n as f64).sqrt(),
                limit,
                seed,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::angular::DiscreteAngularMeasure;
    use crate::combiners::Weights;

    #[test]
    fn single_atom_linear() {
        let model = ModelSpec::BreimanDiscrete {
            d: None,
            measure: DiscreteAngularMeasure::comonotone(2, 1.0).unwrap(),
        };
        let lin = CombinerSpec::linear(Weights::uniform(2).unwrap());
        let recs = run_tail_scale(&model, &lin, &[1e3], 1_000_000, 1, 1).unwrap();
        let r = &recs[0];
        assert_eq!(r.limit, Some(0.5));
        assert!((r.estimate - 0.5).abs() <= 4.0 * r.se, "{r:?}");
    }

    #[test]
    fn linear_factor_identity_tippett() {
        let model = ModelSpec::LinearFactor {
            d: None,
            beta: 1.0,
            a: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        };
        let recs =
            run_tail_scale(&model, &CombinerSpec::Tippett, &[1e2, 1e4], 1_000_000, 2, 1).unwrap();
        // c = 2 factor columns, E[max(Theta)/2] = 1/2 on the axes
        assert_eq!(recs[0].limit, Some(1.0));
        for r in &recs {
            assert!(
                (r.estimate - 1.0).abs() <= 4.0 * r.se + 1.0 / r.threshold,
                "{r:?}"
            );
        }
        let joint = (recs[0].se.powi(2) + recs[1].se.powi(2)).sqrt();
        assert!((recs[0].estimate - recs[1].estimate).abs() <= 4.0 * joint);
        let csv = TailScaleRecord::to_csv(&recs);
        assert!(csv.starts_with("combiner,model,threshold,"));
    }

    #[test]
    fn rejects_light_tails() {
        let model = ModelSpec::GaussianCopula {
            d: 2,
            sigma: crate::samplers::SigmaSpec::identity(),
        };
        assert!(run_tail_scale(&model, &CombinerSpec::Tippett, &[10.0], 10, 1, 1).is_err());
    }
}
