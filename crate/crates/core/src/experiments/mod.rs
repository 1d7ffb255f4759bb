//! Monte Carlo harnesses: calibration, tail-scale, power, and the
//! universality falsifier, plus their CSV and JSON outputs.
//!
//! Replicate `r` of a run with master seed `s` always draws from
//! `RngStream::new(s, r)`. Replicates are processed in chunks on a rayon pool
//! and per-chunk counts are reduced by integer addition, so outputs do not
//! depend on the worker count.

mod calibration;
mod falsifier;
pub mod format;
mod power;
pub mod presets;
mod tail_scale;

use rayon::prelude::*;
use rayon::ThreadPool;

use crate::combiners::{parse_blocks, parse_list, CombinationTest, MaxLinearCoefficients, Weights};
use crate::error::{config, Error, Result};

pub use calibration::{low_count_warning, run_calibration, CalibrationRecord};
pub use falsifier::{run_falsifier, FalsifierReport};
pub use power::{eigen_direction, run_power, Direction, PowerConfig, PowerRecord, BASELINE_NAME};
pub use tail_scale::{run_tail_scale, TailScaleRecord};

/// Replicates per work unit.
pub const CHUNK: u64 = 2048;

/// A test together with the label it is reported under.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTest {
    pub label: String,
    pub test: CombinationTest,
}

/// `pct`, `cct`, `tippett`, `fct`, `fct:1,2;3,4` (one-based blocks, equal
/// block weights), `powermean:GAMMA`.
pub fn parse_test(spec: &str, d: usize) -> Result<LabeledTest> {
    let spec = spec.trim();
    let (name, arg) = match spec.split_once(':') {
        Some((n, a)) => (n.trim().to_ascii_lowercase(), Some(a.trim())),
        None => (spec.to_ascii_lowercase(), None),
    };
    let test = match (name.as_str(), arg) {
        ("fct", Some(blocks)) => {
            let blocks = parse_blocks(blocks)?;
            let w = Weights::uniform(blocks.len())?;
            CombinationTest::fct(MaxLinearCoefficients::new(blocks, w, d)?)
        }
        ("powermean", Some(g)) => {
            let g = parse_list(g)?;
            if g.len() != 1 {
                return config(format!("powermean takes one exponent, got '{spec}'"));
            }
            CombinationTest::by_name("powermean", d, Some(g[0]))?
        }
        (n, None) => CombinationTest::by_name(n, d, None)?,
        _ => return config(format!("unknown test spec '{spec}'")),
    };
    Ok(LabeledTest {
        label: spec.to_ascii_lowercase(),
        test,
    })
}

/// Comma-separated test specs. Commas inside `fct:` block lists are not
/// supported here; separate those tests with spaces or pass them one by one.
pub fn parse_tests(list: &str, d: usize) -> Result<Vec<LabeledTest>> {
    let parts: Vec<&str> = if list.contains("fct:") {
        list.split_whitespace().collect()
    } else {
        list.split(',').collect()
    };
    let tests = parts
        .into_iter()
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_test(s, d))
        .collect::<Result<Vec<_>>>()?;
    if tests.is_empty() {
        return config("no tests given");
    }
    Ok(tests)
}

/// `a:b:k` is `k` evenly spaced points from `a` to `b`; otherwise a list.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() == 3 {
        let bad = || Error::Config(format!("bad grid '{spec}', expected FROM:TO:COUNT"));
        let a: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let b: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let k: usize = parts[2].trim().parse().map_err(|_| bad())?;
        return match k {
            0 => Err(bad()),
            1 => Ok(vec![a]),
            _ => Ok((0..k)
                .map(|i| {
                    if i == k - 1 {
                        b
                    } else {
                        a + (b - a) * i as f64 / (k - 1) as f64
                    }
                })
                .collect()),
        };
    }
    parse_list(spec)
}

pub(crate) fn thread_pool(workers: usize) -> Result<ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Runs `body(r, state)` for every replicate `r < n` and reduces the
/// per-chunk count vectors by integer addition.
pub(crate) fn count_replicates<S, I, F>(
    n: u64,
    workers: usize,
    width: usize,
    init: I,
    body: F,
) -> Result<Vec<u64>>
where
    I: Fn() -> S + Sync,
    F: Fn(u64, &mut S, &mut [u64]) -> Result<()> + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    let pool = thread_pool(workers)?;
    pool.install(|| {
        (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut state = init();
                let mut counts = vec![0u64; width];
                for r in c * CHUNK..((c + 1) * CHUNK).min(n) {
                    body(r, &mut state, &mut counts)?;
                }
                Ok(counts)
            })
            .try_reduce(
                || vec![0u64; width],
                |mut a, b| {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += y;
                    }
                    Ok(a)
                },
            )
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combiners::TestKind;

    #[test]
    fn parse_test_specs() {
        let t = parse_tests("pct,cct,tippett,fct,powermean:2", 4).unwrap();
        let kinds: Vec<TestKind> = t.iter().map(|t| t.test.kind()).collect();
        assert_eq!(
            kinds,
            [
                TestKind::Pct,
                TestKind::Cct,
                TestKind::Tippett,
                TestKind::Fct,
                TestKind::PowerMean
            ]
        );
        assert_eq!(t[4].label, "powermean:2");
        let f = parse_tests("pct fct:1,2;3,4", 4).unwrap();
        assert_eq!(f[1].test.kind(), TestKind::Fct);
        assert!(parse_tests("fisher", 3).is_err());
        assert!(parse_tests("powermean", 3).is_err());
        assert!(parse_tests("", 3).is_err());
    }

    #[test]
    fn grids() {
        assert_eq!(
            parse_grid("0:40:5").unwrap(),
            vec![0.0, 10.0, 20.0, 30.0, 40.0]
        );
        assert_eq!(parse_grid("0,1.5").unwrap(), vec![0.0, 1.5]);
        assert!(parse_grid("0:1:0").is_err());
    }

    #[test]
    fn counting_is_worker_independent() {
        let run = |workers| {
            count_replicates(
                10_000,
                workers,
                2,
                || (),
                |r, _, c| {
                    c[(r % 2) as usize] += r;
                    Ok(())
                },
            )
            .unwrap()
        };
        assert_eq!(run(1), run(3));
    }
}
