use serde::{Deserialize, Serialize};

use crate::angular::{asymptotic_ratio, standardize_weights, DiscreteAngularMeasure};
use crate::combiners::CombinerSpec;
use crate::error::{config, Result};
use crate::samplers::RngStream;

const INITIAL_STEP: f64 = 0.1;
const MIN_STEP: f64 = 1e-6;
const PATIENCE: usize = 50;

/// Most miscalibrated standardized measure found by the search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FalsifierReport {
    pub combiner: CombinerSpec,
    pub d: usize,
    pub beta: f64,
    pub best_measure: DiscreteAngularMeasure,
    pub best_ratio: f64,
    pub deviation: f64,
    pub evaluations: u64,
    /// Whether the unit vectors had to be added to make the best atom set feasible.
    pub augmented: bool,
}

struct Candidate {
    atoms: Vec<Vec<f64>>,
    measure: DiscreteAngularMeasure,
    ratio: f64,
    deviation: f64,
    augmented: bool,
}

fn evaluate(
    combiner: &CombinerSpec,
    atoms: Vec<Vec<f64>>,
    d: usize,
    beta: f64,
) -> Option<Candidate> {
    let s = standardize_weights(&atoms, d, beta).ok()?;
    let augmented = s.was_augmented();
    let measure = s.into_measure();
    let ratio = asymptotic_ratio(combiner, &measure).ok()?;
    Some(Candidate {
        atoms,
        measure,
        ratio,
        deviation: (ratio - 1.0).abs(),
        augmented,
    })
}

fn dirichlet(rng: &mut RngStream, d: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..d).map(|_| -rng.open01().ln()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Searches atom sets on the simplex for the largest `|ratio - 1|`.
///
/// Half of the budget goes to independent uniform Dirichlet proposals of
/// `n_atoms` atoms, the rest to coordinate perturbations of the incumbent
/// with step 0.1, halved after 50 consecutive non-improving moves.
pub fn run_falsifier(
    combiner: &CombinerSpec,
    d: usize,
    beta: f64,
    n_atoms: usize,
    budget: u64,
    seed: u64,
) -> Result<FalsifierReport> {
    if budget < 100 {
        return config("falsifier budget must be at least 100");
    }
    if d < 1 || n_atoms < 1 {
        return config("need d >= 1 and at least one atom");
    }
    if !(beta > 0.0) {
        return config(format!("tail index {beta} must be positive"));
    }
    if let Some(k) = combiner.dim() {
        if k != d {
            return config(format!("combiner has dimension {k} but d = {d}"));
        }
    }
    let mut rng = RngStream::new(seed, 0);
    let mut evaluations = 0u64;
    let mut best: Option<Candidate> = None;
    let better = |c: &Candidate, b: &Option<Candidate>| {
        b.as_ref().map_or(true, |b| c.deviation > b.deviation)
    };

    let random_phase = budget / 2;
    while evaluations < random_phase {
        let atoms = (0..n_atoms).map(|_| dirichlet(&mut rng, d)).collect();
        evaluations += 1;
        if let Some(c) = evaluate(combiner, atoms, d, beta) {
            if better(&c, &best) {
                best = Some(c);
            }
        }
    }

    let mut step = INITIAL_STEP;
    let mut stale = 0;
    while evaluations < budget {
        let Some(incumbent) = best.as_ref() else {
            break;
        };
        let mut atoms = incumbent.atoms.clone();
        let k = (rng.open01() * n_atoms as f64) as usize % n_atoms;
        let i = (rng.open01() * d as f64) as usize % d;
        let sign = if rng.open01() < 0.5 { -1.0 } else { 1.0 };
        atoms[k][i] = (atoms[k][i] + sign * step).max(0.0);
        let total: f64 = atoms[k].iter().sum();
        evaluations += 1;
        if total > 0.0 {
            atoms[k].iter_mut().for_each(|v| *v /= total);
            if let Some(c) = evaluate(combiner, atoms, d, beta) {
                if better(&c, &best) {
                    best = Some(c);
                    stale = 0;
                    continue;
                }
            }
        }
        stale += 1;
        if stale >= PATIENCE {
            step = (step * 0.5).max(MIN_STEP);
            stale = 0;
        }
    }

    let best = match best {
        Some(b) => b,
        None => {
            let m = DiscreteAngularMeasure::axes(d, beta)?;
            let ratio = asymptotic_ratio(combiner, &m)?;
            Candidate {
                atoms: m.atoms().to_vec(),
                measure: m,
                ratio,
                deviation: (ratio - 1.0).abs(),
                augmented: true,
            }
        }
    };
    Ok(FalsifierReport {
        combiner: combiner.clone(),
        d,
        beta,
        best_measure: best.measure,
        best_ratio: best.ratio,
        deviation: best.deviation,
        evaluations,
        augmented: best.augmented,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::angular::margin_constraint;
    use crate::combiners::Weights;

    #[test]
    fn linear_is_universal() {
        let lin = CombinerSpec::linear(Weights::new(vec![0.3, 0.7]).unwrap());
        let r = run_falsifier(&lin, 2, 1.0, 4, 1000, 1).unwrap();
        assert!(r.deviation <= 1e-8, "{r:?}");
        assert_eq!(r.evaluations, 1000);
        assert!(margin_constraint(&r.best_measure).is_ok());
    }

    #[test]
    fn finds_tippett_and_power_mean_violations() {
        let r = run_falsifier(&CombinerSpec::Tippett, 2, 1.0, 8, 2000, 2).unwrap();
        assert!(r.best_ratio <= 0.6, "{}", r.best_ratio);
        let pm = CombinerSpec::power_mean(Weights::uniform(2).unwrap(), 2.0).unwrap();
        let r = run_falsifier(&pm, 2, 1.0, 8, 2000, 3).unwrap();
        assert!(r.best_ratio >= 1.3, "{}", r.best_ratio);
    }

    #[test]
    fn deterministic_and_validated() {
        let a = run_falsifier(&CombinerSpec::Tippett, 3, 1.0, 5, 300, 4).unwrap();
        let b = run_falsifier(&CombinerSpec::Tippett, 3, 1.0, 5, 300, 4).unwrap();
        assert_eq!(a, b);
        assert!(run_falsifier(&CombinerSpec::Tippett, 2, 1.0, 5, 10, 4).is_err());
        let lin = CombinerSpec::linear(Weights::uniform(3).unwrap());
        assert!(run_falsifier(&lin, 2, 1.0, 5, 100, 4).is_err());
        let json = serde_json::to_string(&a).unwrap();
        let back: FalsifierReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a);
    }
}
