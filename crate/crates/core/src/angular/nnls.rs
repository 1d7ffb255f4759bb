//! Lawson–Hanson active-set nonnegative least squares.

use nalgebra::{DMatrix, DVector};

/// Solution of `min ||A x - b||_2` subject to `x >= 0`.
#[derive(Debug, Clone)]
pub struct NnlsSolution {
    pub x: DVector<f64>,
    pub residual: f64,
    pub iterations: usize,
}

pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> NnlsSolution {
    let n = a.ncols();
    let tol = 10.0 * f64::EPSILON * a.norm().max(1.0) * (a.nrows().max(n) as f64);
    let max_iter = 3 * n + 30;

    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let mut iterations = 0;

    loop {
        let grad = a.transpose() * (b - a * &x);
        let candidate = (0..n)
            .filter(|&j| !passive[j])
            .max_by(|&i, &j| grad[i].total_cmp(&grad[j]));
        let Some(j) = candidate else { break };
        if grad[j] <= tol || iterations >= max_iter {
            break;
        }
        passive[j] = true;
        iterations += 1;

        loop {
            let s = solve_passive(a, b, &passive);
            let infeasible = (0..n).any(|i| passive[i] && s[i] <= 0.0);
            if !infeasible {
                x = s;
                break;
            }
            let mut alpha = f64::INFINITY;
            for i in 0..n {
                if passive[i] && s[i] <= 0.0 {
                    let denom = x[i] - s[i];
                    if denom > 0.0 {
                        alpha = alpha.min(x[i] / denom);
                    }
                }
            }
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            x += (s - &x) * alpha;
            let mut dropped = false;
            for i in 0..n {
                if passive[i] && x[i] <= tol {
                    passive[i] = false;
                    x[i] = 0.0;
                    dropped = true;
                }
            }
            if !dropped {
                // Guard against cycling on degenerate steps.
                break;
            }
        }
    }

    let residual = (a * &x - b).norm();
    NnlsSolution {
        x,
        residual,
        iterations,
    }
}

// Unconstrained least squares over the passive columns; zeros elsewhere.
fn solve_passive(a: &DMatrix<f64>, b: &DVector<f64>, passive: &[bool]) -> DVector<f64> {
    let cols: Vec<usize> = (0..a.ncols()).filter(|&j| passive[j]).collect();
    let mut out = DVector::zeros(a.ncols());
    if cols.is_empty() {
        return out;
    }
    let sub = a.select_columns(&cols);
    let svd = sub.svd(true, true);
    let z = svd
        .solve(b, 1e-13)
        .expect("SVD was computed with both U and V");
    for (k, &j) in cols.iter().enumerate() {
        out[j] = z[k];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_optimum_is_feasible() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let s = nnls(&a, &b);
        assert!((s.x[0] - 1.0).abs() < 1e-12 && (s.x[1] - 2.0).abs() < 1e-12);
        assert!(s.residual < 1e-12);
    }

    #[test]
    fn active_constraint() {
        // Unconstrained solution has x1 < 0.
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let b = DVector::from_vec(vec![-1.0, 2.0]);
        let s = nnls(&a, &b);
        assert_eq!(s.x[0], 0.0);
        assert!((s.x[1] - 2.0).abs() < 1e-12);
        assert!((s.residual - 1.0).abs() < 1e-12);
    }

    #[test]
    fn underdetermined_system() {
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0]);
        let s = nnls(&a, &b);
        assert!(s.residual < 1e-12);
        assert!(s.x.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn matches_brute_force_on_small_problems() {
        // Enumerate all active sets of a 3-column problem and keep the best
        // feasible least-squares solution.
        let a = DMatrix::from_row_slice(
            4,
            3,
            &[
                0.3, -1.2, 0.5, 1.1, 0.4, -0.7, -0.2, 0.9, 1.3, 0.8, 0.1, -0.4,
            ],
        );
        let b = DVector::from_vec(vec![0.7, -0.3, 1.1, 0.2]);
        let mut best = f64::INFINITY;
        for mask in 0u32..8 {
            let passive: Vec<bool> = (0..3).map(|j| mask & (1 << j) != 0).collect();
            let s = solve_passive(&a, &b, &passive);
            if s.iter().all(|v| *v >= -1e-14) {
                best = best.min((&a * &s - &b).norm());
            }
        }
        let s = nnls(&a, &b);
        assert!(
            (s.residual - best).abs() < 1e-12,
            "{} vs {}",
            s.residual,
            best
        );
    }
}
