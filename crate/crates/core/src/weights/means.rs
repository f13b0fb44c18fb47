//! Stacking of means: least squares of the observations on the LOO posterior
//! means, constrained to the simplex.
//!
//! The least-squares objective is often flat along whole faces of the
//! simplex (models with collinear means). A tiny ridge term selects the
//! minimum-norm minimizer, and the resulting strictly convex QP is solved
//! exactly by a primal active-set method.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;

use super::stacking::StackingSolution;
use super::WeightError;
use crate::model::WeightVector;

/// Ridge scale relative to the mean diagonal of `MᵀM / n`.
const RIDGE: f64 = 1e-10;

/// Minimizes `Σ_i (y_i - Σ_k w_k μ_ik)^2` over the simplex, returning the
/// minimum-norm minimizer. `objective` is the mean squared residual.
pub fn stack_means(loo_mean: &Array2<f64>, y: &[f64]) -> Result<StackingSolution, WeightError> {
    let (n, k) = loo_mean.dim();
    if n == 0 || k == 0 {
        return Err(WeightError::Empty);
    }
    if y.len() != n {
        return Err(WeightError::Dimension {
            expected: n,
            found: y.len(),
        });
    }
    if let Some(((i, j), _)) = loo_mean.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(WeightError::NonFinite { point: i, model: j });
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(WeightError::NonFiniteObservation(i));
    }

    let m = DMatrix::from_fn(n, k, |i, j| loo_mean[[i, j]]);
    let yv = DVector::from_column_slice(y);
    let nf = n as f64;
    let mut q = m.transpose() * &m / nf;
    let c = m.transpose() * &yv / nf;
    let ridge = RIDGE * (q.trace() / k as f64).max(f64::MIN_POSITIVE);
    for j in 0..k {
        q[(j, j)] += ridge;
    }

    let (w, iterations) = simplex_qp(&q, &c);
    let resid = &yv - &m * DVector::from_column_slice(&w);
    let objective = resid.norm_squared() / nf;
    let weights = WeightVector::normalize(w).map_err(WeightError::Simplex)?;
    Ok(StackingSolution {
        weights,
        objective,
        iterations,
        converged: true,
    })
}

/// `min ½ wᵀQw - cᵀw` subject to `Σw = 1, w ≥ 0`, Q positive definite.
pub(crate) fn simplex_qp(q: &DMatrix<f64>, c: &DVector<f64>) -> (Vec<f64>, usize) {
    let k = c.len();
    let mut w = vec![1.0 / k as f64; k];
    let mut at_zero = vec![false; k];
    let scale = q.amax().max(c.amax()).max(1.0);
    let tol = 1e-12 * scale;

    for iter in 1..=(50 * k + 50) {
        let free: Vec<usize> = (0..k).filter(|&j| !at_zero[j]).collect();
        let a = free.len();
        let mut kkt = DMatrix::<f64>::zeros(a + 1, a + 1);
        let mut rhs = DVector::<f64>::zeros(a + 1);
        for (p, &jp) in free.iter().enumerate() {
            for (r, &jr) in free.iter().enumerate() {
                kkt[(p, r)] = q[(jp, jr)];
            }
            kkt[(p, a)] = 1.0;
            kkt[(a, p)] = 1.0;
            rhs[p] = c[jp];
        }
        rhs[a] = 1.0;
        let sol = kkt
            .lu()
            .solve(&rhs)
            .expect("KKT matrix of a positive definite QP is nonsingular");
        let nu = sol[a];
        let dir: Vec<f64> = free.iter().enumerate().map(|(p, &j)| sol[p] - w[j]).collect();

        if dir.iter().all(|d| d.abs() <= 1e-15) {
            // stationary on this face: check multipliers of the bound constraints
            let grad = q * DVector::from_column_slice(&w) - c;
            let worst = (0..k)
                .filter(|&j| at_zero[j])
                .map(|j| (j, grad[j] + nu))
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match worst {
                Some((j, mult)) if mult < -tol => at_zero[j] = false,
                _ => return (w, iter),
            }
            continue;
        }

        let mut alpha = 1.0;
        let mut blocking = None;
        for (p, &j) in free.iter().enumerate() {
            if dir[p] < 0.0 {
                let limit = w[j] / -dir[p];
                if limit < alpha {
                    alpha = limit;
                    blocking = Some(j);
                }
            }
        }
        for (p, &j) in free.iter().enumerate() {
            w[j] += alpha * dir[p];
        }
        if let Some(j) = blocking {
            w[j] = 0.0;
            at_zero[j] = true;
        }
    }
    (w, 50 * k + 50)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn single_model() {
        let sol = stack_means(&array![[1.0], [2.0]], &[1.5, 1.0]).unwrap();
        assert_eq!(sol.weights.as_slice(), &[1.0]);
    }

    #[test]
    fn identical_columns_give_uniform() {
        let m = Array2::from_shape_fn((6, 4), |(i, _)| i as f64 * 0.3 - 1.0);
        let y = [0.1, -0.5, 0.3, 0.9, 1.4, -0.2];
        let sol = stack_means(&m, &y).unwrap();
        for &w in sol.weights.as_slice() {
            assert!((w - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn recovers_exact_combination() {
        let m = array![[1.0, 3.0], [2.0, 0.0], [0.0, 1.0], [4.0, 2.0]];
        let truth = [0.3, 0.7];
        let y: Vec<f64> = m
            .rows()
            .into_iter()
            .map(|r| r[0] * truth[0] + r[1] * truth[1])
            .collect();
        let sol = stack_means(&m, &y).unwrap();
        assert!((sol.weights[0] - 0.3).abs() < 1e-8);
        assert!(sol.objective < 1e-15);
    }

    #[test]
    fn clamps_to_boundary() {
        // unconstrained least squares would want a negative weight
        let m = array![[1.0, 0.0], [2.0, 1.0], [3.0, 1.0]];
        let y = [1.5, 3.2, 4.6];
        let sol = stack_means(&m, &y).unwrap();
        assert_eq!(sol.weights.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn qp_matches_brute_force() {
        let q = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 1.5]);
        let c = DVector::from_column_slice(&[0.4, 1.2, -0.3]);
        let (w, _) = simplex_qp(&q, &c);
        let f = |w: &[f64]| {
            let v = DVector::from_column_slice(w);
            0.5 * (v.transpose() * &q * &v)[0] - c.dot(&v)
        };
        let best = f(&w);
        let steps = 400;
        for a in 0..=steps {
            for b in 0..=(steps - a) {
                let cand = [
                    a as f64 / steps as f64,
                    b as f64 / steps as f64,
                    (steps - a - b) as f64 / steps as f64,
                ];
                assert!(f(&cand) >= best - 1e-12);
            }
        }
    }
}
