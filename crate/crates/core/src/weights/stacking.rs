//! Log-score stacking: maximize the mean LOO log density of the mixture over
//! the simplex.
//!
//! Exponentiated-gradient ascent with backtracking does the bulk of the work
//! from a Pseudo-BMA+ start. Once the support has settled, a damped Newton
//! polish on the active face drives inactive weights to exact zeros and
//! tightens the KKT residual.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use serde::Serialize;

use super::{pseudo_bma_plus, WeightError, DEFAULT_BB_SAMPLES};
use crate::model::WeightVector;

/// Solver knobs. Defaults follow the documented convergence rule.
#[derive(Debug, Clone, PartialEq)]
pub struct StackingOptions {
    /// Bayesian-bootstrap replicates for the Pseudo-BMA+ start.
    pub bb_samples: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop when the objective gains less than this per iteration...
    pub objective_tol: f64,
    /// ...and the KKT residual is below this.
    pub kkt_tol: f64,
}

impl Default for StackingOptions {
    fn default() -> Self {
        Self {
            bb_samples: DEFAULT_BB_SAMPLES,
            seed: 0,
            max_iter: 100_000,
            objective_tol: 1e-10,
            kkt_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StackingSolution {
    pub weights: WeightVector,
    /// For log-score stacking, `(1/n) Σ_i log Σ_k w_k p_{k,-i}(y_i)`.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Per-point densities rescaled by the row maximum.
struct Scaled {
    e: Array2<f64>,
    offset: f64,
}

impl Scaled {
    fn new(loo_lpd: &Array2<f64>) -> Self {
        let n = loo_lpd.nrows();
        let mut e = loo_lpd.clone();
        let mut offset = 0.0;
        for mut row in e.rows_mut() {
            let c = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|v| (v - c).exp());
            offset += c;
        }
        Self {
            e,
            offset: offset / n as f64,
        }
    }

    fn n(&self) -> f64 {
        self.e.nrows() as f64
    }

    /// Mixture value `m_i = Σ_k w_k e_ik` for every point.
    fn mix(&self, w: &[f64]) -> Vec<f64> {
        self.e
            .rows()
            .into_iter()
            .map(|row| row.iter().zip(w).map(|(e, w)| e * w).sum())
            .collect()
    }

    fn objective(&self, w: &[f64]) -> f64 {
        self.mix(w).iter().map(|m| m.ln()).sum::<f64>() / self.n() + self.offset
    }

    fn gradient(&self, mix: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.e.ncols()];
        for (row, m) in self.e.rows().into_iter().zip(mix) {
            for (gk, e) in g.iter_mut().zip(row) {
                *gk += e / m;
            }
        }
        let n = self.n();
        g.iter_mut().for_each(|v| *v /= n);
        g
    }
}

/// `(1/n) Σ_i log Σ_k w_k exp(lpd_ik)`
pub fn stacking_objective(loo_lpd: &Array2<f64>, w: &[f64]) -> f64 {
    Scaled::new(loo_lpd).objective(w)
}

/// Largest violation of the simplex KKT conditions. At an optimum the
/// gradient equals `λ = wᵀg` on the support and is at most `λ` elsewhere.
fn kkt_residual(w: &[f64], g: &[f64]) -> f64 {
    let lambda: f64 = w.iter().zip(g).map(|(w, g)| w * g).sum();
    w.iter()
        .zip(g)
        .map(|(&w, &g)| (g - lambda).max(0.0).max(w * (g - lambda).abs()))
        .fold(0.0, f64::max)
}

pub fn stack_logscore(loo_lpd: &Array2<f64>) -> Result<StackingSolution, WeightError> {
    stack_logscore_with(loo_lpd, &StackingOptions::default())
}

/// Starting point: Pseudo-BMA+ weights, blended with a sliver of uniform mass
/// so every coordinate can still move under multiplicative updates.
pub fn initial_point(loo_lpd: &Array2<f64>, opts: &StackingOptions) -> Result<Vec<f64>, WeightError> {
    let k = loo_lpd.ncols();
    let plus = pseudo_bma_plus(loo_lpd, opts.bb_samples, opts.seed)?;
    Ok(plus
        .as_slice()
        .iter()
        .map(|w| (1.0 - INIT_BLEND) * w + INIT_BLEND / k as f64)
        .collect())
}

const INIT_BLEND: f64 = 1e-3;
/// Per-iteration gain below which the Newton polish is attempted.
const POLISH_GAIN: f64 = 1e-8;

pub fn stack_logscore_with(
    loo_lpd: &Array2<f64>,
    opts: &StackingOptions,
) -> Result<StackingSolution, WeightError> {
    let (n, k) = loo_lpd.dim();
    if n == 0 || k == 0 {
        return Err(WeightError::Empty);
    }
    if let Some(((i, j), _)) = loo_lpd.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(WeightError::NonFinite { point: i, model: j });
    }
    if k == 1 {
        let scaled = Scaled::new(loo_lpd);
        return Ok(StackingSolution {
            weights: WeightVector::uniform(1),
            objective: scaled.objective(&[1.0]),
            iterations: 0,
            converged: true,
        });
    }

    let scaled = Scaled::new(loo_lpd);
    let start = initial_point(loo_lpd, opts)?;
    let mut sol = solve(&scaled, start, opts);
    if !sol.converged {
        let restart = solve(&scaled, vec![1.0 / k as f64; k], opts);
        let iterations = sol.iterations + restart.iterations;
        if restart.objective >= sol.objective {
            sol = restart;
        }
        sol.iterations = iterations;
    }
    Ok(sol)
}

fn solve(scaled: &Scaled, mut w: Vec<f64>, opts: &StackingOptions) -> StackingSolution {
    let k = w.len();
    let mut eta = 1.0;
    let mut f = scaled.objective(&w);
    let mut iterations = 0;
    let mut converged = false;
    let mut next_polish = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        let g = scaled.gradient(&scaled.mix(&w));
        let gmax = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let kkt = kkt_residual(&w, &g);

        let mut accepted = None;
        while eta > 1e-20 {
            let mut cand: Vec<f64> = w
                .iter()
                .zip(&g)
                .map(|(w, g)| w * (eta * (g - gmax)).exp())
                .collect();
            let z: f64 = cand.iter().sum();
            cand.iter_mut().for_each(|v| *v /= z);
            let f_cand = scaled.objective(&cand);
            let linear: f64 = g.iter().zip(cand.iter().zip(&w)).map(|(g, (c, w))| g * (c - w)).sum();
            if f_cand.is_finite() && f_cand >= f + 1e-4 * linear {
                accepted = Some((cand, f_cand));
                break;
            }
            eta *= 0.5;
        }
        let Some((cand, f_cand)) = accepted else {
            break;
        };
        let gain = f_cand - f;
        w = cand;
        f = f_cand;
        eta = (eta * 2.0).min(1e8);

        // support has settled: hand over to Newton on the active face
        if gain < POLISH_GAIN.max(opts.objective_tol) && kkt < 1e-3 && iterations >= next_polish {
            let (polished, steps) = newton_polish(scaled, &w);
            iterations += steps;
            let f_pol = scaled.objective(&polished);
            if f_pol >= f - 1e-14 {
                w = polished;
            }
            let kkt = kkt_residual(&w, &scaled.gradient(&scaled.mix(&w)));
            if kkt < opts.kkt_tol {
                converged = true;
                break;
            }
            // support guess was wrong; keep ascending from the polished point
            next_polish = iterations + 50;
            let floor = 1e-12;
            w.iter_mut().for_each(|v| *v = v.max(floor));
            let z: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= z);
            f = scaled.objective(&w);
        }
    }

    // clean rounding residue so the simplex invariant holds to machine precision
    w.iter_mut().for_each(|v| *v = v.max(0.0));
    let z: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= z);
    let objective = scaled.objective(&w);
    StackingSolution {
        weights: WeightVector::new(w).unwrap_or_else(|_| WeightVector::uniform(k)),
        objective,
        iterations,
        converged,
    }
}

/// Damped Newton ascent restricted to the current support. Coordinates whose
/// gradient sits clearly below the support level are dropped up front;
/// coordinates driven to zero by the ratio test leave the support.
fn newton_polish(scaled: &Scaled, start: &[f64]) -> (Vec<f64>, usize) {
    let k = start.len();
    let mut w = start.to_vec();
    let g = scaled.gradient(&scaled.mix(&w));
    let lambda: f64 = w.iter().zip(&g).map(|(w, g)| w * g).sum();
    let mut active: Vec<bool> = (0..k).map(|j| g[j] > lambda - 1e-6 || w[j] > 1e-4).collect();
    for j in 0..k {
        if !active[j] {
            w[j] = 0.0;
        }
    }
    let z: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= z);

    let mut steps = 0;
    for _ in 0..200 {
        steps += 1;
        let idx: Vec<usize> = (0..k).filter(|&j| active[j]).collect();
        let a = idx.len();
        if a <= 1 {
            break;
        }
        let mix = scaled.mix(&w);
        let g = scaled.gradient(&mix);

        // negative Hessian on the face: (1/n) Σ_i e_i e_iᵀ / m_i²
        let mut neg_h = DMatrix::<f64>::zeros(a, a);
        for (row, m) in scaled.e.rows().into_iter().zip(&mix) {
            let inv = 1.0 / (m * m);
            for (p, &jp) in idx.iter().enumerate() {
                let ep = row[jp] * inv;
                for (q, &jq) in idx.iter().enumerate().skip(p) {
                    neg_h[(p, q)] += ep * row[jq];
                }
            }
        }
        let n = scaled.n();
        for p in 0..a {
            for q in p..a {
                neg_h[(p, q)] /= n;
                neg_h[(q, p)] = neg_h[(p, q)];
            }
        }
        let damping = 1e-10 * (neg_h.trace() / a as f64).max(1e-300);

        let mut kkt = DMatrix::<f64>::zeros(a + 1, a + 1);
        let mut rhs = DVector::<f64>::zeros(a + 1);
        for p in 0..a {
            for q in 0..a {
                kkt[(p, q)] = neg_h[(p, q)];
            }
            kkt[(p, p)] += damping;
            kkt[(p, a)] = 1.0;
            kkt[(a, p)] = 1.0;
            rhs[p] = g[idx[p]];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else {
            break;
        };
        let d: Vec<f64> = (0..a).map(|p| sol[p]).collect();
        let slope: f64 = d.iter().zip(&idx).map(|(d, &j)| d * g[j]).sum();
        if !(slope > 1e-16) {
            break;
        }

        let mut alpha: f64 = 1.0;
        let mut blocking = None;
        for (p, &j) in idx.iter().enumerate() {
            if d[p] < 0.0 {
                let limit = w[j] / -d[p];
                if limit < alpha {
                    alpha = limit;
                    blocking = Some(j);
                }
            }
        }
        let f0 = scaled.objective(&w);
        let step = |alpha: f64| {
            let mut cand = w.clone();
            for (p, &j) in idx.iter().enumerate() {
                cand[j] = (cand[j] + alpha * d[p]).max(0.0);
            }
            cand
        };
        let mut cand = step(alpha);
        let mut f1 = scaled.objective(&cand);
        let mut shrunk = false;
        while !(f1 >= f0 + 1e-4 * alpha * slope) && alpha > 1e-12 {
            alpha *= 0.5;
            shrunk = true;
            cand = step(alpha);
            f1 = scaled.objective(&cand);
        }
        if !(f1 >= f0) {
            break;
        }
        if let (Some(j), false) = (blocking, shrunk) {
            cand[j] = 0.0;
            active[j] = false;
        }
        let z: f64 = cand.iter().sum();
        cand.iter_mut().for_each(|v| *v /= z);
        w = cand;
        if blocking.is_none() && slope < 1e-14 {
            break;
        }
    }
    (w, steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn single_model_gets_everything() {
        let sol = stack_logscore(&array![[-1.0], [-2.0]]).unwrap();
        assert_eq!(sol.weights.as_slice(), &[1.0]);
        assert!((sol.objective + 1.5).abs() < 1e-12);
    }

    #[test]
    fn dominant_model_takes_vertex() {
        let lpd = array![[-1.0, -1.5], [-0.5, -0.9], [-2.0, -2.2], [-1.2, -3.0]];
        let sol = stack_logscore(&lpd).unwrap();
        assert!(sol.converged);
        assert!((sol.weights[0] - 1.0).abs() < 1e-6, "{:?}", sol.weights);
    }

    #[test]
    fn rejects_non_finite() {
        let lpd = array![[-1.0, f64::NEG_INFINITY]];
        assert!(matches!(
            stack_logscore(&lpd),
            Err(WeightError::NonFinite { point: 0, model: 1 })
        ));
    }

    #[test]
    fn interior_optimum_satisfies_kkt() {
        // two models each good on half of the points
        let lpd = array![
            [-0.5, -3.0],
            [-0.7, -2.5],
            [-3.0, -0.4],
            [-2.6, -0.6],
            [-1.0, -1.1]
        ];
        let sol = stack_logscore(&lpd).unwrap();
        assert!(sol.converged);
        let w = sol.weights.as_slice();
        assert!(w[0] > 0.2 && w[1] > 0.2);
        let scaled = Scaled::new(&lpd);
        let g = scaled.gradient(&scaled.mix(w));
        assert!((g[0] - g[1]).abs() < 1e-8);
    }

    #[test]
    fn objective_matches_direct_formula() {
        let lpd = array![[-1.0, -2.0], [-3.0, -0.5]];
        let w = [0.3, 0.7];
        let direct = ((0.3 * (-1f64).exp() + 0.7 * (-2f64).exp()).ln()
            + (0.3 * (-3f64).exp() + 0.7 * (-0.5f64).exp()).ln())
            / 2.0;
        assert!((stacking_objective(&lpd, &w) - direct).abs() < 1e-14);
    }
}
