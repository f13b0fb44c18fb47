//! Exhaustive lattice search for the stacking optimum, used to check the
//! optimizer on small problems.

use ndarray::Array2;

use super::SimError;
use crate::math::log_sum_exp;
use crate::model::WeightVector;

const MAX_MODELS: usize = 4;

fn objective(loo_lpd: &Array2<f64>, w: &[f64]) -> f64 {
    let log_w: Vec<f64> = w.iter().map(|v| v.ln()).collect();
    let total: f64 = loo_lpd
        .rows()
        .into_iter()
        .map(|row| {
            let terms: Vec<f64> = row.iter().zip(&log_w).map(|(l, lw)| l + lw).collect();
            log_sum_exp(&terms)
        })
        .sum();
    total / loo_lpd.nrows() as f64
}

fn compositions(total: usize, parts: usize, prefix: &mut Vec<usize>, visit: &mut impl FnMut(&[usize])) {
    if parts == 1 {
        prefix.push(total);
        visit(prefix);
        prefix.pop();
        return;
    }
    for first in 0..=total {
        prefix.push(first);
        compositions(total - first, parts - 1, prefix, visit);
        prefix.pop();
    }
}

/// Best point of the simplex lattice with spacing `step` for the mean log
/// score `(1/n) Σ_i log Σ_k w_k exp(lpd_ik)`. Ties keep the first point in
/// lexicographic order.
pub fn grid_weight_oracle(loo_lpd: &Array2<f64>, step: f64) -> Result<(WeightVector, f64), SimError> {
    let k = loo_lpd.ncols();
    if k == 0 || loo_lpd.nrows() == 0 {
        return Err(SimError::Config("empty loo_lpd matrix".into()));
    }
    if k > MAX_MODELS {
        return Err(SimError::Config(format!(
            "grid search supports at most {MAX_MODELS} models, got {k}"
        )));
    }
    let divisions = (1.0 / step).round();
    if !(divisions >= 1.0) || (divisions * step - 1.0).abs() > 1e-9 {
        return Err(SimError::Config(format!("step {step} does not divide 1")));
    }
    let divisions = divisions as usize;
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    compositions(divisions, k, &mut Vec::with_capacity(k), &mut |c| {
        let w: Vec<f64> = c.iter().map(|&v| v as f64 / divisions as f64).collect();
        let f = objective(loo_lpd, &w);
        if f > best.1 {
            best = (w, f);
        }
    });
    let weights = WeightVector::normalize(best.0).map_err(|e| SimError::Config(e.to_string()))?;
    Ok((weights, best.1))
}
