//! Generalized Pareto fit for importance-ratio tails.
//!
//! Profile-likelihood estimator in the style of Zhang & Stephens (2009): the
//! posterior mean of `θ = -k/σ` is taken over a fixed quadrature grid of
//! profile likelihood values, then `k` is shrunk slightly toward 0.5.

use serde::Serialize;

use super::PsisError;
use crate::math::log_sum_exp;

/// Minimum number of exceedances accepted by [`fit_gpd`].
pub const MIN_TAIL: usize = 5;
/// Number of quadrature points for the profile-likelihood grid.
pub const GRID_POINTS: usize = 200;
const GRID_PRIOR: f64 = 3.0;
/// Weak prior on `k`: `WIP_N` pseudo-observations at `WIP_K`.
const WIP_N: f64 = 10.0;
const WIP_K: f64 = 0.5;

/// Fitted shape `k_hat` and scale `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParetoFit {
    pub k_hat: f64,
    pub sigma: f64,
    pub tail_size: usize,
}

impl ParetoFit {
    /// Inverse CDF at probability `p`.
    pub fn quantile(&self, p: f64) -> f64 {
        gpd_quantile(p, self.k_hat, self.sigma)
    }
}

pub fn gpd_quantile(p: f64, k: f64, sigma: f64) -> f64 {
    if k.abs() < 1e-12 {
        -sigma * (-p).ln_1p()
    } else {
        sigma * ((-k * (-p).ln_1p()).exp_m1()) / k
    }
}

/// Per-observation profile log-likelihood at `theta`.
fn profile_loglik(theta: f64, x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let k = x.iter().map(|&v| (-theta * v).ln_1p()).sum::<f64>() / n;
    // a / k tends to 1/mean(x) as theta -> 0
    let ratio = if k.abs() < 1e-300 || theta == 0.0 {
        n / x.iter().sum::<f64>()
    } else {
        -theta / k
    };
    ratio.ln() - k - 1.0
}

/// Fits a generalized Pareto distribution to nonnegative exceedances.
pub fn fit_gpd(tail: &[f64]) -> Result<ParetoFit, PsisError> {
    let n = tail.len();
    if n < MIN_TAIL {
        return Err(PsisError::TailTooSmall(n));
    }
    if let Some(&bad) = tail.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(PsisError::InvalidTail(bad));
    }
    let mut x = tail.to_vec();
    if x.windows(2).any(|w| w[0] > w[1]) {
        x.sort_by(f64::total_cmp);
    }
    let max = x[n - 1];
    if max <= 0.0 || x[0] == max {
        return Err(PsisError::DegenerateTail);
    }

    let quartile_idx = ((n as f64) / 4.0 + 0.5).floor() as usize;
    let mut xstar = x[quartile_idx.saturating_sub(1)];
    if xstar <= 0.0 {
        xstar = *x.iter().find(|&&v| v > 0.0).expect("max is positive");
    }

    let m = GRID_POINTS as f64;
    let theta: Vec<f64> = (1..=GRID_POINTS)
        .map(|j| 1.0 / max + (1.0 - (m / (j as f64 - 0.5)).sqrt()) / GRID_PRIOR / xstar)
        .collect();
    let loglik: Vec<f64> = theta
        .iter()
        .map(|&t| n as f64 * profile_loglik(t, &x))
        .collect();
    let lse = log_sum_exp(&loglik);
    let theta_hat: f64 = theta
        .iter()
        .zip(&loglik)
        .map(|(t, l)| t * (l - lse).exp())
        .sum();

    let (k, sigma) = if theta_hat == 0.0 {
        (0.0, x.iter().sum::<f64>() / n as f64)
    } else {
        let k = x.iter().map(|&v| (-theta_hat * v).ln_1p()).sum::<f64>() / n as f64;
        (k, -k / theta_hat)
    };
    if !(k.is_finite() && sigma.is_finite() && sigma > 0.0) {
        return Err(PsisError::DegenerateTail);
    }
    let k_hat = (k * n as f64 + WIP_K * WIP_N) / (n as f64 + WIP_N);
    Ok(ParetoFit {
        k_hat,
        sigma,
        tail_size: n,
    })
}
