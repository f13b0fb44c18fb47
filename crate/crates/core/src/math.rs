//! Small numerical helpers shared across modules. Everything stays in log space.

use std::f64::consts::PI;

/// `0.5 * ln(2π)`
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Numerically stable `log(Σ exp(x_i))`.
///
/// Returns `-inf` for an empty slice or when every entry is `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// `log((1/S) Σ exp(x_s))`
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    log_sum_exp(xs) - (xs.len() as f64).ln()
}

/// Softmax with max-subtraction. Entries equal to `-inf` get weight zero.
///
/// Elpd totals routinely sit around -1e3, so the shift matters.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|&x| (x - lse).exp()).collect()
}

/// Shannon entropy in nats, `0 log 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| -v * v.ln())
        .sum()
}

pub fn normal_ln_pdf(y: f64, mean: f64, sd: f64) -> f64 {
    let z = (y - mean) / sd;
    -HALF_LN_2PI - sd.ln() - 0.5 * z * z
}

pub fn normal_pdf(y: f64, mean: f64, sd: f64) -> f64 {
    let z = (y - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * PI).sqrt())
}

pub fn normal_cdf(y: f64, mean: f64, sd: f64) -> f64 {
    let z = (y - mean) / (sd * std::f64::consts::SQRT_2);
    0.5 * statrs::function::erf::erfc(-z)
}

/// Trapezoid rule over an evenly spaced grid.
pub(crate) fn trapezoid(values: &[f64], step: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        len => {
            let inner: f64 = values[1..len - 1].iter().sum();
            step * (inner + 0.5 * (values[0] + values[len - 1]))
        }
    }
}
