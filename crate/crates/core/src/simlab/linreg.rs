//! Bayesian linear regression without intercept:
//! `y ~ N(Xβ, σ²)`, `β_j ~ N(0, τ²)`, `σ ~ Gamma(shape, rate)`.
//!
//! The σ prior is on σ itself, which breaks conjugacy, so the sampler
//! alternates an exact Gibbs draw of β with a slice-sampling step on log σ.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::Array2;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::SimError;
use crate::math::{log_mean_exp, log_sum_exp, normal_ln_pdf, HALF_LN_2PI};
use crate::model::ModelDrawMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinRegPrior {
    /// Prior standard deviation of each coefficient.
    pub beta_sd: f64,
    pub sigma_shape: f64,
    pub sigma_rate: f64,
}

impl Default for LinRegPrior {
    /// `β ~ N(0, 10)` (variance 10), `σ ~ Gamma(0.1, 0.1)`.
    fn default() -> Self {
        Self {
            beta_sd: 10f64.sqrt(),
            sigma_shape: 0.1,
            sigma_rate: 0.1,
        }
    }
}

impl LinRegPrior {
    fn ln_sigma_density_in_log(&self, u: f64) -> f64 {
        // density of u = log σ, up to the normalizing constant
        self.sigma_shape * u - self.sigma_rate * u.exp()
    }

    fn ln_sigma_normalizer(&self) -> f64 {
        self.sigma_shape * self.sigma_rate.ln() - ln_gamma(self.sigma_shape)
    }
}

/// Sufficient statistics of a regression data set.
#[derive(Debug, Clone)]
struct Suff {
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    n: usize,
}

impl Suff {
    fn new(x: &Array2<f64>, y: &[f64]) -> Self {
        let (n, p) = x.dim();
        let mut xtx = DMatrix::zeros(p, p);
        let mut xty = DVector::zeros(p);
        let mut yty = 0.0;
        for (row, &yi) in x.rows().into_iter().zip(y) {
            for a in 0..p {
                xty[a] += row[a] * yi;
                for b in a..p {
                    xtx[(a, b)] += row[a] * row[b];
                }
            }
            yty += yi * yi;
        }
        for a in 0..p {
            for b in 0..a {
                xtx[(a, b)] = xtx[(b, a)];
            }
        }
        Self { xtx, xty, yty, n }
    }

    fn rss(&self, beta: &DVector<f64>) -> f64 {
        let v = self.yty - 2.0 * beta.dot(&self.xty) + (beta.transpose() * &self.xtx * beta)[0];
        v.max(0.0)
    }
}

/// Posterior draws of one fitted regression.
#[derive(Debug, Clone)]
pub struct LinRegFit {
    /// S x p
    pub beta: Array2<f64>,
    pub sigma: Vec<f64>,
    pub draws: ModelDrawMatrix,
}

impl LinRegFit {
    /// `log p(ỹ | y) ≈ log (1/S) Σ_s N(ỹ | xᵀβ^s, σ^s)` for each row of `x`.
    pub fn predictive_lpd(&self, x: &Array2<f64>, y: &[f64]) -> Vec<f64> {
        let s = self.sigma.len();
        x.rows()
            .into_iter()
            .zip(y)
            .map(|(row, &yi)| {
                let terms: Vec<f64> = (0..s)
                    .map(|d| {
                        let mean = self.beta.row(d).dot(&row);
                        normal_ln_pdf(yi, mean, self.sigma[d])
                    })
                    .collect();
                log_mean_exp(&terms)
            })
            .collect()
    }

    /// Posterior predictive mean `(1/S) Σ_s xᵀβ^s` for each row of `x`.
    pub fn predictive_mean(&self, x: &Array2<f64>) -> Vec<f64> {
        let beta_bar = self.beta.mean_axis(ndarray::Axis(0)).expect("at least one draw");
        x.rows().into_iter().map(|row| row.dot(&beta_bar)).collect()
    }
}

fn check_inputs(x: &Array2<f64>, y: &[f64], min_n: usize) -> Result<(), SimError> {
    if x.nrows() != y.len() {
        return Err(SimError::Config(format!(
            "design has {} rows but y has {} entries",
            x.nrows(),
            y.len()
        )));
    }
    if y.len() < min_n || x.ncols() == 0 {
        return Err(SimError::Config(format!(
            "need at least {min_n} observations and one covariate"
        )));
    }
    Ok(())
}

/// Gibbs sampler: β | σ exactly, log σ | β by slice sampling. Runs `draws / 2`
/// burn-in iterations and keeps the next `draws`.
pub fn fit_linreg_mcmc(
    x: &Array2<f64>,
    y: &[f64],
    prior: &LinRegPrior,
    draws: usize,
    seed: u64,
) -> Result<LinRegFit, SimError> {
    check_inputs(x, y, 2)?;
    if draws == 0 {
        return Err(SimError::Config("draws must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let suff = Suff::new(x, y);
    let p = x.ncols();
    let prior_prec = 1.0 / (prior.beta_sd * prior.beta_sd);

    let mut ridge = suff.xtx.clone();
    for j in 0..p {
        ridge[(j, j)] += prior_prec;
    }
    let mut beta = ridge
        .cholesky()
        .ok_or(SimError::NotPositiveDefinite)?
        .solve(&suff.xty);
    let mut log_sigma = (suff.rss(&beta) / suff.n as f64).sqrt().max(1e-3).ln();

    let burn = draws / 2;
    let mut beta_draws = Array2::zeros((draws, p));
    let mut sigma_draws = Vec::with_capacity(draws);
    for it in 0..burn + draws {
        let sigma2 = (2.0 * log_sigma).exp();
        let mut prec = &suff.xtx / sigma2;
        for j in 0..p {
            prec[(j, j)] += prior_prec;
        }
        let chol = prec.cholesky().ok_or(SimError::NotPositiveDefinite)?;
        let mean = chol.solve(&(&suff.xty / sigma2));
        let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        // β = mean + L⁻ᵀ z has covariance (L Lᵀ)⁻¹
        let offset = chol
            .l()
            .transpose()
            .solve_upper_triangular(&z)
            .expect("cholesky factor has a positive diagonal");
        beta = mean + offset;

        let rss = suff.rss(&beta);
        let n = suff.n as f64;
        let target = |u: f64| prior.ln_sigma_density_in_log(u) - n * u - 0.5 * rss * (-2.0 * u).exp();
        log_sigma = slice_step(&mut rng, log_sigma, target, 1.0);

        if it >= burn {
            let d = it - burn;
            for j in 0..p {
                beta_draws[[d, j]] = beta[j];
            }
            sigma_draws.push(log_sigma.exp());
        }
    }

    let n = y.len();
    let mut loglik = Array2::zeros((draws, n));
    let mut pred_mean = Array2::zeros((draws, n));
    for d in 0..draws {
        let b = beta_draws.row(d);
        for (i, row) in x.rows().into_iter().enumerate() {
            let mu = b.dot(&row);
            pred_mean[[d, i]] = mu;
            loglik[[d, i]] = normal_ln_pdf(y[i], mu, sigma_draws[d]);
        }
    }
    Ok(LinRegFit {
        beta: beta_draws,
        sigma: sigma_draws,
        draws: ModelDrawMatrix::new("linreg", loglik).with_pred_mean(pred_mean),
    })
}

/// One univariate slice-sampling update with stepping out and shrinkage.
fn slice_step(rng: &mut dyn RngCore, x0: f64, log_f: impl Fn(f64) -> f64, width: f64) -> f64 {
    let level = log_f(x0) + rng.random::<f64>().ln();
    let mut lo = x0 - width * rng.random::<f64>();
    let mut hi = lo + width;
    for _ in 0..100 {
        if log_f(lo) <= level {
            break;
        }
        lo -= width;
    }
    for _ in 0..100 {
        if log_f(hi) <= level {
            break;
        }
        hi += width;
    }
    loop {
        let x = lo + (hi - lo) * rng.random::<f64>();
        if log_f(x) > level {
            return x;
        }
        if x < x0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo < 1e-14 {
            return x0;
        }
    }
}

/// Exact LOO by refitting without each point in turn:
/// `log (1/S) Σ_s p(y_i | θ^s_{-i})`. Test oracle only.
pub fn exact_loo_oracle(
    x: &Array2<f64>,
    y: &[f64],
    prior: &LinRegPrior,
    draws: usize,
    seed: u64,
) -> Result<Vec<f64>, SimError> {
    use rayon::prelude::*;
    check_inputs(x, y, 2)?;
    let n = y.len();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let keep: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let x_minus = x.select(ndarray::Axis(0), &keep);
            let y_minus: Vec<f64> = keep.iter().map(|&j| y[j]).collect();
            let fit = if y_minus.len() >= 2 {
                fit_linreg_mcmc(&x_minus, &y_minus, prior, draws, seed.wrapping_add(i as u64 + 1))?
            } else {
                prior_draws(x.ncols(), prior, draws, seed.wrapping_add(i as u64 + 1))
            };
            let xi = x.select(ndarray::Axis(0), &[i]);
            Ok(fit.predictive_lpd(&xi, &y[i..=i])[0])
        })
        .collect()
}

/// Draws from the prior, for the degenerate refit with one remaining point.
fn prior_draws(p: usize, prior: &LinRegPrior, draws: usize, seed: u64) -> LinRegFit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = rand_distr::Gamma::new(prior.sigma_shape, 1.0 / prior.sigma_rate)
        .expect("positive gamma parameters");
    let beta = Array2::from_shape_fn((draws, p), |_| {
        prior.beta_sd * rng.sample::<f64, _>(StandardNormal)
    });
    let sigma = (0..draws)
        .map(|_| rng.sample(gamma).max(f64::MIN_POSITIVE))
        .collect();
    LinRegFit {
        beta,
        sigma,
        draws: ModelDrawMatrix::new("prior", Array2::zeros((draws, 1))),
    }
}

/// Log marginal likelihood `log p(y)` of the regression model.
///
/// β integrates out analytically given σ; the remaining one-dimensional
/// integral over log σ is done by trapezoid quadrature on a fine grid.
pub fn log_marginal_likelihood(x: &Array2<f64>, y: &[f64], prior: &LinRegPrior) -> Result<f64, SimError> {
    check_inputs(x, y, 1)?;
    let suff = Suff::new(x, y);
    let n = suff.n as f64;
    let tau2 = prior.beta_sd * prior.beta_sd;
    let eig = SymmetricEigen::new(suff.xtx.clone());
    let proj = eig.eigenvectors.transpose() * &suff.xty;
    let lambdas: Vec<f64> = eig.eigenvalues.iter().map(|l| l.max(0.0)).collect();

    let log_lik_given_sigma = |u: f64| {
        let s2 = (2.0 * u).exp();
        let mut logdet = n * 2.0 * u;
        let mut explained = 0.0;
        for (l, c) in lambdas.iter().zip(proj.iter()) {
            logdet += (tau2 * l / s2).ln_1p();
            explained += c * c / (s2 / tau2 + l);
        }
        let quad = (suff.yty - explained).max(0.0) / s2;
        -n * HALF_LN_2PI - 0.5 * logdet - 0.5 * quad
    };
    let integrand = |u: f64| log_lik_given_sigma(u) + prior.ln_sigma_density_in_log(u);

    // coarse scan to locate the bulk, then a fine grid around it
    let coarse: Vec<(f64, f64)> = (0..=600).map(|j| {
        let u = -20.0 + 0.05 * j as f64;
        (u, integrand(u))
    }).collect();
    let peak = coarse
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, |m, (_, v)| m.max(v));
    let live: Vec<f64> = coarse
        .iter()
        .filter(|(_, v)| *v > peak - 60.0)
        .map(|(u, _)| *u)
        .collect();
    let lo = live.first().copied().unwrap_or(-20.0) - 0.1;
    let hi = live.last().copied().unwrap_or(10.0) + 0.1;
    let points = 20_001;
    let h = (hi - lo) / (points - 1) as f64;
    let mut vals: Vec<f64> = (0..points).map(|j| integrand(lo + h * j as f64)).collect();
    vals[0] -= std::f64::consts::LN_2;
    vals[points - 1] -= std::f64::consts::LN_2;
    Ok(log_sum_exp(&vals) + h.ln() + prior.ln_sigma_normalizer())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn toy(n: usize, beta: f64, seed: u64) -> (Array2<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, 1), |_| rng.sample::<f64, _>(StandardNormal) + 1.0);
        let y = x
            .column(0)
            .iter()
            .map(|xi| beta * xi + rng.sample::<f64, _>(StandardNormal))
            .collect();
        (x, y)
    }

    #[test]
    fn posterior_concentrates_near_truth() {
        let (x, y) = toy(200, 1.5, 1);
        let fit = fit_linreg_mcmc(&x, &y, &LinRegPrior::default(), 2000, 2).unwrap();
        let b = fit.beta.column(0);
        let mean = b.mean().unwrap();
        let sd = b.std(1.0);
        assert!((mean - 1.5).abs() < 3.0 * sd, "mean {mean}, sd {sd}");
        let sigma_mean = fit.sigma.iter().sum::<f64>() / fit.sigma.len() as f64;
        assert!((sigma_mean - 1.0).abs() < 0.2);
    }

    #[test]
    fn conjugate_mean_check() {
        // with σ fixed near its posterior mode the β posterior is Gaussian;
        // compare the MCMC mean with that closed form
        let (x, y) = toy(200, -0.7, 3);
        let prior = LinRegPrior::default();
        let fit = fit_linreg_mcmc(&x, &y, &prior, 4000, 4).unwrap();
        let s2 = fit.sigma.iter().map(|s| s * s).sum::<f64>() / fit.sigma.len() as f64;
        let sxx: f64 = x.column(0).iter().map(|v| v * v).sum();
        let sxy: f64 = x.column(0).iter().zip(&y).map(|(a, b)| a * b).sum();
        let post_mean = (sxy / s2) / (sxx / s2 + 0.1);
        let post_sd = (1.0 / (sxx / s2 + 0.1)).sqrt();
        let mcmc_mean = fit.beta.column(0).mean().unwrap();
        assert!((mcmc_mean - post_mean).abs() < 0.2 * post_sd);
    }

    #[test]
    fn tiny_data_stays_near_prior() {
        let x = Array2::from_shape_vec((2, 1), vec![0.01, -0.02]).unwrap();
        let fit = fit_linreg_mcmc(&x, &[0.3, -0.1], &LinRegPrior::default(), 2000, 5).unwrap();
        let sd = fit.beta.column(0).std(1.0);
        assert!(sd < 10f64.sqrt() * 1.1, "sd {sd}");
        assert!(sd > 1.0);
    }

    #[test]
    fn chains_are_reproducible() {
        let (x, y) = toy(30, 1.0, 6);
        let prior = LinRegPrior::default();
        let a = fit_linreg_mcmc(&x, &y, &prior, 300, 7).unwrap();
        let b = fit_linreg_mcmc(&x, &y, &prior, 300, 7).unwrap();
        assert_eq!(a.beta, b.beta);
        assert_eq!(a.sigma, b.sigma);
        assert_eq!(a.draws, b.draws);
    }

    #[test]
    fn marginal_matches_brute_force_quadrature() {
        // independent 2-D quadrature over (β, σ) for a three-point data set
        let x = Array2::from_shape_vec((3, 1), vec![0.5, 1.2, -0.8]).unwrap();
        let y = [0.9, 1.4, -0.3];
        let prior = LinRegPrior::default();
        let fast = log_marginal_likelihood(&x, &y, &prior).unwrap();

        let mut terms = Vec::new();
        let (nb, ns) = (1200, 1200);
        let (b_lo, b_hi) = (-6.0, 8.0);
        let (u_lo, u_hi) = (-6.0, 4.0);
        let hb = (b_hi - b_lo) / nb as f64;
        let hu = (u_hi - u_lo) / ns as f64;
        for a in 0..nb {
            let b = b_lo + (a as f64 + 0.5) * hb;
            let lp_b = normal_ln_pdf(b, 0.0, prior.beta_sd);
            for c in 0..ns {
                let u = u_lo + (c as f64 + 0.5) * hu;
                let s = u.exp();
                let ll: f64 = x
                    .column(0)
                    .iter()
                    .zip(&y)
                    .map(|(xi, yi)| normal_ln_pdf(*yi, b * xi, s))
                    .sum();
                let lp_u = prior.sigma_shape * prior.sigma_rate.ln() - ln_gamma(prior.sigma_shape)
                    + prior.sigma_shape * u
                    - prior.sigma_rate * s;
                terms.push(ll + lp_b + lp_u);
            }
        }
        let brute = log_sum_exp(&terms) + (hb * hu).ln();
        assert!((fast - brute).abs() < 5e-3, "{fast} vs {brute}");
    }

    #[test]
    fn exact_loo_handles_two_points() {
        let x = Array2::from_shape_vec((2, 1), vec![1.0, 2.0]).unwrap();
        let v = exact_loo_oracle(&x, &[1.1, 1.9], &LinRegPrior::default(), 500, 1).unwrap();
        assert_eq!(v.len(), 2);
        assert!(v.iter().all(|l| l.is_finite()));
    }
}
