//! Linear-regression experiment: `y = Xβ + ε` with `X_j ~ N(5, 1)` and
//! `ε ~ N(0, 1)`, candidate models built from subsets of the covariates.

use ndarray::{Array2, Axis};
use rand::{Rng, RngCore};
use rand_distr::{Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::linreg::{fit_linreg_mcmc, log_marginal_likelihood, LinRegPrior};
use super::{rep_rng, summarize, MethodSummary, RepRow, SimError};
use crate::model::{Manifest, WeightVector};
use crate::psis::loo_all;
use crate::weights::{combine_predictive, Method, WeightError, WeightInputs, DEFAULT_BB_SAMPLES, MIN_BB_SAMPLES};

const BUMP_CENTERS: [f64; 3] = [4.0, 8.0, 12.0];
const COVARIATE_MEAN: f64 = 5.0;

/// Coefficients `β_j = γ Σ_c 1{|j - c| < h} (h - |j - c|)²` for bump centers
/// 4, 8, 12 and `j = 1..=J`, with `γ` set so that `Σ β_j² = snr / (1 - snr)`.
pub fn gen_beta(j: usize, h: f64, snr: f64) -> Result<Vec<f64>, SimError> {
    if j == 0 || !(h > 0.0) || !(snr > 0.0 && snr < 1.0) {
        return Err(SimError::Config(format!(
            "need J >= 1, h > 0 and snr in (0, 1); got J={j}, h={h}, snr={snr}"
        )));
    }
    let bumps: Vec<f64> = (1..=j)
        .map(|idx| {
            BUMP_CENTERS
                .iter()
                .map(|c| {
                    let d = (idx as f64 - c).abs();
                    if d < h {
                        (h - d).powi(2)
                    } else {
                        0.0
                    }
                })
                .sum()
        })
        .collect();
    let norm2: f64 = bumps.iter().map(|b| b * b).sum();
    if norm2 == 0.0 {
        return Err(SimError::Config(format!(
            "no coefficient of 1..={j} lies within {h} of a bump center"
        )));
    }
    let gamma = (snr / (1.0 - snr) / norm2).sqrt();
    Ok(bumps.into_iter().map(|b| gamma * b).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegMode {
    /// Model k uses covariate k alone.
    MOpenUnivariate,
    /// Model k uses covariates 1..=k.
    MClosedNested,
}

impl RegMode {
    fn columns(self, k: usize) -> Vec<usize> {
        match self {
            RegMode::MOpenUnivariate => vec![k],
            RegMode::MClosedNested => (0..=k).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegConfig {
    #[serde(alias = "J")]
    pub j: usize,
    pub h: f64,
    pub snr: f64,
    pub n: usize,
    pub n_test: usize,
    pub reps: usize,
    pub mode: RegMode,
    pub prior: LinRegPrior,
    /// Retained posterior draws per fit.
    pub draws: usize,
    pub seed: u64,
    pub bb_samples: usize,
}

impl Default for RegConfig {
    fn default() -> Self {
        Self {
            j: 15,
            h: 5.0,
            snr: 0.8,
            n: 100,
            n_test: 200,
            reps: 100,
            mode: RegMode::MOpenUnivariate,
            prior: LinRegPrior::default(),
            draws: 1000,
            seed: 0,
            bb_samples: DEFAULT_BB_SAMPLES,
        }
    }
}

impl RegConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        gen_beta(self.j, self.h, self.snr)?;
        if self.n < 2 || self.n_test == 0 || self.reps == 0 || self.draws == 0 {
            return Err(SimError::Config(
                "need n >= 2 and positive n_test, reps and draws".into(),
            ));
        }
        if self.bb_samples < MIN_BB_SAMPLES {
            return Err(SimError::Config("bb_samples must be at least 100".into()));
        }
        let p = &self.prior;
        if !(p.beta_sd > 0.0 && p.sigma_shape > 0.0 && p.sigma_rate > 0.0) {
            return Err(SimError::Config("prior parameters must be positive".into()));
        }
        Ok(())
    }
}

/// Per-model diagnostics for one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub n: usize,
    pub rep: usize,
    pub model: String,
    pub elpd_loo: f64,
    pub p_loo: f64,
    pub p_loo_over_n: f64,
    pub max_k_hat: f64,
    pub test_lpd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegReport {
    pub config: RegConfig,
    pub beta: Vec<f64>,
    pub model_ids: Vec<String>,
    pub summaries: Vec<MethodSummary>,
    pub rows: Vec<RepRow>,
    pub model_rows: Vec<ModelRow>,
}

fn covariates(rng: &mut dyn RngCore, rows: usize, cols: usize) -> Array2<f64> {
    let dist = Normal::new(COVARIATE_MEAN, 1.0).expect("unit sd");
    Array2::from_shape_fn((rows, cols), |_| rng.sample(dist))
}

fn outcomes(rng: &mut dyn RngCore, x: &Array2<f64>, beta: &[f64]) -> Vec<f64> {
    x.rows()
        .into_iter()
        .map(|row| row.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>() + rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn model_id(mode: RegMode, k: usize) -> String {
    match mode {
        RegMode::MOpenUnivariate => format!("x{}", k + 1),
        RegMode::MClosedNested => format!("x1_to_x{}", k + 1),
    }
}

struct FittedModel {
    draws: crate::model::ModelDrawMatrix,
    test_lpd: Vec<f64>,
    test_mean: Vec<f64>,
}

fn run_rep(config: &RegConfig, beta: &[f64], rep: usize) -> Result<(Vec<RepRow>, Vec<Vec<f64>>, Vec<ModelRow>), SimError> {
    let mut rng = rep_rng(config.seed, rep);
    let x = covariates(&mut rng, config.n, config.j);
    let y = outcomes(&mut rng, &x, beta);
    let x_test = covariates(&mut rng, config.n_test, config.j);
    let y_test = outcomes(&mut rng, &x_test, beta);
    let fit_seeds: Vec<u64> = (0..config.j).map(|_| rng.next_u64()).collect();
    let bb_seed = rng.next_u64();

    let fitted: Vec<FittedModel> = (0..config.j)
        .into_par_iter()
        .map(|k| {
            let cols = config.mode.columns(k);
            let xk = x.select(Axis(1), &cols);
            let xk_test = x_test.select(Axis(1), &cols);
            let fit = fit_linreg_mcmc(&xk, &y, &config.prior, config.draws, fit_seeds[k])?;
            let log_marginal = log_marginal_likelihood(&xk, &y, &config.prior)?;
            let test_lpd = fit.predictive_lpd(&xk_test, &y_test);
            let test_mean = fit.predictive_mean(&xk_test);
            let mut draws = fit.draws.with_log_marginal(log_marginal);
            draws.model_id = model_id(config.mode, k);
            Ok(FittedModel {
                draws,
                test_lpd,
                test_mean,
            })
        })
        .collect::<Result<_, SimError>>()?;

    let k = fitted.len();
    let test_dens = Array2::from_shape_fn((config.n_test, k), |(i, m)| fitted[m].test_lpd[i]);
    let test_means = Array2::from_shape_fn((config.n_test, k), |(i, m)| fitted[m].test_mean[i]);
    let model_test: Vec<f64> = fitted
        .iter()
        .map(|f| f.test_lpd.iter().sum::<f64>() / config.n_test as f64)
        .collect();

    let manifest = Manifest::new(fitted.into_iter().map(|f| f.draws).collect(), bb_seed, None)?;
    let loo = loo_all(&manifest);
    let inputs = WeightInputs {
        manifest: &manifest,
        loo: &loo,
        y: Some(&y),
        bb_samples: config.bb_samples,
        seed: bb_seed,
    };

    let mut rows = Vec::with_capacity(Method::ALL.len());
    let mut weights = Vec::with_capacity(Method::ALL.len());
    for method in Method::ALL {
        let w = inputs.compute(method)?.weights;
        rows.push(score_row(method, config, rep, &w, &test_dens, &test_means, &y_test)?);
        weights.push(w.into_vec());
    }

    let model_rows = loo
        .elpd
        .iter()
        .enumerate()
        .map(|(m, e)| ModelRow {
            n: config.n,
            rep,
            model: loo.model_ids[m].clone(),
            elpd_loo: e.total,
            p_loo: e.p_loo,
            p_loo_over_n: e.p_loo / config.n as f64,
            max_k_hat: loo.k_hat.column(m).iter().copied().fold(f64::NEG_INFINITY, f64::max),
            test_lpd: model_test[m],
        })
        .collect();
    Ok((rows, weights, model_rows))
}

fn score_row(
    method: Method,
    config: &RegConfig,
    rep: usize,
    w: &WeightVector,
    test_dens: &Array2<f64>,
    test_means: &Array2<f64>,
    y_test: &[f64],
) -> Result<RepRow, WeightError> {
    let lpd = combine_predictive(w, test_dens)?;
    let total: f64 = lpd.iter().sum();
    let mse = test_means
        .rows()
        .into_iter()
        .zip(y_test)
        .map(|(row, yt)| {
            let pred: f64 = row.iter().zip(w.as_slice()).map(|(m, w)| m * w).sum();
            (yt - pred).powi(2)
        })
        .sum::<f64>()
        / y_test.len() as f64;
    Ok(RepRow {
        method: method.name().to_string(),
        n: config.n,
        rep,
        test_lpd: total / y_test.len() as f64,
        mse,
        test_lpd_per_n: Some(total / config.n as f64),
    })
}

/// Replicated regression experiment over all weighting methods. The true
/// coefficients are fixed by `(J, h, snr)`; covariates, noise and test data
/// are redrawn for every replication.
pub fn run_regression_experiment(config: &RegConfig) -> Result<RegReport, SimError> {
    config.validate()?;
    let beta = gen_beta(config.j, config.h, config.snr)?;
    let outputs: Vec<_> = (0..config.reps)
        .into_par_iter()
        .map(|rep| run_rep(config, &beta, rep))
        .collect::<Result<_, _>>()?;

    let mut rows = Vec::new();
    let mut weights = Vec::new();
    let mut model_rows = Vec::new();
    for (r, w, m) in outputs {
        rows.extend(r);
        weights.push(w);
        model_rows.extend(m);
    }
    let summaries = summarize(&Method::ALL, &rows, &weights);
    Ok(RegReport {
        config: config.clone(),
        beta,
        model_ids: (0..config.j).map(|k| model_id(config.mode, k)).collect(),
        summaries,
        rows,
        model_rows,
    })
}
