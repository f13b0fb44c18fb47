//! Simulation lab: data generators, toy samplers, oracles and the two
//! replicated experiments (Gaussian candidates, linear-regression subsets).

mod gm;
mod linreg;
mod oracle;
mod regression;

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gm::{
    gen_gm, gm_loglik_matrices, run_gm_experiment, DuplicateRow, DuplicateSummary, GmConfig,
    GmReport,
};
pub use linreg::{exact_loo_oracle, fit_linreg_mcmc, log_marginal_likelihood, LinRegFit, LinRegPrior};
pub use oracle::grid_weight_oracle;
pub use regression::{
    gen_beta, run_regression_experiment, ModelRow, RegConfig, RegMode, RegReport,
};

use crate::model::ManifestError;
use crate::weights::{Method, WeightError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("posterior precision matrix is not positive definite")]
    NotPositiveDefinite,
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Weight(#[from] WeightError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Independent stream for replication `rep` of a run seeded with `seed`.
pub(crate) fn rep_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

/// One tidy output row: a method's test performance in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRow {
    pub method: String,
    pub n: usize,
    pub rep: usize,
    /// Mean test log predictive density, `(1/n_test) Σ log p(ỹ_j | y)`.
    pub test_lpd: f64,
    pub mse: f64,
    /// Summed test log density divided by the training size.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub test_lpd_per_n: Option<f64>,
}

/// Aggregate of the [`RepRow`]s of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub test_lpd_mean: f64,
    pub test_lpd_se: f64,
    pub mse_mean: f64,
    pub mse_se: f64,
    /// Mean and standard error of `test_lpd(stacking) - test_lpd(method)`,
    /// paired by replication.
    pub lpd_gap_to_stacking: Option<(f64, f64)>,
    pub mse_gap_to_stacking: Option<(f64, f64)>,
    /// Weights averaged over replications.
    pub mean_weights: Vec<f64>,
}

pub(crate) fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Summaries in `methods` order. `rows` must hold every (method, rep) pair,
/// `weights[r][m]` the weights of method `m` in replication `r`.
pub(crate) fn summarize(methods: &[Method], rows: &[RepRow], weights: &[Vec<Vec<f64>>]) -> Vec<MethodSummary> {
    let column = |name: &str, f: fn(&RepRow) -> f64| -> Vec<f64> {
        rows.iter().filter(|r| r.method == name).map(f).collect()
    };
    let has_stacking = methods.contains(&Method::Stacking);
    let base_lpd = column("stacking", |r| r.test_lpd);
    let base_mse = column("stacking", |r| r.mse);
    methods
        .iter()
        .enumerate()
        .map(|(mi, m)| {
            let lpd = column(m.name(), |r| r.test_lpd);
            let mse = column(m.name(), |r| r.mse);
            let (test_lpd_mean, test_lpd_se) = mean_se(&lpd);
            let (mse_mean, mse_se) = mean_se(&mse);
            let gap = |base: &[f64], own: &[f64]| {
                let d: Vec<f64> = base.iter().zip(own).map(|(a, b)| a - b).collect();
                mean_se(&d)
            };
            let k = weights.first().map_or(0, |w| w[mi].len());
            let mut mean_weights = vec![0.0; k];
            for rep in weights {
                for (acc, w) in mean_weights.iter_mut().zip(&rep[mi]) {
                    *acc += w / weights.len() as f64;
                }
            }
            MethodSummary {
                method: m.name().to_string(),
                test_lpd_mean,
                test_lpd_se,
                mse_mean,
                mse_se,
                lpd_gap_to_stacking: has_stacking.then(|| gap(&base_lpd, &lpd)),
                mse_gap_to_stacking: has_stacking.then(|| gap(&base_mse, &mse)),
                mean_weights,
            }
        })
        .collect()
}

pub(crate) fn write_csv<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Per-model diagnostics of a regression run as CSV.
pub fn write_models_csv<W: Write>(out: W, rows: &[ModelRow]) -> Result<(), SimError> {
    write_csv(out, rows)
}

/// Experiment selected by the `experiment` field of a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "snake_case")]
pub enum ExperimentConfig {
    Gm(GmConfig),
    Regression(RegConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "experiment", rename_all = "snake_case")]
pub enum ExperimentReport {
    Gm(GmReport),
    Regression(RegReport),
}

impl ExperimentConfig {
    pub fn run(&self) -> Result<ExperimentReport, SimError> {
        Ok(match self {
            ExperimentConfig::Gm(c) => ExperimentReport::Gm(run_gm_experiment(c)?),
            ExperimentConfig::Regression(c) => ExperimentReport::Regression(run_regression_experiment(c)?),
        })
    }
}

impl ExperimentReport {
    /// The tidy per-(method, rep) table.
    pub fn write_rows_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        match self {
            ExperimentReport::Gm(r) => write_csv(out, &r.rows),
            ExperimentReport::Regression(r) => write_csv(out, &r.rows),
        }
    }
}
