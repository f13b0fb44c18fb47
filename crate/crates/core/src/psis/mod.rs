//! Pareto-smoothed importance sampling LOO.
//!
//! For each model and data point the raw ratios `r^s = 1 / p(y_i | θ^s)` are
//! smoothed by replacing the largest 20% with expected order statistics of a
//! fitted generalized Pareto distribution, capped at the raw maximum. The
//! smoothed weights then give the self-normalized LOO predictive density.

mod gpd;

use std::io::Write;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

pub use gpd::{fit_gpd, gpd_quantile, ParetoFit, GRID_POINTS, MIN_TAIL};

use crate::math::{log_mean_exp, log_sum_exp};
use crate::model::{ElpdSummary, Manifest};

/// Fraction of draws treated as the tail.
pub const TAIL_FRACTION: f64 = 0.2;
/// Below this many draws the raw ratios are used unchanged.
pub const MIN_DRAWS: usize = 25;
/// Cells with `k_hat` above this are reported as unreliable.
pub const K_HAT_THRESHOLD: f64 = 0.7;
/// `n < SAMPLE_SIZE_FACTOR * p_loo` triggers a small-sample warning.
pub const SAMPLE_SIZE_FACTOR: f64 = 5.0;

#[derive(Debug, Error, PartialEq)]
pub enum PsisError {
    #[error("tail has {0} values, need at least 5")]
    TailTooSmall(usize),
    #[error("tail has zero variance")]
    DegenerateTail,
    #[error("tail value {0} is negative or not finite")]
    InvalidTail(f64),
    #[error("models without pred_mean: {}", .0.join(", "))]
    MissingPredMean(Vec<String>),
}

/// Smoothed log importance weights for one (point, model) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedRatios {
    pub log_w: Vec<f64>,
    /// Fitted tail shape. `+inf` when there were too few draws to fit,
    /// 0 when the ratios or their tail were constant.
    pub k_hat: f64,
    pub raw_log_r: Vec<f64>,
}

pub fn smooth_ratios(log_r: &[f64]) -> SmoothedRatios {
    let s = log_r.len();
    let tail_len = (TAIL_FRACTION * s as f64).ceil() as usize;
    let raw = |k_hat| SmoothedRatios {
        log_w: log_r.to_vec(),
        k_hat,
        raw_log_r: log_r.to_vec(),
    };
    if s > 0 && log_r.iter().all(|&v| v == log_r[0]) {
        // equal ratios carry no tail at all
        return raw(0.0);
    }
    if s == 0 || tail_len < MIN_TAIL || tail_len >= s {
        return raw(f64::INFINITY);
    }

    let max = log_r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| log_r[a].total_cmp(&log_r[b]));
    let tail_ids = &order[s - tail_len..];
    let cutoff = (log_r[order[s - tail_len - 1]] - max).exp();
    let exceedances: Vec<f64> = tail_ids
        .iter()
        .map(|&j| ((log_r[j] - max).exp() - cutoff).max(0.0))
        .collect();

    let fit = match fit_gpd(&exceedances) {
        Ok(fit) => fit,
        Err(PsisError::DegenerateTail) => return raw(0.0),
        Err(_) => return raw(f64::INFINITY),
    };
    if s < MIN_DRAWS || !fit.k_hat.is_finite() {
        return raw(fit.k_hat);
    }

    let mut log_w = log_r.to_vec();
    for (z, &j) in tail_ids.iter().enumerate() {
        let p = (z as f64 + 0.5) / tail_len as f64;
        let smoothed = (fit.quantile(p) + cutoff).ln() + max;
        log_w[j] = smoothed.min(max);
    }
    SmoothedRatios {
        log_w,
        k_hat: fit.k_hat,
        raw_log_r: log_r.to_vec(),
    }
}

/// LOO log predictive density for one cell, with its `k_hat` and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PointLoo {
    pub lpd: f64,
    pub k_hat: f64,
    pub log_w: Vec<f64>,
}

pub fn psis_point(loglik: ArrayView1<'_, f64>) -> PointLoo {
    if loglik.iter().all(|&v| v == loglik[0]) {
        // a single draw or a constant likelihood: nothing to reweight
        return PointLoo {
            lpd: loglik[0],
            k_hat: 0.0,
            log_w: vec![0.0; loglik.len()],
        };
    }
    let log_r: Vec<f64> = loglik.iter().map(|v| -v).collect();
    let sm = smooth_ratios(&log_r);
    let num: Vec<f64> = sm.log_w.iter().zip(loglik).map(|(w, l)| w + l).collect();
    PointLoo {
        lpd: log_sum_exp(&num) - log_sum_exp(&sm.log_w),
        k_hat: sm.k_hat,
        log_w: sm.log_w,
    }
}

/// `(lpd, k_hat)` for one column of a log-likelihood matrix.
pub fn loo_lpd_point(loglik: &[f64]) -> (f64, f64) {
    let p = psis_point(ArrayView1::from(loglik));
    (p.lpd, p.k_hat)
}

/// Self-normalized importance estimate of the LOO posterior mean.
pub fn loo_mean_point(pred_mean: &[f64], log_w: &[f64]) -> f64 {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for (m, lw) in pred_mean.iter().zip(log_w) {
        let w = (lw - max).exp();
        num += w * m;
        den += w;
    }
    num / den
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KhatWarning {
    pub i: usize,
    pub k: usize,
    pub k_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleSizeWarning {
    pub k: usize,
    pub n: usize,
    pub p_loo: f64,
}

/// PSIS-LOO output for every model.
#[derive(Debug, Clone, PartialEq)]
pub struct LooResult {
    pub model_ids: Vec<String>,
    /// n x K
    pub loo_lpd: Array2<f64>,
    /// n x K
    pub k_hat: Array2<f64>,
    /// n x K, present only when every model supplied `pred_mean`.
    pub loo_mean: Option<Array2<f64>>,
    pub elpd: Vec<ElpdSummary>,
    pub khat_warnings: Vec<KhatWarning>,
    pub sample_size_warnings: Vec<SampleSizeWarning>,
    missing_pred_mean: Vec<String>,
}

impl LooResult {
    pub fn n(&self) -> usize {
        self.loo_lpd.nrows()
    }

    pub fn k(&self) -> usize {
        self.loo_lpd.ncols()
    }

    pub fn elpd_totals(&self) -> Vec<f64> {
        self.elpd.iter().map(|e| e.total).collect()
    }

    pub fn elpd_se(&self) -> Vec<f64> {
        self.elpd.iter().map(|e| e.se).collect()
    }

    pub fn loo_means(&self) -> Result<&Array2<f64>, PsisError> {
        self.loo_mean
            .as_ref()
            .ok_or_else(|| PsisError::MissingPredMean(self.missing_pred_mean.clone()))
    }

    /// k_hat table as headerless CSV, one row per point.
    pub fn write_khat_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_table(out, &self.k_hat)
    }

    pub fn write_lpd_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_table(out, &self.loo_lpd)
    }
}

fn write_table<W: Write>(mut out: W, m: &Array2<f64>) -> std::io::Result<()> {
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

struct Cell {
    lpd: f64,
    k_hat: f64,
    mean: Option<f64>,
}

/// Runs PSIS-LOO over every (point, model) cell of a validated manifest.
///
/// Cells are computed in parallel and written to preallocated slots, so the
/// output does not depend on the thread count.
pub fn loo_all(manifest: &Manifest) -> LooResult {
    let (n, k) = (manifest.n, manifest.k);
    let cells: Vec<Cell> = (0..n * k)
        .into_par_iter()
        .map(|idx| {
            let (model, i) = (&manifest.models[idx / n], idx % n);
            let p = psis_point(model.loglik.column(i));
            let mean = model.pred_mean.as_ref().map(|pm| {
                let col: Vec<f64> = pm.column(i).to_vec();
                loo_mean_point(&col, &p.log_w)
            });
            Cell {
                lpd: p.lpd,
                k_hat: p.k_hat,
                mean,
            }
        })
        .collect();

    let mut loo_lpd = Array2::zeros((n, k));
    let mut k_hat = Array2::zeros((n, k));
    let all_means = manifest.models.iter().all(|m| m.pred_mean.is_some());
    let mut loo_mean = all_means.then(|| Array2::zeros((n, k)));
    for (idx, cell) in cells.iter().enumerate() {
        let (j, i) = (idx / n, idx % n);
        loo_lpd[[i, j]] = cell.lpd;
        k_hat[[i, j]] = cell.k_hat;
        if let (Some(m), Some(v)) = (loo_mean.as_mut(), cell.mean) {
            m[[i, j]] = v;
        }
    }

    let mut elpd = Vec::with_capacity(k);
    let mut sample_size_warnings = Vec::new();
    for (j, model) in manifest.models.iter().enumerate() {
        let lpd_full: f64 = model
            .loglik
            .columns()
            .into_iter()
            .map(|c| log_mean_exp(&c.to_vec()))
            .sum();
        let summary = ElpdSummary::from_pointwise(loo_lpd.column(j).to_vec(), lpd_full);
        if (n as f64) < SAMPLE_SIZE_FACTOR * summary.p_loo {
            sample_size_warnings.push(SampleSizeWarning {
                k: j,
                n,
                p_loo: summary.p_loo,
            });
        }
        elpd.push(summary);
    }

    let khat_warnings = k_hat
        .indexed_iter()
        .filter(|(_, &v)| v > K_HAT_THRESHOLD)
        .map(|((i, k), &k_hat)| KhatWarning { i, k, k_hat })
        .collect();

    LooResult {
        model_ids: manifest.model_ids(),
        loo_lpd,
        k_hat,
        loo_mean,
        elpd,
        khat_warnings,
        sample_size_warnings,
        missing_pred_mean: manifest
            .models
            .iter()
            .filter(|m| m.pred_mean.is_none())
            .map(|m| m.model_id.clone())
            .collect(),
    }
}
