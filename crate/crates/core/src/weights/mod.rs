//! Combination weights and the combined predictive density.

mod means;
mod stacking;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

pub use means::stack_means;
pub use stacking::{
    initial_point, stack_logscore, stack_logscore_with, stacking_objective, StackingOptions,
    StackingSolution,
};

use crate::math::{log_sum_exp, softmax};
use crate::model::{Manifest, SimplexError, WeightVector};
use crate::psis::LooResult;

/// Bayesian-bootstrap replicates for Pseudo-BMA+ when none are requested.
pub const DEFAULT_BB_SAMPLES: usize = 1000;
/// Fewest replicates accepted for Pseudo-BMA+.
pub const MIN_BB_SAMPLES: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum WeightError {
    #[error("no models or no data points")]
    Empty,
    #[error("non-finite value at point {point}, model {model}")]
    NonFinite { point: usize, model: usize },
    #[error("non-finite observation at point {0}")]
    NonFiniteObservation(usize),
    #[error("non-finite input for model {0}")]
    NonFiniteModel(usize),
    #[error("expected {expected} entries, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("negative standard error {se} for model {model}")]
    NegativeSe { model: usize, se: f64 },
    #[error("Pseudo-BMA+ needs at least 100 bootstrap replicates, got {0}")]
    TooFewReplicates(usize),
    #[error("models without pred_mean: {}", .0.join(", "))]
    MissingPredMean(Vec<String>),
    #[error("models without log_marginal: {}", .0.join(", "))]
    MissingLogMarginal(Vec<String>),
    #[error("stacking of means needs the observed outcomes y")]
    MissingObservations,
    #[error(transparent)]
    Simplex(#[from] SimplexError),
}

fn check_finite(v: &[f64]) -> Result<(), WeightError> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(k) => Err(WeightError::NonFiniteModel(k)),
        None => Ok(()),
    }
}

/// Softmax of elpd_loo totals.
pub fn pseudo_bma(elpd: &[f64]) -> Result<WeightVector, WeightError> {
    if elpd.is_empty() {
        return Err(WeightError::Empty);
    }
    check_finite(elpd)?;
    Ok(WeightVector::normalize(softmax(elpd))?)
}

/// Softmax of `elpd_k - se_k / 2`.
pub fn pseudo_bma_lognormal(elpd: &[f64], se: &[f64]) -> Result<WeightVector, WeightError> {
    if se.len() != elpd.len() {
        return Err(WeightError::Dimension {
            expected: elpd.len(),
            found: se.len(),
        });
    }
    check_finite(se)?;
    if let Some((model, &se)) = se.iter().enumerate().find(|(_, s)| **s < 0.0) {
        return Err(WeightError::NegativeSe { model, se });
    }
    let adjusted: Vec<f64> = elpd.iter().zip(se).map(|(e, s)| e - 0.5 * s).collect();
    pseudo_bma(&adjusted)
}

/// Bayesian-bootstrap-averaged Pseudo-BMA weights.
///
/// Replicate `b` draws `α ~ Dirichlet(1, ..., 1)` from its own ChaCha stream
/// `(seed, b)` and contributes `softmax(n Σ_i α_i z_i)`. The replicate mean is
/// reduced in order, so results do not depend on scheduling.
pub fn pseudo_bma_plus(loo_lpd: &Array2<f64>, replicates: usize, seed: u64) -> Result<WeightVector, WeightError> {
    let (n, k) = loo_lpd.dim();
    if n == 0 || k == 0 {
        return Err(WeightError::Empty);
    }
    if replicates < MIN_BB_SAMPLES {
        return Err(WeightError::TooFewReplicates(replicates));
    }
    if let Some(((i, j), _)) = loo_lpd.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(WeightError::NonFinite { point: i, model: j });
    }
    let per_rep: Vec<Vec<f64>> = (0..replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let raw: Vec<f64> = (0..n).map(|_| Exp1.sample(&mut rng)).collect();
            let total: f64 = raw.iter().sum();
            let mut zbar = vec![0.0; k];
            for (row, a) in loo_lpd.rows().into_iter().zip(&raw) {
                let alpha = a / total;
                for (z, v) in zbar.iter_mut().zip(row) {
                    *z += alpha * v;
                }
            }
            zbar.iter_mut().for_each(|z| *z *= n as f64);
            softmax(&zbar)
        })
        .collect();
    let mut mean = vec![0.0; k];
    for w in &per_rep {
        for (m, v) in mean.iter_mut().zip(w) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= replicates as f64);
    Ok(WeightVector::normalize(mean)?)
}

/// Posterior model probabilities `∝ p(y | M_k) p(M_k)`.
pub fn bma(log_marginal: &[f64], prior: &[f64]) -> Result<WeightVector, WeightError> {
    if log_marginal.len() != prior.len() {
        return Err(WeightError::Dimension {
            expected: log_marginal.len(),
            found: prior.len(),
        });
    }
    check_finite(log_marginal)?;
    WeightVector::new(prior.to_vec())?;
    let logits: Vec<f64> = log_marginal
        .iter()
        .zip(prior)
        .map(|(l, p)| l + p.ln())
        .collect();
    pseudo_bma_unchecked(&logits)
}

fn pseudo_bma_unchecked(logits: &[f64]) -> Result<WeightVector, WeightError> {
    Ok(WeightVector::normalize(softmax(logits))?)
}

/// One-hot weights at the best score. Ties go to the lowest model index.
pub fn select_best(scores: &[f64]) -> Result<WeightVector, WeightError> {
    if scores.is_empty() {
        return Err(WeightError::Empty);
    }
    check_finite(scores)?;
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = k;
        }
    }
    Ok(WeightVector::vertex(scores.len(), best))
}

/// Row-wise `log Σ_k w_k p_k(ỹ_j)`. Zero-weight components are skipped, so a
/// `-inf` log density there is harmless.
pub fn combine_predictive(weights: &WeightVector, log_dens: &Array2<f64>) -> Result<Vec<f64>, WeightError> {
    if log_dens.ncols() != weights.len() {
        return Err(WeightError::Dimension {
            expected: weights.len(),
            found: log_dens.ncols(),
        });
    }
    let w = weights.as_slice();
    Ok(log_dens
        .rows()
        .into_iter()
        .map(|row| {
            let terms: Vec<f64> = row
                .iter()
                .zip(w)
                .filter(|(_, &w)| w > 0.0)
                .map(|(l, w)| l + w.ln())
                .collect();
            log_sum_exp(&terms)
        })
        .collect())
}

/// Every weighting method, in the stable order used for `all`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Method {
    Stacking,
    StackMeans,
    PseudoBma,
    PseudoBmaLognormal,
    PseudoBmaPlus,
    Bma,
    SelectLoo,
    SelectMarginal,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Stacking,
        Method::StackMeans,
        Method::PseudoBma,
        Method::PseudoBmaLognormal,
        Method::PseudoBmaPlus,
        Method::Bma,
        Method::SelectLoo,
        Method::SelectMarginal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Stacking => "stacking",
            Method::StackMeans => "stack-means",
            Method::PseudoBma => "pseudo-bma",
            Method::PseudoBmaLognormal => "pseudo-bma-lognormal",
            Method::PseudoBmaPlus => "pseudo-bma-plus",
            Method::Bma => "bma",
            Method::SelectLoo => "select-loo",
            Method::SelectMarginal => "select-marginal",
        }
    }

    /// Parses a comma-separated list; `all` expands to every method.
    pub fn parse_list(s: &str) -> Result<Vec<Method>, String> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            if part == "all" {
                out.extend(Method::ALL);
            } else {
                out.push(part.parse()?);
            }
        }
        if out.is_empty() {
            return Err("no method given".into());
        }
        let mut seen = std::collections::HashSet::new();
        out.retain(|m| seen.insert(*m));
        Ok(out)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method {s:?}"))
    }
}

/// Weights from one method plus whatever that method reports about itself.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodWeights {
    pub method: Method,
    pub weights: WeightVector,
    pub objective: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
}

impl MethodWeights {
    fn plain(method: Method, weights: WeightVector) -> Self {
        Self {
            method,
            weights,
            objective: None,
            iterations: None,
            converged: None,
        }
    }

    fn solved(method: Method, sol: StackingSolution) -> Self {
        Self {
            method,
            weights: sol.weights,
            objective: Some(sol.objective),
            iterations: Some(sol.iterations),
            converged: Some(sol.converged),
        }
    }
}

/// Inputs shared by every method for one analysis.
#[derive(Debug, Clone, Copy)]
pub struct WeightInputs<'a> {
    pub manifest: &'a Manifest,
    pub loo: &'a LooResult,
    /// Observed outcomes, needed only for stacking of means.
    pub y: Option<&'a [f64]>,
    pub bb_samples: usize,
    pub seed: u64,
}

impl WeightInputs<'_> {
    fn log_marginals(&self) -> Result<Vec<f64>, WeightError> {
        let missing: Vec<String> = self
            .manifest
            .models
            .iter()
            .filter(|m| m.log_marginal.is_none())
            .map(|m| m.model_id.clone())
            .collect();
        if !missing.is_empty() {
            return Err(WeightError::MissingLogMarginal(missing));
        }
        Ok(self
            .manifest
            .models
            .iter()
            .filter_map(|m| m.log_marginal)
            .collect())
    }

    pub fn compute(&self, method: Method) -> Result<MethodWeights, WeightError> {
        let loo = self.loo;
        Ok(match method {
            Method::Stacking => {
                let opts = StackingOptions {
                    bb_samples: self.bb_samples,
                    seed: self.seed,
                    ..StackingOptions::default()
                };
                MethodWeights::solved(method, stack_logscore_with(&loo.loo_lpd, &opts)?)
            }
            Method::StackMeans => {
                let means = loo.loo_means().map_err(|e| match e {
                    crate::psis::PsisError::MissingPredMean(ids) => WeightError::MissingPredMean(ids),
                    _ => WeightError::MissingPredMean(vec![]),
                })?;
                let y = self.y.ok_or(WeightError::MissingObservations)?;
                MethodWeights::solved(method, stack_means(means, y)?)
            }
            Method::PseudoBma => MethodWeights::plain(method, pseudo_bma(&loo.elpd_totals())?),
            Method::PseudoBmaLognormal => MethodWeights::plain(
                method,
                pseudo_bma_lognormal(&loo.elpd_totals(), &loo.elpd_se())?,
            ),
            Method::PseudoBmaPlus => MethodWeights::plain(
                method,
                pseudo_bma_plus(&loo.loo_lpd, self.bb_samples, self.seed)?,
            ),
            Method::Bma => MethodWeights::plain(
                method,
                bma(&self.log_marginals()?, &self.manifest.prior())?,
            ),
            Method::SelectLoo => MethodWeights::plain(method, select_best(&loo.elpd_totals())?),
            Method::SelectMarginal => {
                MethodWeights::plain(method, select_best(&self.log_marginals()?)?)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn pseudo_bma_examples() {
        assert_eq!(pseudo_bma(&[-10.0, -10.0]).unwrap().as_slice(), &[0.5, 0.5]);
        let w = pseudo_bma(&[-10.0, -11.0]).unwrap();
        assert_abs_diff_eq!(w[0], 0.731_058_6, epsilon = 1e-7);
        assert_abs_diff_eq!(w[1], 0.268_941_4, epsilon = 1e-7);
        let shifted = pseudo_bma(&[90.0, 89.0]).unwrap();
        assert_abs_diff_eq!(shifted[0], w[0], epsilon = 1e-15);
        // magnitudes typical of real elpd totals
        let big = pseudo_bma(&[-2000.0, -2001.0]).unwrap();
        assert_abs_diff_eq!(big[0], w[0], epsilon = 1e-12);
    }

    #[test]
    fn lognormal_examples() {
        let elpd = [-10.0, -12.0, -9.5];
        assert_eq!(
            pseudo_bma_lognormal(&elpd, &[0.0; 3]).unwrap(),
            pseudo_bma(&elpd).unwrap()
        );
        let w = pseudo_bma_lognormal(&[-10.0, -10.0], &[0.0, 2.0]).unwrap();
        assert_abs_diff_eq!(w[0], 0.731_058_6, epsilon = 1e-7);
        assert_eq!(pseudo_bma_lognormal(&[-3.0], &[1.0]).unwrap().as_slice(), &[1.0]);
        assert!(matches!(
            pseudo_bma_lognormal(&[-1.0, -2.0], &[0.5, -0.1]),
            Err(WeightError::NegativeSe { model: 1, .. })
        ));
    }

    #[test]
    fn pseudo_bma_plus_single_point_matches_pseudo_bma() {
        let lpd = array![[-1.2, -0.4, -2.0]];
        let plus = pseudo_bma_plus(&lpd, 200, 3).unwrap();
        let plain = pseudo_bma(&[-1.2, -0.4, -2.0]).unwrap();
        for k in 0..3 {
            assert_abs_diff_eq!(plus[k], plain[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn pseudo_bma_plus_symmetric_columns() {
        let lpd = Array2::from_shape_fn((15, 3), |(i, _)| -0.1 * i as f64);
        let w = pseudo_bma_plus(&lpd, 500, 9).unwrap();
        for k in 0..3 {
            assert!((w[k] - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!(matches!(pseudo_bma_plus(&lpd, 50, 9), Err(WeightError::TooFewReplicates(50))));
    }

    #[test]
    fn pseudo_bma_plus_is_seeded() {
        let lpd = Array2::from_shape_fn((12, 2), |(i, k)| ((i * 7 + k * 3) % 5) as f64 * -0.3);
        let a = pseudo_bma_plus(&lpd, 300, 42).unwrap();
        let b = pseudo_bma_plus(&lpd, 300, 42).unwrap();
        let c = pseudo_bma_plus(&lpd, 300, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn bma_examples() {
        assert_eq!(bma(&[-3.0, -3.0], &[0.5, 0.5]).unwrap().as_slice(), &[0.5, 0.5]);
        // data {3.4}, models N(3,1) and N(4,1): odds exp((0.36 - 0.16) / 2)
        let lm = [
            crate::math::normal_ln_pdf(3.4, 3.0, 1.0),
            crate::math::normal_ln_pdf(3.4, 4.0, 1.0),
        ];
        let w = bma(&lm, &[0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(w[0] / w[1], 0.1f64.exp(), epsilon = 1e-12);
        // doubling prior mass on model 1 doubles its odds
        let w2 = bma(&lm, &[1.0 / 3.0, 2.0 / 3.0]).unwrap();
        assert_abs_diff_eq!(w2[1] / w2[0], 2.0 * w[1] / w[0], epsilon = 1e-12);
    }

    #[test]
    fn selection_ties_go_low() {
        assert_eq!(select_best(&[-1.0, -2.0]).unwrap().as_slice(), &[1.0, 0.0]);
        assert_eq!(select_best(&[0.0, 0.0]).unwrap().as_slice(), &[1.0, 0.0]);
        assert_eq!(select_best(&[-5.0, -1.0, -1.0]).unwrap().as_slice(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn combine_examples() {
        let dens = array![[-1.0, f64::NEG_INFINITY], [-2.0, -0.5]];
        let w = WeightVector::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(combine_predictive(&w, &dens).unwrap(), vec![-1.0, -2.0]);
        let same = array![[-1.3, -1.3], [-0.2, -0.2]];
        let w = WeightVector::new(vec![0.3, 0.7]).unwrap();
        let out = combine_predictive(&w, &same).unwrap();
        assert_abs_diff_eq!(out[0], -1.3, epsilon = 1e-14);
        assert_abs_diff_eq!(out[1], -0.2, epsilon = 1e-14);
        let mix = array![[
            crate::math::normal_ln_pdf(0.0, 0.0, 1.0),
            crate::math::normal_ln_pdf(0.0, 1.0, 1.0)
        ]];
        let out = combine_predictive(&WeightVector::uniform(2), &mix).unwrap();
        assert_abs_diff_eq!(out[0], -1.138_008_7, epsilon = 1e-7);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!(Method::parse_list("all").unwrap(), Method::ALL.to_vec());
        assert_eq!(
            Method::parse_list("stacking,pseudo-bma-plus").unwrap(),
            vec![Method::Stacking, Method::PseudoBmaPlus]
        );
        assert!(Method::parse_list("stacking,bogus").is_err());
    }
}
