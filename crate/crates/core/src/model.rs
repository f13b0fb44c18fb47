//! Shared data model: per-model draw matrices, the analysis manifest, weight
//! vectors and elpd summaries.

use std::collections::HashSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for `|Σ w_k - 1|` on any simplex vector.
pub const SIMPLEX_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest contains no models")]
    Empty,
    #[error("model {model}: draw matrix is empty ({draws} draws x {points} points)")]
    EmptyMatrix {
        model: String,
        draws: usize,
        points: usize,
    },
    #[error("model {model}: expected {expected} data points, found {found}")]
    DimensionMismatch {
        model: String,
        expected: usize,
        found: usize,
    },
    #[error("model {model}: pred_mean is {found_draws}x{found_points}, loglik is {draws}x{points}")]
    PredMeanShape {
        model: String,
        draws: usize,
        points: usize,
        found_draws: usize,
        found_points: usize,
    },
    #[error("model {model}: non-finite {field} entry at draw {draw}, point {point}")]
    NonFinite {
        model: String,
        field: &'static str,
        draw: usize,
        point: usize,
    },
    #[error("model {model}: log_marginal is not finite")]
    NonFiniteMarginal { model: String },
    #[error("duplicate model id {0:?}")]
    DuplicateId(String),
    #[error("prior_model_probs has length {found}, expected {expected}")]
    PriorLength { expected: usize, found: usize },
    #[error("prior_model_probs is not on the simplex")]
    PriorNotSimplex,
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One model's S x n matrix of pointwise log-likelihoods over posterior draws.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDrawMatrix {
    pub model_id: String,
    /// `loglik[[s, i]] = log p(y_i | θ^s, M_k)`
    pub loglik: Array2<f64>,
    /// Per-draw predictive means `E(y_i | θ^s, M_k)`, same shape as `loglik`.
    pub pred_mean: Option<Array2<f64>>,
    /// `log p(y | M_k)`, needed only for BMA.
    pub log_marginal: Option<f64>,
}

impl ModelDrawMatrix {
    pub fn new(model_id: impl Into<String>, loglik: Array2<f64>) -> Self {
        Self {
            model_id: model_id.into(),
            loglik,
            pred_mean: None,
            log_marginal: None,
        }
    }

    pub fn with_pred_mean(mut self, pred_mean: Array2<f64>) -> Self {
        self.pred_mean = Some(pred_mean);
        self
    }

    pub fn with_log_marginal(mut self, log_marginal: f64) -> Self {
        self.log_marginal = Some(log_marginal);
        self
    }

    pub fn draws(&self) -> usize {
        self.loglik.nrows()
    }

    pub fn points(&self) -> usize {
        self.loglik.ncols()
    }

    fn check(&self) -> Result<(), ManifestError> {
        let (draws, points) = self.loglik.dim();
        if draws == 0 || points == 0 {
            return Err(ManifestError::EmptyMatrix {
                model: self.model_id.clone(),
                draws,
                points,
            });
        }
        check_finite(&self.model_id, "loglik", &self.loglik)?;
        if let Some(pm) = &self.pred_mean {
            if pm.dim() != (draws, points) {
                return Err(ManifestError::PredMeanShape {
                    model: self.model_id.clone(),
                    draws,
                    points,
                    found_draws: pm.nrows(),
                    found_points: pm.ncols(),
                });
            }
            check_finite(&self.model_id, "pred_mean", pm)?;
        }
        if matches!(self.log_marginal, Some(v) if !v.is_finite()) {
            return Err(ManifestError::NonFiniteMarginal {
                model: self.model_id.clone(),
            });
        }
        Ok(())
    }
}

fn check_finite(model: &str, field: &'static str, m: &Array2<f64>) -> Result<(), ManifestError> {
    match m.indexed_iter().find(|(_, v)| !v.is_finite()) {
        Some(((draw, point), _)) => Err(ManifestError::NonFinite {
            model: model.to_string(),
            field,
            draw,
            point,
        }),
        None => Ok(()),
    }
}

/// A validated multi-model analysis. Construct through [`validate_manifest`]
/// or [`Manifest::new`]; fields are read-only afterwards by convention.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub models: Vec<ModelDrawMatrix>,
    /// Number of data points shared by every model.
    pub n: usize,
    /// Number of models.
    pub k: usize,
    pub seed: u64,
    pub prior_model_probs: Option<Vec<f64>>,
}

impl Manifest {
    pub fn new(
        models: Vec<ModelDrawMatrix>,
        seed: u64,
        prior_model_probs: Option<Vec<f64>>,
    ) -> Result<Self, ManifestError> {
        validate_manifest(Manifest {
            models,
            n: 0,
            k: 0,
            seed,
            prior_model_probs,
        })
    }

    pub fn model_ids(&self) -> Vec<String> {
        self.models.iter().map(|m| m.model_id.clone()).collect()
    }

    /// The prior over models, uniform when none was given.
    pub fn prior(&self) -> Vec<f64> {
        self.prior_model_probs
            .clone()
            .unwrap_or_else(|| vec![1.0 / self.k as f64; self.k])
    }
}

/// Fills in `n` and `k` and cross-checks every model against them.
pub fn validate_manifest(mut manifest: Manifest) -> Result<Manifest, ManifestError> {
    let first = manifest.models.first().ok_or(ManifestError::Empty)?;
    let n = first.points();
    let mut seen = HashSet::new();
    for model in &manifest.models {
        if !seen.insert(model.model_id.as_str()) {
            return Err(ManifestError::DuplicateId(model.model_id.clone()));
        }
        if model.points() != n && model.points() != 0 {
            return Err(ManifestError::DimensionMismatch {
                model: model.model_id.clone(),
                expected: n,
                found: model.points(),
            });
        }
        model.check()?;
    }
    let k = manifest.models.len();
    if let Some(prior) = &manifest.prior_model_probs {
        if prior.len() != k {
            return Err(ManifestError::PriorLength {
                expected: k,
                found: prior.len(),
            });
        }
        WeightVector::new(prior.clone()).map_err(|_| ManifestError::PriorNotSimplex)?;
    }
    manifest.n = n;
    manifest.k = k;
    Ok(manifest)
}

#[derive(Debug, Error, PartialEq)]
pub enum SimplexError {
    #[error("weight vector is empty")]
    Empty,
    #[error("weight {index} is {value}, expected a finite nonnegative value")]
    Negative { index: usize, value: f64 },
    #[error("weights sum to {0}, expected 1")]
    Sum(f64),
}

/// K nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self, SimplexError> {
        if w.is_empty() {
            return Err(SimplexError::Empty);
        }
        if let Some((index, &value)) = w
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(SimplexError::Negative { index, value });
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(SimplexError::Sum(sum));
        }
        Ok(Self(w))
    }

    /// Rescales nonnegative masses to sum to one.
    pub fn normalize(masses: Vec<f64>) -> Result<Self, SimplexError> {
        let sum: f64 = masses.iter().sum();
        if !(sum > 0.0 && sum.is_finite()) {
            return Err(SimplexError::Sum(sum));
        }
        Self::new(masses.into_iter().map(|m| m / sum).collect())
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    /// Weight one on `index`, zero elsewhere.
    pub fn vertex(k: usize, index: usize) -> Self {
        let mut w = vec![0.0; k];
        w[index] = 1.0;
        Self(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn entropy(&self) -> f64 {
        crate::math::entropy(&self.0)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for WeightVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl TryFrom<Vec<f64>> for WeightVector {
    type Error = SimplexError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<WeightVector> for Vec<f64> {
    fn from(w: WeightVector) -> Self {
        w.0
    }
}

/// LOO summary for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElpdSummary {
    /// `elpd_loo = Σ_i z_i`
    pub total: f64,
    /// `z_i = log p(y_i | y_{-i})`
    pub pointwise: Vec<f64>,
    /// `sqrt(Σ_i (z_i - total/n)^2)`
    pub se: f64,
    /// Effective number of parameters, full-data lpd minus `total`.
    pub p_loo: f64,
}

impl ElpdSummary {
    /// Builds the summary from pointwise LOO densities and the full-data lpd.
    pub fn from_pointwise(pointwise: Vec<f64>, lpd_full: f64) -> Self {
        let total: f64 = pointwise.iter().sum();
        let mean = total / pointwise.len() as f64;
        let se = pointwise
            .iter()
            .map(|z| (z - mean).powi(2))
            .sum::<f64>()
            .sqrt();
        Self {
            total,
            pointwise,
            se,
            p_loo: lpd_full - total,
        }
    }
}
