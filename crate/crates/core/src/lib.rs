//! Model averaging for Bayesian predictive distributions.
//!
//! Takes per-model pointwise log-likelihood matrices over posterior draws and
//! produces combination weights: stacking of predictive distributions,
//! stacking of means, Pseudo-BMA, Pseudo-BMA+ and BMA. Leave-one-out
//! predictive densities come from Pareto-smoothed importance sampling.
//! [`simlab`] holds the simulation experiments and brute-force oracles used
//! to check all of the above.

pub mod io;
pub mod math;
pub mod model;
pub mod psis;
pub mod scoring;
pub mod simlab;
pub mod weights;

pub use model::{validate_manifest, ElpdSummary, Manifest, ManifestError, ModelDrawMatrix, WeightVector};
pub use psis::{loo_all, LooResult, PsisError};
pub use weights::{Method, WeightError};
