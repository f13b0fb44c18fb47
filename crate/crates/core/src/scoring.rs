//! Proper scoring rules for univariate mixture predictive distributions.
//!
//! All scores are positively oriented: larger is better. Quadratic and CRPS
//! use trapezoid quadrature on a caller-supplied grid, so analytic and
//! draw-based components are handled the same way.

use std::fmt::Debug;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{log_sum_exp, normal_cdf, normal_ln_pdf};
use crate::model::WeightVector;

/// Minimum quadrature points.
pub const MIN_GRID_POINTS: usize = 100;
/// Minimum draws for the energy score.
pub const MIN_ENERGY_DRAWS: usize = 1000;
/// Mass the grid must capture.
pub const COVERAGE_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum ScoreError {
    #[error("grid [{lo}, {hi}] captures mixture mass {mass}, need at least 1 - 1e-6")]
    GridCoverage { lo: f64, hi: f64, mass: f64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("beta must lie in (0, 2], got {0}")]
    InvalidBeta(f64),
    #[error("energy score needs at least 1000 draws, got {0}")]
    TooFewDraws(usize),
    #[error("{weights} weights for {components} components")]
    ComponentCount { weights: usize, components: usize },
    #[error("kernel density needs at least two distinct draws")]
    DegenerateDraws,
    #[error("unknown scoring rule {0:?}")]
    UnknownRule(String),
}

/// A univariate predictive density.
pub trait Density: Send + Sync + Debug {
    fn ln_pdf(&self, y: f64) -> f64;
    fn cdf(&self, y: f64) -> f64;
    fn sample(&self, rng: &mut dyn RngCore) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normal {
    pub mean: f64,
    pub sd: f64,
}

impl Normal {
    pub fn new(mean: f64, sd: f64) -> Self {
        Self { mean, sd }
    }
}

impl Density for Normal {
    fn ln_pdf(&self, y: f64) -> f64 {
        normal_ln_pdf(y, self.mean, self.sd)
    }

    fn cdf(&self, y: f64) -> f64 {
        normal_cdf(y, self.mean, self.sd)
    }

    fn sample(&self, rng: &mut dyn RngCore) -> f64 {
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        self.mean + self.sd * z
    }
}

/// Equal-weight mixture of normals, e.g. a posterior predictive built from
/// draws of `(mean, sd)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMixture {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl Density for NormalMixture {
    fn ln_pdf(&self, y: f64) -> f64 {
        let terms: Vec<f64> = self
            .means
            .iter()
            .zip(&self.sds)
            .map(|(&m, &s)| normal_ln_pdf(y, m, s))
            .collect();
        log_sum_exp(&terms) - (terms.len() as f64).ln()
    }

    fn cdf(&self, y: f64) -> f64 {
        let total: f64 = self
            .means
            .iter()
            .zip(&self.sds)
            .map(|(&m, &s)| normal_cdf(y, m, s))
            .sum();
        total / self.means.len() as f64
    }

    fn sample(&self, rng: &mut dyn RngCore) -> f64 {
        let j = rng.random_range(0..self.means.len());
        Normal::new(self.means[j], self.sds[j]).sample(rng)
    }
}

/// Gaussian kernel density over predictive draws, Silverman bandwidth.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelDensity {
    inner: NormalMixture,
    pub bandwidth: f64,
}

impl KernelDensity {
    pub fn new(draws: Vec<f64>) -> Result<Self, ScoreError> {
        let bandwidth = silverman_bandwidth(&draws);
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(ScoreError::DegenerateDraws);
        }
        let sds = vec![bandwidth; draws.len()];
        Ok(Self {
            inner: NormalMixture { means: draws, sds },
            bandwidth,
        })
    }
}

/// `0.9 * min(sd, IQR / 1.34) * n^(-1/5)`
pub fn silverman_bandwidth(draws: &[f64]) -> f64 {
    let n = draws.len();
    if n < 2 {
        return 0.0;
    }
    let mean = draws.iter().sum::<f64>() / n as f64;
    let sd = (draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (n - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    };
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * (n as f64).powf(-0.2)
}

impl Density for KernelDensity {
    fn ln_pdf(&self, y: f64) -> f64 {
        self.inner.ln_pdf(y)
    }

    fn cdf(&self, y: f64) -> f64 {
        self.inner.cdf(y)
    }

    fn sample(&self, rng: &mut dyn RngCore) -> f64 {
        self.inner.sample(rng)
    }
}

/// `Σ_k w_k p_k`
#[derive(Debug)]
pub struct MixtureDensity {
    pub weights: WeightVector,
    pub components: Vec<Box<dyn Density>>,
}

impl MixtureDensity {
    pub fn new(weights: WeightVector, components: Vec<Box<dyn Density>>) -> Result<Self, ScoreError> {
        if weights.len() != components.len() {
            return Err(ScoreError::ComponentCount {
                weights: weights.len(),
                components: components.len(),
            });
        }
        Ok(Self {
            weights,
            components,
        })
    }

    pub fn ln_pdf(&self, y: f64) -> f64 {
        let terms: Vec<f64> = self
            .weights
            .as_slice()
            .iter()
            .zip(&self.components)
            .filter(|(&w, _)| w > 0.0)
            .map(|(&w, c)| w.ln() + c.ln_pdf(y))
            .collect();
        log_sum_exp(&terms)
    }

    pub fn pdf(&self, y: f64) -> f64 {
        self.ln_pdf(y).exp()
    }

    pub fn cdf(&self, y: f64) -> f64 {
        self.weights
            .as_slice()
            .iter()
            .zip(&self.components)
            .filter(|(&w, _)| w > 0.0)
            .map(|(&w, c)| w * c.cdf(y))
            .sum()
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = 0;
        for (k, &w) in self.weights.as_slice().iter().enumerate() {
            if w > 0.0 {
                pick = k;
                acc += w;
                if u < acc {
                    break;
                }
            }
        }
        self.components[pick].sample(rng)
    }
}

/// Evenly spaced quadrature grid `lo, ..., hi` with `points` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Grid {
    pub fn new(lo: f64, hi: f64, points: usize) -> Result<Self, ScoreError> {
        let g = Self { lo, hi, points };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), ScoreError> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(ScoreError::InvalidGrid(format!(
                "need finite lo < hi, got {}:{}",
                self.lo, self.hi
            )));
        }
        if self.points < MIN_GRID_POINTS {
            return Err(ScoreError::InvalidGrid(format!(
                "need at least {MIN_GRID_POINTS} points, got {}",
                self.points
            )));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.points - 1) as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        let h = self.step();
        (0..self.points).map(|j| self.lo + h * j as f64).collect()
    }
}

impl std::str::FromStr for Grid {
    type Err = ScoreError;

    /// Parses `LO:HI:N`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ScoreError::InvalidGrid(format!("expected LO:HI:N, got {s:?}"));
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let lo = parts[0].trim().parse().map_err(|_| bad())?;
        let hi = parts[1].trim().parse().map_err(|_| bad())?;
        let points = parts[2].trim().parse().map_err(|_| bad())?;
        Grid::new(lo, hi, points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreRule {
    Log,
    Quadratic,
    Crps,
    Energy,
}

impl std::str::FromStr for ScoreRule {
    type Err = ScoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "log" => Ok(Self::Log),
            "quadratic" => Ok(Self::Quadratic),
            "crps" => Ok(Self::Crps),
            "energy" => Ok(Self::Energy),
            other => Err(ScoreError::UnknownRule(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreSpec {
    pub rule: ScoreRule,
    /// Energy-score exponent.
    pub beta: f64,
    pub grid: Grid,
}

impl ScoreSpec {
    pub fn validate(&self) -> Result<(), ScoreError> {
        if !(self.beta > 0.0 && self.beta <= 2.0) {
            return Err(ScoreError::InvalidBeta(self.beta));
        }
        self.grid.validate()
    }

    /// Scores one observation. The energy score draws `draws` samples from
    /// the mixture using `rng`; the other rules ignore both.
    pub fn score(
        &self,
        mix: &MixtureDensity,
        y: f64,
        draws: usize,
        rng: &mut dyn RngCore,
    ) -> Result<f64, ScoreError> {
        self.validate()?;
        match self.rule {
            ScoreRule::Log => Ok(log_score(mix, y)),
            ScoreRule::Quadratic => quadratic_score(mix, y, &self.grid),
            ScoreRule::Crps => crps(mix, y, &self.grid),
            ScoreRule::Energy => {
                let sample: Vec<f64> = (0..draws).map(|_| mix.sample(rng)).collect();
                energy_score(&sample, y, self.beta)
            }
        }
    }
}

/// `log p(y)`; `-inf` when the mixture has no mass at `y`.
pub fn log_score(mix: &MixtureDensity, y: f64) -> f64 {
    mix.ln_pdf(y)
}

fn check_coverage(mix: &MixtureDensity, grid: &Grid) -> Result<(), ScoreError> {
    let mass = mix.cdf(grid.hi) - mix.cdf(grid.lo);
    let dens: Vec<f64> = grid.nodes().iter().map(|&x| mix.pdf(x)).collect();
    let quad = crate::math::trapezoid(&dens, grid.step());
    let mass = mass.min(quad);
    if mass < 1.0 - COVERAGE_TOL {
        return Err(ScoreError::GridCoverage {
            lo: grid.lo,
            hi: grid.hi,
            mass,
        });
    }
    Ok(())
}

/// `2 p(y) - ∫ p^2`
pub fn quadratic_score(mix: &MixtureDensity, y: f64, grid: &Grid) -> Result<f64, ScoreError> {
    grid.validate()?;
    check_coverage(mix, grid)?;
    let sq: Vec<f64> = grid.nodes().iter().map(|&x| mix.pdf(x).powi(2)).collect();
    Ok(2.0 * mix.pdf(y) - crate::math::trapezoid(&sq, grid.step()))
}

/// Trapezoid rule over arbitrary sorted nodes.
fn trapezoid_nodes(nodes: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    let vals: Vec<f64> = nodes.iter().map(|&x| f(x)).collect();
    nodes
        .windows(2)
        .zip(vals.windows(2))
        .map(|(x, v)| 0.5 * (x[1] - x[0]) * (v[0] + v[1]))
        .sum()
}

/// `-∫ (F(t) - 1{t >= y})^2 dt`
///
/// The integral is split at `y` so the indicator jump falls on a node. When
/// `y` lies outside the grid the domain is extended to it at the grid step.
pub fn crps(mix: &MixtureDensity, y: f64, grid: &Grid) -> Result<f64, ScoreError> {
    grid.validate()?;
    check_coverage(mix, grid)?;
    let h = grid.step();
    let lo = if y < grid.lo {
        grid.lo - ((grid.lo - y) / h).ceil() * h
    } else {
        grid.lo
    };
    let hi = if y > grid.hi {
        grid.hi + ((y - grid.hi) / h).ceil() * h
    } else {
        grid.hi
    };
    let count = ((hi - lo) / h).round() as usize + 1;
    let nodes: Vec<f64> = (0..count).map(|j| lo + h * j as f64).collect();
    let mut below: Vec<f64> = nodes.iter().copied().filter(|&t| t < y).collect();
    below.push(y);
    let mut above = vec![y];
    above.extend(nodes.iter().copied().filter(|&t| t > y));
    let left = trapezoid_nodes(&below, |t| mix.cdf(t).powi(2));
    let right = trapezoid_nodes(&above, |t| (1.0 - mix.cdf(t)).powi(2));
    Ok(-(left + right))
}

/// `½ E|Y - Y'|^β - E|Y - y|^β`, estimated from draws. Pairs are formed by
/// a cyclic shift of the draw sequence.
pub fn energy_score(draws: &[f64], y: f64, beta: f64) -> Result<f64, ScoreError> {
    if !(beta > 0.0 && beta <= 2.0) {
        return Err(ScoreError::InvalidBeta(beta));
    }
    let n = draws.len();
    if n < MIN_ENERGY_DRAWS {
        return Err(ScoreError::TooFewDraws(n));
    }
    let pair: f64 = (0..n)
        .map(|j| (draws[j] - draws[(j + 1) % n]).abs().powf(beta))
        .sum::<f64>()
        / n as f64;
    let obs: f64 = draws.iter().map(|d| (d - y).abs().powf(beta)).sum::<f64>() / n as f64;
    Ok(0.5 * pair - obs)
}
