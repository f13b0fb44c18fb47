//! Gaussian-candidates experiment: data from `N(mu_true, sigma_true)`,
//! candidate models `N(μ_k, 1)` with no free parameters.

use ndarray::Array2;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{mean_se, rep_rng, summarize, MethodSummary, RepRow, SimError};
use crate::math::{log_sum_exp, normal_ln_pdf};
use crate::model::{Manifest, ModelDrawMatrix};
use crate::psis::loo_all;
use crate::weights::{combine_predictive, Method, WeightInputs, DEFAULT_BB_SAMPLES, MIN_BB_SAMPLES};

const METHODS: [Method; 5] = [
    Method::Stacking,
    Method::StackMeans,
    Method::Bma,
    Method::PseudoBma,
    Method::PseudoBmaPlus,
];

/// Mean of the candidate that gets duplicated in the robustness study.
const DUPLICATED_MEAN: f64 = 4.0;
const DRIFT_GRID: (f64, f64, usize) = (-2.0, 0.05, 241);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmConfig {
    pub mu_true: f64,
    pub sigma_true: f64,
    pub model_means: Vec<f64>,
    pub n: usize,
    pub n_test: usize,
    pub reps: usize,
    /// Extra copies of the `N(4, 1)` candidate for the robustness study.
    pub duplicates_of_4: usize,
    pub seed: u64,
    pub bb_samples: usize,
}

impl Default for GmConfig {
    fn default() -> Self {
        Self {
            mu_true: 3.4,
            sigma_true: 1.0,
            model_means: (1..=8).map(f64::from).collect(),
            n: 20,
            n_test: 200,
            reps: 100,
            duplicates_of_4: 0,
            seed: 0,
            bb_samples: DEFAULT_BB_SAMPLES,
        }
    }
}

impl GmConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: &str| Err(SimError::Config(msg.to_string()));
        if self.n == 0 || self.n_test == 0 || self.reps == 0 {
            return bad("n, n_test and reps must be positive");
        }
        if self.model_means.is_empty() || self.model_means.iter().any(|m| !m.is_finite()) {
            return bad("model_means must be a nonempty list of finite values");
        }
        if !self.mu_true.is_finite() || !(self.sigma_true > 0.0 && self.sigma_true.is_finite()) {
            return bad("mu_true must be finite and sigma_true positive");
        }
        if self.bb_samples < MIN_BB_SAMPLES {
            return bad("bb_samples must be at least 100");
        }
        if self.duplicates_of_4 > 0 && !self.model_means.contains(&DUPLICATED_MEAN) {
            return bad("duplicates_of_4 needs a candidate with mean 4");
        }
        Ok(())
    }

    fn draw(&self, rng: &mut dyn RngCore) -> (Vec<f64>, Vec<f64>) {
        let dist = Normal::new(self.mu_true, self.sigma_true).expect("validated sigma_true");
        let train = (0..self.n).map(|_| rng.sample(dist)).collect();
        let test = (0..self.n_test).map(|_| rng.sample(dist)).collect();
        (train, test)
    }
}

/// Training and test draws from `N(mu_true, sigma_true)`.
pub fn gen_gm(config: &GmConfig, seed: u64) -> Result<(Vec<f64>, Vec<f64>), SimError> {
    config.validate()?;
    Ok(config.draw(&mut ChaCha8Rng::seed_from_u64(seed)))
}

fn model_id(mu: f64, copy: usize) -> String {
    if copy == 0 {
        format!("mu_{mu}")
    } else {
        format!("mu_{mu}_copy{copy}")
    }
}

/// One draw per model: `log N(y_i | μ_k, 1)`, with the exact log marginal
/// and the constant predictive mean `μ_k`.
pub fn gm_loglik_matrices(y: &[f64], model_means: &[f64]) -> Vec<ModelDrawMatrix> {
    let mut seen: Vec<f64> = Vec::new();
    model_means
        .iter()
        .map(|&mu| {
            let copy = seen.iter().filter(|&&m| m == mu).count();
            seen.push(mu);
            let row: Vec<f64> = y.iter().map(|&yi| normal_ln_pdf(yi, mu, 1.0)).collect();
            let log_marginal = row.iter().sum();
            let n = y.len();
            ModelDrawMatrix::new(
                model_id(mu, copy),
                Array2::from_shape_vec((1, n), row).expect("1 x n shape"),
            )
            .with_pred_mean(Array2::from_elem((1, n), mu))
            .with_log_marginal(log_marginal)
        })
        .collect()
}

fn test_log_density(test: &[f64], means: &[f64]) -> Array2<f64> {
    Array2::from_shape_fn((test.len(), means.len()), |(j, k)| normal_ln_pdf(test[j], means[k], 1.0))
}

fn mixture_mean(w: &[f64], means: &[f64]) -> f64 {
    w.iter().zip(means).map(|(w, m)| w * m).sum()
}

/// Stacking and BMA weights after adding `m` copies of the `N(4, 1)` model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicateRow {
    pub m: usize,
    pub rep: usize,
    /// Total weight on the original `N(4, 1)` and its copies.
    pub bma_group_mass: f64,
    pub stacking_group_mass: f64,
    /// Largest absolute change of the stacked mixture log density on the
    /// evaluation grid relative to `m = 0`.
    pub stacking_drift: f64,
    pub stacking_test_lpd: f64,
    pub bma_test_lpd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicateSummary {
    pub m: usize,
    pub bma_group_mass_mean: f64,
    pub stacking_group_mass_mean: f64,
    pub stacking_drift_max: f64,
    pub stacking_drift_mean: f64,
    pub stacking_test_lpd_mean: f64,
    pub bma_test_lpd_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GmReport {
    pub config: GmConfig,
    pub model_ids: Vec<String>,
    pub summaries: Vec<MethodSummary>,
    pub rows: Vec<RepRow>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub duplicate_summaries: Vec<DuplicateSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub duplicate_rows: Vec<DuplicateRow>,
}

struct RepOutput {
    rows: Vec<RepRow>,
    weights: Vec<Vec<f64>>,
    duplicates: Vec<DuplicateRow>,
}

fn weights_for(
    means: &[f64],
    train: &[f64],
    methods: &[Method],
    config: &GmConfig,
    bb_seed: u64,
) -> Result<Vec<Vec<f64>>, SimError> {
    let manifest = Manifest::new(gm_loglik_matrices(train, means), bb_seed, None)?;
    let loo = loo_all(&manifest);
    let inputs = WeightInputs {
        manifest: &manifest,
        loo: &loo,
        y: Some(train),
        bb_samples: config.bb_samples,
        seed: bb_seed,
    };
    methods
        .iter()
        .map(|&m| Ok(inputs.compute(m)?.weights.into_vec()))
        .collect()
}

fn mean_test_lpd(w: &[f64], test_dens: &Array2<f64>) -> Result<f64, SimError> {
    let wv = crate::model::WeightVector::new(w.to_vec()).map_err(crate::weights::WeightError::from)?;
    let lpd = combine_predictive(&wv, test_dens)?;
    Ok(lpd.iter().sum::<f64>() / lpd.len() as f64)
}

fn run_rep(config: &GmConfig, rep: usize) -> Result<RepOutput, SimError> {
    let mut rng = rep_rng(config.seed, rep);
    let (train, test) = config.draw(&mut rng);
    let bb_seed = rng.next_u64();
    let means = &config.model_means;

    let weights = weights_for(means, &train, &METHODS, config, bb_seed)?;
    let test_dens = test_log_density(&test, means);
    let mut rows = Vec::with_capacity(METHODS.len());
    for (method, w) in METHODS.iter().zip(&weights) {
        let center = mixture_mean(w, means);
        let mse = test.iter().map(|t| (t - center).powi(2)).sum::<f64>() / test.len() as f64;
        rows.push(RepRow {
            method: method.name().to_string(),
            n: config.n,
            rep,
            test_lpd: mean_test_lpd(w, &test_dens)?,
            mse,
            test_lpd_per_n: None,
        });
    }

    let duplicates = if config.duplicates_of_4 > 0 {
        duplicate_study(config, rep, &train, &test, bb_seed)?
    } else {
        Vec::new()
    };
    Ok(RepOutput {
        rows,
        weights,
        duplicates,
    })
}

fn duplicate_study(
    config: &GmConfig,
    rep: usize,
    train: &[f64],
    test: &[f64],
    bb_seed: u64,
) -> Result<Vec<DuplicateRow>, SimError> {
    let (lo, step, points) = DRIFT_GRID;
    let grid: Vec<f64> = (0..points).map(|g| lo + step * g as f64).collect();
    let mixture_on_grid = |w: &[f64], means: &[f64]| -> Vec<f64> {
        grid.iter()
            .map(|&x| {
                let terms: Vec<f64> = w
                    .iter()
                    .zip(means)
                    .filter(|(w, _)| **w > 0.0)
                    .map(|(w, mu)| w.ln() + normal_ln_pdf(x, *mu, 1.0))
                    .collect();
                log_sum_exp(&terms)
            })
            .collect()
    };

    let mut base: Option<Vec<f64>> = None;
    let mut out = Vec::with_capacity(config.duplicates_of_4 + 1);
    for m in 0..=config.duplicates_of_4 {
        let mut means = config.model_means.clone();
        means.extend(std::iter::repeat_n(DUPLICATED_MEAN, m));
        let w = weights_for(&means, train, &[Method::Stacking, Method::Bma], config, bb_seed)?;
        let group = |w: &[f64]| -> f64 {
            w.iter()
                .zip(&means)
                .filter(|(_, mu)| **mu == DUPLICATED_MEAN)
                .map(|(w, _)| w)
                .sum()
        };
        let curve = mixture_on_grid(&w[0], &means);
        let drift = match &base {
            None => 0.0,
            Some(b) => b.iter().zip(&curve).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max),
        };
        if base.is_none() {
            base = Some(curve);
        }
        let test_dens = test_log_density(test, &means);
        out.push(DuplicateRow {
            m,
            rep,
            bma_group_mass: group(&w[1]),
            stacking_group_mass: group(&w[0]),
            stacking_drift: drift,
            stacking_test_lpd: mean_test_lpd(&w[0], &test_dens)?,
            bma_test_lpd: mean_test_lpd(&w[1], &test_dens)?,
        });
    }
    Ok(out)
}

/// Replicated comparison of stacking, stacking of means, BMA, Pseudo-BMA and
/// Pseudo-BMA+ on Gaussian candidates, plus the duplicate-model study when
/// `duplicates_of_4 > 0`.
pub fn run_gm_experiment(config: &GmConfig) -> Result<GmReport, SimError> {
    config.validate()?;
    let outputs: Vec<RepOutput> = (0..config.reps)
        .into_par_iter()
        .map(|rep| run_rep(config, rep))
        .collect::<Result<_, _>>()?;

    let rows: Vec<RepRow> = outputs.iter().flat_map(|o| o.rows.iter().cloned()).collect();
    let weights: Vec<Vec<Vec<f64>>> = outputs.iter().map(|o| o.weights.clone()).collect();
    let summaries = summarize(&METHODS, &rows, &weights);

    let duplicate_rows: Vec<DuplicateRow> = outputs.into_iter().flat_map(|o| o.duplicates).collect();
    let duplicate_summaries = if duplicate_rows.is_empty() {
        Vec::new()
    } else {
        (0..=config.duplicates_of_4)
            .map(|m| {
                let sel: Vec<&DuplicateRow> = duplicate_rows.iter().filter(|r| r.m == m).collect();
                let col = |f: fn(&DuplicateRow) -> f64| sel.iter().map(|r| f(r)).collect::<Vec<_>>();
                let drift = col(|r| r.stacking_drift);
                DuplicateSummary {
                    m,
                    bma_group_mass_mean: mean_se(&col(|r| r.bma_group_mass)).0,
                    stacking_group_mass_mean: mean_se(&col(|r| r.stacking_group_mass)).0,
                    stacking_drift_max: drift.iter().copied().fold(0.0, f64::max),
                    stacking_drift_mean: mean_se(&drift).0,
                    stacking_test_lpd_mean: mean_se(&col(|r| r.stacking_test_lpd)).0,
                    bma_test_lpd_mean: mean_se(&col(|r| r.bma_test_lpd)).0,
                }
            })
            .collect()
    };

    Ok(GmReport {
        config: config.clone(),
        model_ids: gm_loglik_matrices(&[0.0], &config.model_means)
            .into_iter()
            .map(|m| m.model_id)
            .collect(),
        summaries,
        rows,
        duplicate_summaries,
        duplicate_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::HALF_LN_2PI;

    fn small(reps: usize) -> GmConfig {
        GmConfig {
            n: 10,
            n_test: 20,
            reps,
            bb_samples: 100,
            ..GmConfig::default()
        }
    }

    #[test]
    fn gen_gm_is_reproducible() {
        let c = GmConfig { n: 3, ..GmConfig::default() };
        let (a, t) = gen_gm(&c, 1).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(t.len(), 200);
        assert!(a.iter().all(|v| v.is_finite()));
        assert_eq!(gen_gm(&c, 1).unwrap().0, a);
    }

    #[test]
    fn gen_gm_moments() {
        let c = GmConfig { n: 1_000_000, n_test: 1, ..GmConfig::default() };
        let (y, _) = gen_gm(&c, 5).unwrap();
        let (m, _) = mean_se(&y);
        let sd = (y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / y.len() as f64).sqrt();
        assert!((m - 3.4).abs() < 0.01);
        assert!((sd - 1.0).abs() < 0.01);
    }

    #[test]
    fn loglik_entries() {
        let mats = gm_loglik_matrices(&[3.4], &[3.0, 3.4]);
        assert_eq!(mats[0].loglik.dim(), (1, 1));
        assert!((mats[0].loglik[[0, 0]] + 0.998_938_5).abs() < 1e-7);
        assert!((mats[1].loglik[[0, 0]] + HALF_LN_2PI).abs() < 1e-15);
        assert_eq!(mats[0].log_marginal, Some(mats[0].loglik[[0, 0]]));
    }

    #[test]
    fn duplicate_ids_are_unique() {
        let mats = gm_loglik_matrices(&[1.0], &[4.0, 4.0, 4.0]);
        let ids: Vec<_> = mats.iter().map(|m| m.model_id.as_str()).collect();
        assert_eq!(ids, ["mu_4", "mu_4_copy1", "mu_4_copy2"]);
    }

    #[test]
    fn psis_is_exact_for_single_draws() {
        let y = [2.0, 3.5, 5.1];
        let manifest = Manifest::new(gm_loglik_matrices(&y, &[1.0, 4.0]), 0, None).unwrap();
        let loo = loo_all(&manifest);
        for (i, &yi) in y.iter().enumerate() {
            for (k, mu) in [1.0, 4.0].into_iter().enumerate() {
                assert!((loo.loo_lpd[[i, k]] - normal_ln_pdf(yi, mu, 1.0)).abs() < 1e-12);
                assert_eq!(loo.k_hat[[i, k]], 0.0);
            }
        }
    }

    #[test]
    fn smoke_report_schema() {
        let r = run_gm_experiment(&small(1)).unwrap();
        assert_eq!(r.rows.len(), METHODS.len());
        assert_eq!(r.summaries.len(), METHODS.len());
        assert!(r.duplicate_rows.is_empty());
        let json = serde_json::to_value(&r).unwrap();
        assert!(json.get("summaries").is_some());
        assert!(json.get("duplicate_rows").is_none());
    }

    #[test]
    fn report_is_deterministic() {
        let a = run_gm_experiment(&small(3)).unwrap();
        let b = run_gm_experiment(&small(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_duplicates_reduce_to_base() {
        let mut c = small(2);
        let base = run_gm_experiment(&c).unwrap();
        c.duplicates_of_4 = 2;
        let dup = run_gm_experiment(&c).unwrap();
        assert_eq!(base.rows, dup.rows);
        let m0: Vec<_> = dup.duplicate_rows.iter().filter(|r| r.m == 0).collect();
        assert_eq!(m0.len(), 2);
        assert!(m0.iter().all(|r| r.stacking_drift == 0.0));
    }

    #[test]
    fn bma_concentrates_for_large_n() {
        let c = GmConfig {
            n: 2000,
            n_test: 10,
            reps: 3,
            bb_samples: 100,
            ..GmConfig::default()
        };
        let r = run_gm_experiment(&c).unwrap();
        let bma = r.summaries.iter().find(|s| s.method == "bma").unwrap();
        assert!(bma.mean_weights[2] > 0.99, "{:?}", bma.mean_weights);
    }

    #[test]
    fn rejects_bad_config() {
        let mut c = small(1);
        c.model_means.clear();
        assert!(run_gm_experiment(&c).is_err());
        let c = GmConfig { duplicates_of_4: 1, model_means: vec![1.0, 2.0], ..small(1) };
        assert!(run_gm_experiment(&c).is_err());
    }
}
