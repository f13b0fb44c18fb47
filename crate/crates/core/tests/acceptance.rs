//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use stackavg::psis::{loo_all, smooth_ratios};
use stackavg::simlab::{
    exact_loo_oracle, fit_linreg_mcmc, gen_gm, gm_loglik_matrices, grid_weight_oracle,
    run_gm_experiment, run_regression_experiment, GmConfig, LinRegPrior, RegConfig, RegMode,
};
use stackavg::weights::{
    bma, pseudo_bma, pseudo_bma_lognormal, pseudo_bma_plus, stack_logscore, stacking_objective,
};
use stackavg::{Manifest, ModelDrawMatrix, WeightVector};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn summary<'a>(r: &'a stackavg::simlab::GmReport, method: &str) -> &'a stackavg::simlab::MethodSummary {
    r.summaries.iter().find(|s| s.method == method).unwrap()
}

/// Monte Carlo standard error of a difference of two method means: the
/// per-method errors combined in quadrature.
fn se_of_difference(a: f64, b: f64) -> f64 {
    a.hypot(b)
}

fn gm_ordering() -> Outcome {
    let start = Instant::now();
    let r = run_gm_experiment(&GmConfig {
        n: 200,
        n_test: 200,
        reps: 100,
        seed: 1,
        ..GmConfig::default()
    })
    .unwrap();
    let elapsed = start.elapsed();
    let mut pass = elapsed < Duration::from_secs(300);
    let mut detail = format!("{:.1}s;", elapsed.as_secs_f64());
    let stacking = summary(&r, "stacking");
    for other in ["bma", "stack-means"] {
        let s = summary(&r, other);
        let (gap, paired) = s.lpd_gap_to_stacking.unwrap();
        let se = se_of_difference(stacking.test_lpd_se, s.test_lpd_se);
        pass &= gap > 2.0 * se;
        detail += &format!(" stacking - {other} = {gap:.4} (se {se:.4}, paired se {paired:.4});");
    }
    outcome(pass, detail)
}

fn gm_mse_parity() -> Outcome {
    let r = run_gm_experiment(&GmConfig {
        n: 200,
        n_test: 200,
        reps: 100,
        seed: 2,
        ..GmConfig::default()
    })
    .unwrap();
    let st = summary(&r, "stacking");
    let stacking = st.mse_mean;
    let means = summary(&r, "stack-means");
    let bma = summary(&r, "bma").mse_mean;
    let (gap, paired) = means.mse_gap_to_stacking.unwrap();
    let se = se_of_difference(st.mse_se, means.mse_se);
    let pass = gap.abs() < 2.0 * se && stacking < bma && means.mse_mean < bma;
    outcome(
        pass,
        format!(
            "mse stacking {stacking:.4}, stack-means {:.4}, bma {bma:.4}; |gap| {:.5} vs 2se {:.5} (paired se {paired:.5})",
            means.mse_mean,
            gap.abs(),
            2.0 * se
        ),
    )
}

fn duplicate_robustness() -> Outcome {
    let r = run_gm_experiment(&GmConfig {
        n: 15,
        reps: 100,
        duplicates_of_4: 10,
        seed: 3,
        ..GmConfig::default()
    })
    .unwrap();
    let drift = r
        .duplicate_rows
        .iter()
        .map(|d| d.stacking_drift)
        .fold(0.0, f64::max);
    let masses: Vec<f64> = r.duplicate_summaries.iter().map(|s| s.bma_group_mass_mean).collect();
    let monotone = masses.windows(2).all(|w| w[1] >= w[0]);
    let above = masses[1..].iter().all(|&m| m > masses[0]);
    let per_rep = (0..100).all(|rep| {
        let rows: Vec<_> = r.duplicate_rows.iter().filter(|d| d.rep == rep).collect();
        rows.windows(2).all(|w| w[1].bma_group_mass >= w[0].bma_group_mass)
    });
    outcome(
        drift < 0.02 && monotone && above && per_rep,
        format!(
            "max drift {drift:.2e}; bma group mass m=0 {:.3} -> m=10 {:.3}, nondecreasing {monotone}",
            masses[0], masses[10]
        ),
    )
}

fn bma_expected_weights() -> Outcome {
    let n = 10;
    let reps = 2000;
    let config = GmConfig {
        n,
        n_test: 1,
        ..GmConfig::default()
    };
    let means = config.model_means.clone();
    let mut avg = vec![0.0; means.len()];
    for rep in 0..reps {
        let (train, _) = gen_gm(&config, 10_000 + rep as u64).unwrap();
        let lm: Vec<f64> = gm_loglik_matrices(&train, &means)
            .iter()
            .map(|m| m.log_marginal.unwrap())
            .collect();
        let w = bma(&lm, &vec![1.0 / means.len() as f64; means.len()]).unwrap();
        for (a, v) in avg.iter_mut().zip(w.as_slice()) {
            *a += v / reps as f64;
        }
    }
    let law: Vec<f64> = means
        .iter()
        .map(|mu| (-(n as f64) * (mu - config.mu_true).powi(2) / 4.0).exp())
        .collect();
    let total: f64 = law.iter().sum();
    let err = avg
        .iter()
        .zip(&law)
        .map(|(a, l)| (a - l / total).abs())
        .fold(0.0, f64::max);
    outcome(
        err < 0.02,
        format!(
            "max |mean weight - law| = {err:.4}; mean weights {:?}",
            avg.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        ),
    )
}

fn psis_vs_exact() -> Outcome {
    let n = 50;
    let draws = 4000;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Array2::from_shape_fn((n, 1), |_| rng.sample::<f64, _>(StandardNormal));
    let y: Vec<f64> = x
        .column(0)
        .iter()
        .map(|xi| 0.8 * xi + rng.sample::<f64, _>(StandardNormal))
        .collect();
    let prior = LinRegPrior::default();
    let fit = fit_linreg_mcmc(&x, &y, &prior, draws, 50).unwrap();
    let manifest = Manifest::new(vec![fit.draws], 0, None).unwrap();
    let loo = loo_all(&manifest);
    let exact = exact_loo_oracle(&x, &y, &prior, draws, 51).unwrap();
    let psis = loo.loo_lpd.column(0);
    let max_k = loo.k_hat.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mad = psis.iter().zip(&exact).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64;
    let total_gap = (psis.sum() - exact.iter().sum::<f64>()).abs();
    outcome(
        max_k < 0.7 && mad < 0.05 && total_gap < 0.5,
        format!("max k_hat {max_k:.3}; mean |psis - exact| {mad:.4}; |elpd gap| {total_gap:.4}"),
    )
}

fn optimizer_oracle_gap() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_gap = f64::NEG_INFINITY;
    let mut worst_simplex: f64 = 0.0;
    for _ in 0..20 {
        let offsets: Vec<f64> = (0..3).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let lpd = Array2::from_shape_fn((25, 3), |(_, k)| {
            -1.0 + 0.3 * offsets[k] + rng.sample::<f64, _>(StandardNormal)
        });
        let sol = stack_logscore(&lpd).unwrap();
        let (_, best) = grid_weight_oracle(&lpd, 0.01).unwrap();
        let f = stacking_objective(&lpd, sol.weights.as_slice());
        worst_gap = worst_gap.max(best - f);
        let w = sol.weights.as_slice();
        let sum_err = (w.iter().sum::<f64>() - 1.0).abs();
        let neg = w.iter().map(|v| -v).fold(0.0, f64::max);
        worst_simplex = worst_simplex.max(sum_err).max(neg);
    }
    outcome(
        worst_gap < 1e-4 && worst_simplex <= 1e-8,
        format!("max (grid - optimizer) {worst_gap:.2e}; max simplex violation {worst_simplex:.1e}"),
    )
}

fn regression_reproduction() -> Outcome {
    let start = Instant::now();
    let r = run_regression_experiment(&RegConfig {
        n: 100,
        reps: 20,
        mode: RegMode::MOpenUnivariate,
        seed: 7,
        ..RegConfig::default()
    })
    .unwrap();
    let mut pass = true;
    let mut detail = format!("{:.1}s;", start.elapsed().as_secs_f64());
    let find = |m: &str| r.summaries.iter().find(|s| s.method == m).unwrap();
    let stacking = find("stacking");
    for other in ["pseudo-bma", "select-loo"] {
        let s = find(other);
        let (gap, paired) = s.lpd_gap_to_stacking.unwrap();
        let se = se_of_difference(stacking.test_lpd_se, s.test_lpd_se);
        pass &= gap >= -se;
        detail += &format!(" stacking - {other} = {gap:.4} (se {se:.4}, paired se {paired:.4});");
    }
    outcome(pass, detail)
}

fn pseudo_bma_plus_regularizes() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let instances = 50;
    let mut wins = 0;
    for inst in 0..instances {
        let offsets: Vec<f64> = (0..4).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
        let lpd = Array2::from_shape_fn((40, 4), |(_, k)| {
            -1.2 + offsets[k] + 0.5 * rng.sample::<f64, _>(StandardNormal)
        });
        let totals: Vec<f64> = lpd.sum_axis(ndarray::Axis(0)).to_vec();
        let plain = pseudo_bma(&totals).unwrap();
        let plus = pseudo_bma_plus(&lpd, 1000, inst as u64).unwrap();
        if plus.entropy() >= plain.entropy() {
            wins += 1;
        }
    }
    let frac = wins as f64 / instances as f64;
    outcome(frac >= 0.9, format!("Pseudo-BMA+ entropy >= Pseudo-BMA entropy in {wins}/{instances}"))
}

fn property_suites() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut failures = Vec::new();

    // per-point shift invariance of stacking
    for _ in 0..10 {
        let lpd = Array2::from_shape_fn((30, 4), |_| -1.0 + rng.sample::<f64, _>(StandardNormal));
        let shifts: Array1<f64> = (0..30).map(|_| 50.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let mut shifted = lpd.clone();
        for (mut row, c) in shifted.rows_mut().into_iter().zip(&shifts) {
            row += *c;
        }
        let a = stack_logscore(&lpd).unwrap();
        let b = stack_logscore(&shifted).unwrap();
        let diff = a
            .weights
            .as_slice()
            .iter()
            .zip(b.weights.as_slice())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        let obj_shift = b.objective - a.objective - shifts.mean().unwrap();
        if diff >= 1e-6 || obj_shift.abs() > 1e-8 {
            failures.push(format!("stacking shift: weight diff {diff:.2e}"));
        }
    }

    // softmax shift invariance and lognormal with zero se
    for _ in 0..10 {
        let elpd: Vec<f64> = (0..5).map(|_| -100.0 + 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let base = pseudo_bma(&elpd).unwrap();
        let shifted: Vec<f64> = elpd.iter().map(|v| v + 100.0).collect();
        if !close(&base, &pseudo_bma(&shifted).unwrap(), 1e-12) {
            failures.push("pseudo-bma shift".into());
        }
        if !close(&base, &pseudo_bma_lognormal(&elpd, &[0.0; 5]).unwrap(), 0.0) {
            failures.push("lognormal zero se".into());
        }
    }

    // truncation cap
    for s in [30, 100, 1000, 4000] {
        let log_r: Vec<f64> = (0..s).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let sm = smooth_ratios(&log_r);
        let raw_max = sm.raw_log_r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w_max = sm.log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if w_max > raw_max {
            failures.push(format!("truncation cap at S={s}"));
        }
    }

    // constant-likelihood fixed point
    for s in [1, 10, 25, 1000] {
        let loglik = Array2::from_shape_fn((s, 3), |(_, i)| -0.5 - i as f64);
        let m = Manifest::new(vec![ModelDrawMatrix::new("flat", loglik)], 0, None).unwrap();
        let loo = loo_all(&m);
        for i in 0..3 {
            if loo.loo_lpd[[i, 0]] != -0.5 - i as f64 || !(loo.k_hat[[i, 0]] <= 0.7) {
                failures.push(format!("constant likelihood S={s} point {i}"));
            }
        }
        if !loo.khat_warnings.is_empty() {
            failures.push(format!("constant likelihood S={s} warned"));
        }
    }

    // determinism under fixed seeds
    let lpd = Array2::from_shape_fn((40, 4), |_| -1.0 + rng.sample::<f64, _>(StandardNormal));
    let a = pseudo_bma_plus(&lpd, 500, 11).unwrap();
    let b = pseudo_bma_plus(&lpd, 500, 11).unwrap();
    if a.as_slice() != b.as_slice() {
        failures.push("pseudo-bma-plus determinism".into());
    }
    if stack_logscore(&lpd).unwrap() != stack_logscore(&lpd).unwrap() {
        failures.push("stacking determinism".into());
    }
    let small = GmConfig {
        n: 12,
        n_test: 20,
        reps: 4,
        bb_samples: 100,
        seed: 12,
        ..GmConfig::default()
    };
    if run_gm_experiment(&small).unwrap() != run_gm_experiment(&small).unwrap() {
        failures.push("experiment determinism".into());
    }

    let pass = failures.is_empty();
    let detail = if pass {
        "stacking shift, softmax shift, lognormal zero se, truncation cap, constant likelihood, determinism".into()
    } else {
        failures.join("; ")
    };
    outcome(pass, detail)
}

fn close(a: &WeightVector, b: &WeightVector, tol: f64) -> bool {
    a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| (x - y).abs() <= tol)
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gm ordering, n=200", gm_ordering),
        ("gm mse parity, n=200", gm_mse_parity),
        ("duplicate-model robustness, n=15", duplicate_robustness),
        ("bma expected-weight law, n=10", bma_expected_weights),
        ("psis vs exact loo", psis_vs_exact),
        ("optimizer vs grid oracle", optimizer_oracle_gap),
        ("regression m-open reproduction", regression_reproduction),
        ("pseudo-bma+ regularization", pseudo_bma_plus_regularizes),
        ("property suites", property_suites),
    ];
    let mut failed = 0;
    for (idx, (name, run)) in criteria.iter().enumerate() {
        let (pass, detail) = match catch_unwind(AssertUnwindSafe(run)) {
            Ok(o) => (o.pass, o.detail),
            Err(_) => (false, "panicked".to_string()),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {}: {} {name}: {detail}",
            idx + 1,
            if pass { "PASS" } else { "FAIL" }
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
