use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use stackavg::psis::loo_all;
use stackavg::simlab::{exact_loo_oracle, fit_linreg_mcmc, LinRegPrior};
use stackavg::Manifest;

fn toy(seed: u64, n: usize) -> (Array2<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((n, 2), |_| rng.sample::<f64, _>(StandardNormal));
    let y = x
        .rows()
        .into_iter()
        .map(|r| 0.5 * r[0] - 0.3 * r[1] + rng.sample::<f64, _>(StandardNormal))
        .collect();
    (x, y)
}

#[test]
fn psis_tracks_exact_loo_on_two_covariates() {
    let (x, y) = toy(21, 30);
    let prior = LinRegPrior::default();
    let fit = fit_linreg_mcmc(&x, &y, &prior, 3000, 1).unwrap();
    let loo = loo_all(&Manifest::new(vec![fit.draws], 0, None).unwrap());
    let exact = exact_loo_oracle(&x, &y, &prior, 3000, 2).unwrap();
    let mut abs_sum = 0.0;
    for (i, e) in exact.iter().enumerate() {
        let gap = (loo.loo_lpd[[i, 0]] - e).abs();
        abs_sum += gap;
        // points with k_hat in (0.5, 0.7) can carry larger pointwise error
        if loo.k_hat[[i, 0]] < 0.5 {
            assert!(gap < 0.05, "point {i}: gap {gap}, k_hat {}", loo.k_hat[[i, 0]]);
        }
    }
    assert!(abs_sum / (exact.len() as f64) < 0.05);
    assert!(loo.elpd[0].p_loo > 1.0 && loo.elpd[0].p_loo < 6.0, "p_loo {}", loo.elpd[0].p_loo);
}

#[test]
fn loo_is_thread_count_independent() {
    let (x, y) = toy(22, 40);
    let fit = fit_linreg_mcmc(&x, &y, &LinRegPrior::default(), 500, 3).unwrap();
    let m = Manifest::new(vec![fit.draws], 0, None).unwrap();
    let many = loo_all(&m);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let one = pool.install(|| loo_all(&m));
    assert_eq!(many.loo_lpd, one.loo_lpd);
    assert_eq!(many.k_hat, one.k_hat);
}
