use ndarray::Array2;
use proptest::prelude::*;

use stackavg::io::{load_manifest, save_manifest};
use stackavg::{Manifest, ModelDrawMatrix};

fn manifest_strategy() -> impl Strategy<Value = Manifest> {
    (1usize..4, 1usize..6, 1usize..5, any::<u64>(), any::<bool>())
        .prop_flat_map(|(k, s, n, seed, with_prior)| {
            let cells = proptest::collection::vec(-1e6f64..1e3, k * s * n);
            let means = proptest::collection::vec(proptest::option::of(-50f64..50.0), k);
            let marg = proptest::collection::vec(proptest::option::of(-1e4f64..0.0), k);
            let prior = proptest::collection::vec(0.01f64..1.0, k);
            (Just((k, s, n, seed, with_prior)), cells, means, marg, prior)
        })
        .prop_map(|((k, s, n, seed, with_prior), cells, means, marg, prior)| {
            let models = (0..k)
                .map(|j| {
                    let ll = Array2::from_shape_vec((s, n), cells[j * s * n..(j + 1) * s * n].to_vec())
                        .unwrap();
                    let mut m = ModelDrawMatrix::new(format!("m{j}"), ll);
                    if let Some(mu) = means[j] {
                        m = m.with_pred_mean(Array2::from_elem((s, n), mu));
                    }
                    m.log_marginal = marg[j];
                    m
                })
                .collect();
            let prior = with_prior.then(|| {
                let t: f64 = prior.iter().sum();
                prior.iter().map(|p| p / t).collect()
            });
            Manifest::new(models, seed, prior).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn save_then_load_is_identity(m in manifest_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        save_manifest(&m, &path).unwrap();
        let back = load_manifest(&path).unwrap();
        prop_assert_eq!(back, m);
    }
}

#[test]
fn model_order_is_preserved_in_weights() {
    let models = ["c", "a", "b"]
        .iter()
        .enumerate()
        .map(|(j, id)| ModelDrawMatrix::new(*id, Array2::from_elem((1, 4), -1.0 - j as f64)))
        .collect();
    let m = Manifest::new(models, 0, None).unwrap();
    assert_eq!(m.model_ids(), ["c", "a", "b"]);
    let loo = stackavg::loo_all(&m);
    let w = stackavg::weights::pseudo_bma(&loo.elpd_totals()).unwrap();
    assert!(w[0] > w[1] && w[1] > w[2]);
}
