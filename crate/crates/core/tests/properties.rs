use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use relapse_core::matrix::Matrix;
use relapse_core::metrics::{pr_auc, pr_baseline, roc_auc};
use relapse_core::models::{train_forest, train_logistic, ForestParams, LogisticParams};
use relapse_core::split::{kfold_indices, stratified_split_indices};

fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (3usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(0u8..8, n).prop_map(|v| v.into_iter().map(f64::from).collect()),
            prop::collection::vec(any::<bool>(), n),
        )
            .prop_filter("both classes", |(_, y)| y.iter().any(|&b| b) && y.iter().any(|&b| !b))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn auc_in_unit_interval_and_rank_invariant((s, y) in scored_labels()) {
        let a = roc_auc(&s, &y).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        // any strictly increasing transform leaves the ranking alone
        let t: Vec<f64> = s.iter().map(|v| (v * 0.3).exp() - 4.0).collect();
        prop_assert_eq!(roc_auc(&t, &y).unwrap(), a);
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        assert_abs_diff_eq!(roc_auc(&neg, &y).unwrap(), 1.0 - a, epsilon = 1e-12);
        let flipped: Vec<bool> = y.iter().map(|b| !b).collect();
        assert_abs_diff_eq!(roc_auc(&s, &flipped).unwrap(), 1.0 - a, epsilon = 1e-12);
    }

    #[test]
    fn constant_scores_give_chance((s, y) in scored_labels()) {
        let flat = vec![0.5; s.len()];
        prop_assert_eq!(roc_auc(&flat, &y).unwrap(), 0.5);
        assert_abs_diff_eq!(pr_auc(&flat, &y).unwrap(), pr_baseline(&y).unwrap(), epsilon = 1e-12);
        let ap = pr_auc(&s, &y).unwrap();
        prop_assert!(ap > 0.0 && ap <= 1.0);
    }

    #[test]
    fn split_and_folds_partition_rows((_, y) in scored_labels(), seed in any::<u64>(), k in 2usize..4) {
        if let Ok((train, test)) = stratified_split_indices(&y, 0.3, seed) {
            let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..y.len()).collect::<Vec<_>>());
        }
        if let Ok(folds) = kfold_indices(&y, k, seed) {
            prop_assert_eq!(folds.len(), k);
            let mut all: Vec<usize> = folds.concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..y.len()).collect::<Vec<_>>());
            let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn forest_outputs_are_probabilities((s, y) in scored_labels(), seed in 0u64..1000) {
        let rows: Vec<Vec<f64>> = s.iter().enumerate().map(|(i, v)| vec![*v, (i % 5) as f64]).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let params = ForestParams { n_estimators: 8, min_samples_leaf: 2, ..ForestParams::default() };
        let f = train_forest(&x, &y, &params, seed).unwrap();
        assert_abs_diff_eq!(f.importances.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        let p = relapse_core::models::predict_proba_forest(&f, &x).unwrap();
        prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn stronger_penalty_never_grows_weights((s, y) in scored_labels()) {
        let rows: Vec<Vec<f64>> = s.iter().enumerate().map(|(i, v)| vec![*v - 3.5, ((i * 7) % 11) as f64 / 5.0 - 1.0]).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let norm = |c: f64| {
            let m = train_logistic(&x, &y, &LogisticParams::with_c(c)).unwrap();
            m.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
        };
        prop_assert!(norm(0.1) <= norm(1.0) + 1e-9);
    }
}
