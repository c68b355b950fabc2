//! Randomized property tests for cross-cutting invariants.

use gennape::fcm::{fcm_membership, FcmModel};
use gennape::metrics::{fractional_ranks, kendall_tau, normalized_rank_scores, srcc};
use gennape::predictor::{fit_transform_stats, inverse_transform, transform_label};
use gennape::spectral::softmax;
use proptest::prelude::*;

fn finite_vec(len: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e3..1e3f64, len)
}

proptest! {
    #[test]
    fn memberships_are_a_distribution(
        x in finite_vec(2..=4),
        centroids in prop::collection::vec(finite_vec(4..=4), 2..=6),
        m in 1.2..5.0f64,
    ) {
        let centroids: Vec<Vec<f64>> =
            centroids.into_iter().map(|c| c[..4.min(c.len())].to_vec()).collect();
        let d = centroids[0].len().min(x.len());
        let model = FcmModel {
            centroids: centroids.iter().map(|c| c[..d].to_vec()).collect(),
            m,
        };
        let u = fcm_membership(&x[..d], &model);
        prop_assert_eq!(u.len(), model.centroids.len());
        let sum: f64 = u.iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-9);
        prop_assert!(u.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn rank_metrics_ignore_monotone_rescaling(
        preds in finite_vec(3..=40),
        labels_seed in finite_vec(3..=40),
    ) {
        let n = preds.len().min(labels_seed.len());
        let (preds, labels) = (&preds[..n], &labels_seed[..n]);
        let warped: Vec<f64> = preds.iter().map(|&v| (v / 500.0).tanh() * 3.0 + 10.0).collect();
        if let (Ok(a), Ok(b)) = (srcc(preds, labels), srcc(&warped, labels)) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
        if let (Ok(a), Ok(b)) = (kendall_tau(preds, labels), kendall_tau(&warped, labels)) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn fractional_ranks_are_conserved(xs in finite_vec(1..=50)) {
        let ranks = fractional_ranks(&xs);
        let n = xs.len() as f64;
        // ranks always sum to n(n+1)/2 regardless of ties
        let sum: f64 = ranks.iter().sum();
        prop_assert!((sum - n * (n + 1.0) / 2.0).abs() <= 1e-9);
        prop_assert!(ranks.iter().all(|&r| (1.0..=n).contains(&r)));
    }

    #[test]
    fn normalized_rank_scores_stay_in_unit_interval(xs in finite_vec(2..=50)) {
        let scores = normalized_rank_scores(&xs);
        prop_assert!(scores.iter().all(|&s| (0.0..=1.0).contains(&s)));
    }

    #[test]
    fn label_transform_round_trips(
        accs in prop::collection::vec(1.0..100.0f64, 3..=50),
        flops in prop::collection::vec(0.0..100.0f64, 3..=50),
    ) {
        let n = accs.len().min(flops.len());
        let (accs, flops) = (&accs[..n], &flops[..n]);
        if let Ok(stats) = fit_transform_stats(accs, flops) {
            for (&a, &f) in accs.iter().zip(flops) {
                let y = transform_label(a, f, &stats);
                prop_assert!((inverse_transform(y, f, &stats) - a).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn softmax_is_a_shift_invariant_distribution(
        scores in finite_vec(1..=10),
        shift in -100.0..100.0f64,
    ) {
        let p = softmax(&scores);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        let shifted: Vec<f64> = scores.iter().map(|&s| s + shift).collect();
        let q = softmax(&shifted);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }
}
