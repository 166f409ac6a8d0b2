mod common;

use chgrl::metrics::{accuracy, aggregate, auc, f1_weighted, mean_std, roc_points, PredictionSet, Scores};
use common::oracles::{auc_pairs, brute_accuracy, brute_f1_weighted, random_set};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn metrics_equal_brute_force_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..200 {
        let p = random_set(&mut rng);
        let (doubled, pairs) = auc_pairs(&p);
        assert_eq!(auc(&p).unwrap(), doubled as f64 / (2 * pairs) as f64, "case {case}");
        for t in [0.3, 0.5, 0.75] {
            assert!((accuracy(&p, t).unwrap() - brute_accuracy(&p, t)).abs() <= 1e-12);
            assert!((f1_weighted(&p, t).unwrap() - brute_f1_weighted(&p, t)).abs() <= 1e-12);
        }
    }
}

#[test]
fn mean_std_matches_two_pass_formula() {
    let v = [0.81, 0.79, 0.86, 0.9, 0.83];
    let m = v.iter().sum::<f64>() / 5.0;
    let s = (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 4.0).sqrt();
    let got = mean_std(&v).unwrap();
    assert!((got.mean - m).abs() < 1e-15 && (got.std - s).abs() < 1e-15);
}

#[test]
fn aggregate_counts_failures_separately() {
    let s = Scores { auc: 0.9, acc: 0.8, f1: 0.7 };
    let row = aggregate("chgrl", &[s, s, s], 2).unwrap();
    assert_eq!((row.completed, row.failed), (3, 2));
}

proptest! {
    #[test]
    fn auc_is_invariant_under_monotone_transforms(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_set(&mut rng);
        let q = PredictionSet::new(p.labels.clone(), p.scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect()).unwrap();
        prop_assert_eq!(auc(&p).unwrap(), auc(&q).unwrap());
    }

    #[test]
    fn flipping_scores_complements_auc(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_set(&mut rng);
        let q = PredictionSet::new(p.labels.clone(), p.scores.iter().map(|s| -s).collect()).unwrap();
        prop_assert!((auc(&p).unwrap() + auc(&q).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn roc_is_monotone_and_spans_the_square(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_set(&mut rng);
        let pts = roc_points(&p).unwrap();
        prop_assert_eq!(pts[0], (0.0, 0.0));
        prop_assert_eq!(*pts.last().unwrap(), (1.0, 1.0));
        for w in pts.windows(2) {
            prop_assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
        }
        // trapezoid area under the curve equals the rank statistic
        let area: f64 = pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum();
        prop_assert!((area - auc(&p).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn metrics_stay_in_unit_interval(seed in any::<u64>(), t in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_set(&mut rng);
        for m in [auc(&p).unwrap(), accuracy(&p, t).unwrap(), f1_weighted(&p, t).unwrap()] {
            prop_assert!((0.0..=1.0).contains(&m));
        }
    }
}
