//! Randomized invariants over the numeric core and the metrics.

use proptest::prelude::*;

use authformer::metrics::{compute_eer, far_at, frr_at, tar_at};
use authformer::tensor::Tape;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(xs in prop::collection::vec(-30.0f64..30.0, 12)) {
        let tape: Tape<f64> = Tape::new();
        let t = tape.constant(xs, &[3, 4]).unwrap();
        let s = t.softmax(1).unwrap().data();
        for row in s.chunks(4) {
            let total: f64 = row.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn softmax_shift_invariance(xs in prop::collection::vec(-10.0f64..10.0, 8), c in -50.0f64..50.0) {
        let tape: Tape<f64> = Tape::new();
        let a = tape.constant(xs.clone(), &[2, 4]).unwrap().softmax(1).unwrap().data();
        let shifted: Vec<f64> = xs.iter().map(|v| v + c).collect();
        let b = tape.constant(shifted, &[2, 4]).unwrap().softmax(1).unwrap().data();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn tar_plus_frr_is_exactly_one(
        genuine in prop::collection::vec(0.0f64..1.0, 1..40),
        t in 0.0f64..1.0,
    ) {
        prop_assert_eq!(tar_at(&genuine, t) + frr_at(&genuine, t), 1.0);
    }

    #[test]
    fn eer_is_a_rate_and_optimal_over_candidates(
        genuine in prop::collection::vec(0.0f64..1.0, 1..30),
        impostor in prop::collection::vec(0.0f64..1.0, 1..30),
    ) {
        let r = compute_eer(&genuine, &impostor).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.eer));
        prop_assert!((r.eer - 0.5 * (r.far + r.frr)).abs() < 1e-15);
        let best_gap = (r.far - r.frr).abs();
        // a threshold at any score value classifies like some sweep
        // candidate, so none can beat the chosen point
        for &t in genuine.iter().chain(&impostor) {
            let gap = (far_at(&impostor, t) - frr_at(&genuine, t)).abs();
            prop_assert!(gap >= best_gap);
        }
    }
}
