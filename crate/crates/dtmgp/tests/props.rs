//! Property tests for the structural invariants that hold over whole input
//! families rather than at hand-picked points.

mod common;

use proptest::prelude::*;

use dtmgp::eval::ks_two_sample;
use dtmgp::features::FeatureBasis;
use dtmgp::grid::DyadicIndex1D;
use dtmgp::kernel::{MarkovKernel1D, TensorMarkovKernel};

proptest! {
    #[test]
    fn ks_is_symmetric_bounded_and_transform_invariant(
        a in prop::collection::vec(-500i32..500, 1..40),
        b in prop::collection::vec(-500i32..500, 1..40),
    ) {
        // coarse grid of values so a strictly increasing transform cannot
        // merge distinct samples through rounding
        let a: Vec<f64> = a.iter().map(|&v| v as f64 / 10.0).collect();
        let b: Vec<f64> = b.iter().map(|&v| v as f64 / 10.0).collect();
        let d = ks_two_sample(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, ks_two_sample(&b, &a).unwrap());
        let ta: Vec<f64> = a.iter().map(|&v| v.exp()).collect();
        let tb: Vec<f64> = b.iter().map(|&v| v.exp()).collect();
        prop_assert_eq!(d, ks_two_sample(&ta, &tb).unwrap());
    }

    #[test]
    fn dyadic_labels_round_trip_through_their_point(level in 1u32..12, rank in 0u64..1024) {
        let offset = 2 * (rank % (1u64 << (level - 1))) + 1;
        let label = DyadicIndex1D::new(level, offset).unwrap();
        let recovered = DyadicIndex1D::containing(level, label.value()).unwrap();
        prop_assert_eq!(label, recovered);
        // the point sits strictly inside its own support
        let (lo, hi) = label.support();
        prop_assert!(label.value() > lo && label.value() < hi);
    }

    #[test]
    fn sparse_features_match_dense_everywhere(x in 0.0f64..1.0, y in 0.0f64..1.0) {
        let kernel = TensorMarkovKernel::isotropic(MarkovKernel1D::laplace(1.0), 2).unwrap();
        let basis = FeatureBasis::new(kernel, 3).unwrap();
        let sparse = basis.features(&[x, y]).unwrap().to_dense();
        let dense = basis.dense_features(&[x, y]).unwrap();
        for (a, b) in sparse.iter().zip(&dense) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn config_parser_rejects_garbage_without_panicking(text in "\\PC{0,200}") {
        // any outcome is fine as long as it is a Result, not a panic
        let _ = dtmgp::config::parse_config(&text);
    }
}
