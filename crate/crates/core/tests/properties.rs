//! Randomized property suite over the module invariants: permutation
//! equivariance, aggregation order-invariance, locality of message
//! passing, decoder symmetry, KL nonnegativity, split leak-freedom, and
//! run-to-run determinism.

mod common;

use common::invariants;
use gnn_core::dense::DenseMatrix;
use proptest::prelude::*;

fn matrix_strategy(
    rows: std::ops::RangeInclusive<usize>,
    cols: std::ops::RangeInclusive<usize>,
    lo: f64,
    hi: f64,
) -> impl Strategy<Value = DenseMatrix> {
    (rows, cols).prop_flat_map(move |(r, c)| {
        prop::collection::vec(lo..hi, r * c)
            .prop_map(move |data| DenseMatrix::from_vec(r, c, data).expect("shape matches"))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn permutation_equivariance(seed: u64) {
        prop_assert_eq!(invariants::check_permutation_equivariance(seed), Ok(()));
    }

    #[test]
    fn aggregation_order_invariance(seed: u64) {
        prop_assert_eq!(invariants::check_aggregation_order_invariance(seed), Ok(()));
    }

    #[test]
    fn locality_of_message_passing(seed: u64) {
        prop_assert_eq!(invariants::check_locality(seed), Ok(()));
    }

    #[test]
    fn split_leak_freedom(seed: u64) {
        prop_assert_eq!(invariants::check_split_leak_freedom(seed), Ok(()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn decoder_symmetry(z in matrix_strategy(1..=8, 1..=6, -3.0, 3.0)) {
        prop_assert_eq!(invariants::check_decoder_symmetry(&z), Ok(()));
    }

    #[test]
    fn kl_nonnegative(
        (mu, logvar) in (1usize..=6, 1usize..=5).prop_flat_map(|(r, c)| {
            (
                prop::collection::vec(-3.0..3.0f64, r * c),
                prop::collection::vec(-4.0..4.0f64, r * c),
            )
                .prop_map(move |(m, lv)| {
                    (
                        DenseMatrix::from_vec(r, c, m).expect("shape matches"),
                        DenseMatrix::from_vec(r, c, lv).expect("shape matches"),
                    )
                })
        })
    ) {
        prop_assert_eq!(invariants::check_kl_nonnegative(&mu, &logvar), Ok(()));
    }

    #[test]
    fn component_count_and_densify_consistency(
        n in 1usize..=40,
        raw in prop::collection::vec((0usize..40, 0usize..40), 0..80),
    ) {
        let edges: Vec<(usize, usize)> = raw.into_iter().map(|(u, v)| (u % n, v % n)).collect();
        prop_assert_eq!(invariants::check_structure_consistency(n, &edges), Ok(()));
    }
}

proptest! {
    // Each case trains four small models, so keep the count low.
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn training_determinism(seed: u64) {
        prop_assert_eq!(invariants::check_training_determinism(seed), Ok(()));
    }
}
