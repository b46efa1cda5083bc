mod common;

use common::*;
use corrtomo::C64;
use corrtomo::optics::Sub2;
use proptest::prelude::*;

fn block() -> impl Strategy<Value = Sub2> {
    prop::array::uniform8(-1.0f64..1.0).prop_map(|v| {
        Sub2::new(C64::new(v[0], v[1]), C64::new(v[2], v[3]), C64::new(v[4], v[5]), C64::new(v[6], v[7]))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn haar_matrices_are_unitary(dim in 1usize..=10, seed in any::<u64>()) {
        haar_is_unitary(dim, seed)?;
    }

    #[test]
    fn reck_decomposition_round_trips(dim in 2usize..=10, seed in any::<u64>()) {
        reck_round_trip(dim, seed)?;
    }

    #[test]
    fn sinkhorn_core_is_doubly_stochastic(dim in 2usize..=8, seed in any::<u64>()) {
        sinkhorn_is_doubly_stochastic(dim, seed)?;
    }

    #[test]
    fn fidelity_is_bounded_symmetric_and_gauge_blind(dim in 2usize..=8, seed in any::<u64>(), ph in any::<u64>()) {
        fidelity_bounds(dim, seed, ph)?;
    }

    #[test]
    fn canonical_form_keeps_moduli(dim in 2usize..=8, seed in any::<u64>()) {
        canonicalization_keeps_moduli(dim, seed)?;
    }

    #[test]
    fn visibility_ignores_conjugation_and_output_loss(dim in 2usize..=7, seed in any::<u64>(), i in 0.0f64..=1.0) {
        visibility_conjugation_and_output_loss(dim, seed, i)?;
    }

    #[test]
    fn side_peak_product_matches_expansion(b in block(), c1 in 0.0f64..1.0) {
        side_forms_agree(b, c1)?;
    }

    #[test]
    fn hom_correction_inverts_forward_model(
        i in 0.0f64..=1.0, r in 0.05f64..0.95, eta1 in 0.1f64..=1.0, eta2 in 0.1f64..=1.0,
    ) {
        hom_inverts(i, r, eta1, eta2)?;
    }

    #[test]
    fn classical_fidelity_is_bounded_and_symmetric(
        pq in (2usize..12).prop_flat_map(|n| (prop::collection::vec(0.01f64..1.0, n), prop::collection::vec(0.01f64..1.0, n)))
    ) {
        classical_fidelity_bounds(pq.0, pq.1)?;
    }

    #[test]
    fn predicted_counts_are_physical(dim in 2usize..=6, seed in any::<u64>(), i in 0.0f64..=1.0) {
        predictions_are_physical(dim, seed, i)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dataset_files_round_trip(dim in 2usize..=5, seed in any::<u64>()) {
        dataset_round_trip(dim, seed)?;
    }

    #[test]
    fn counts_files_round_trip(dim in 2usize..=6, seed in any::<u64>()) {
        counts_round_trip(dim, seed)?;
    }

    #[test]
    fn histogram_files_round_trip(seed in any::<u64>()) {
        histogram_round_trip(seed)?;
    }

    #[test]
    fn unitary_json_round_trips(dim in 1usize..=8, seed in any::<u64>()) {
        unitary_json_round_trip(dim, seed)?;
    }
}
