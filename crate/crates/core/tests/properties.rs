mod common;

use common::*;
use ndarray::Array2;
use proptest::prelude::*;
use sgnn_core::data::Split;
use sgnn_core::experiments::metrics::ad_at_k;
use sgnn_core::graph::ShiftKind;
use sgnn_core::model::{max_abs_response, RealizationSeq};
use sgnn_core::moments::{estimate_moments, McConfig};
use sgnn_core::objective::{dual_step, DualVars};
use sgnn_core::rng::stream;
use sgnn_core::suite::random_small_model;
use sgnn_core::verify::{coefficient_majorant, estimate_lipschitz, estimate_lipschitz_pairwise, normalize_taps};

fn kind(b: bool) -> ShiftKind {
    if b {
        ShiftKind::Laplacian
    } else {
        ShiftKind::Adjacency
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn expected_square_matches_enumeration(seed in any::<u64>()) {
        let model = random_small_model(6, 8, &mut stream(seed)).unwrap();
        let n = model.n();
        let mut exact = Array2::<f64>::zeros((n, n));
        let mut total = 0.0;
        for (prob, r) in model.enumerate().unwrap() {
            let s = model.to_shift(&r).into_matrix();
            exact.scaled_add(prob, &s.dot(&s));
            total += prob;
        }
        prop_assert!((total - 1.0).abs() < 1e-12);
        let closed = model.expected_square();
        for (a, b) in exact.iter().zip(closed.iter()) {
            prop_assert!((a - b).abs() <= 1e-12, "{} vs {}", a, b);
        }
    }

    #[test]
    fn realizations_are_symmetric_and_within_envelope(seed in any::<u64>(), lap in any::<bool>()) {
        let mut rng = stream(seed);
        let model = random_model(6, kind(lap), &mut rng);
        let env = model.spectral_envelope().unwrap();
        for _ in 0..10 {
            let s = model.sample_shift(&mut rng);
            let m = s.matrix();
            for i in 0..6 {
                for j in 0..6 {
                    prop_assert_eq!(m[[i, j]], m[[j, i]]);
                }
            }
            prop_assert!(s.spectral_radius().unwrap() <= env + 1e-9);
        }
    }

    #[test]
    fn majorant_dominates_lipschitz_estimates(taps in prop::collection::vec(-2.0f64..2.0, 1..6), r in 0.1f64..2.0, seed in any::<u64>()) {
        let mut rng = stream(seed);
        let g = estimate_lipschitz(&taps, r, 200, &mut rng).unwrap();
        let fd = estimate_lipschitz_pairwise(&taps, r, 200, &mut rng);
        let maj = coefficient_majorant(&taps, r);
        prop_assert!(g.c_l <= maj * (1.0 + 1e-12));
        prop_assert!(fd.c_l <= maj * (1.0 + 1e-6));
        prop_assert!(g.c_l >= 0.0);
    }

    #[test]
    fn duals_stay_nonnegative(g1 in 0.0f64..5.0, g2 in 0.0f64..5.0, m1 in -3.0f64..3.0, m2 in 0.0f64..3.0,
                              c_f in -1.0f64..1.0, c_s in 0.0f64..2.0, eta in 0.0f64..2.0) {
        let next = dual_step(DualVars { gamma1: g1, gamma2: g2 }, m1, m2, c_f, c_s, eta).unwrap();
        prop_assert!(next.gamma1 >= 0.0 && next.gamma2 >= 0.0);
        if eta == 0.0 {
            prop_assert_eq!(next, DualVars { gamma1: g1, gamma2: g2 });
        }
    }

    #[test]
    fn plug_in_variance_is_nonnegative(seed in any::<u64>(), which in 0usize..12) {
        let mut rng = stream(seed);
        let inst = random_instance(which, &mut rng);
        let x = inst.data.input(0);
        let m = estimate_moments(&inst.params, &inst.model, &x, &McConfig::new(20, seed)).unwrap();
        prop_assert!(m.variance >= -1e-10);
        prop_assert!(m.per_node_variance.iter().all(|v| *v >= -1e-10));
        prop_assert!(m.second_moment + 1e-12 >= m.first_moment * m.first_moment);
    }

    #[test]
    fn normalized_filters_respect_unit_response(seed in any::<u64>(), r in 0.5f64..2.0) {
        let mut rng = stream(seed);
        let mut inst = random_instance(0, &mut rng);
        inst.params.values_mut().iter_mut().for_each(|v| *v *= 5.0);
        normalize_taps(&mut inst.params, r);
        for taps in inst.params.filters() {
            prop_assert!(max_abs_response(taps, r) <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn splits_are_seeded_partitions(len in 1usize..200, a in 0.0f64..1.0, seed in any::<u64>()) {
        let n_train = (a * len as f64) as usize;
        let rest = len - n_train;
        let sizes = [n_train, rest / 2, rest - rest / 2];
        let s1 = Split::random(len, sizes, &mut stream(seed)).unwrap();
        let s2 = Split::random(len, sizes, &mut stream(seed)).unwrap();
        prop_assert_eq!(&s1, &s2);
        let mut all: Vec<usize> = s1.train.iter().chain(&s1.val).chain(&s1.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..len).collect::<Vec<_>>());
    }

    #[test]
    fn aggregated_diversity_is_bounded(lists in prop::collection::vec(prop::collection::hash_set(0usize..50, 5), 1..20)) {
        let lists: Vec<Vec<usize>> = lists.into_iter().map(|s| s.into_iter().collect()).collect();
        let ad = ad_at_k(&lists, 5);
        prop_assert!(ad >= 5 && ad <= 5 * lists.len());
    }

    #[test]
    fn realization_sampling_is_reproducible(seed in any::<u64>()) {
        let mut rng = stream(seed);
        let inst = random_instance(5, &mut rng);
        let a = RealizationSeq::sample(&inst.model, inst.params.arch(), &mut stream(seed ^ 1));
        let b = RealizationSeq::sample(&inst.model, inst.params.arch(), &mut stream(seed ^ 1));
        prop_assert_eq!(a.realizations(), b.realizations());
        prop_assert_eq!(a.len(), inst.params.arch().num_slots());
    }
}
