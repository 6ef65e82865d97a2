mod common;

use common::*;
use sgnn_core::graph::ShiftKind;
use sgnn_core::gres::GresModel;
use sgnn_core::generators::sbm;
use sgnn_core::model::{Activation, Architecture, RealizationMode, SgnnParams};
use sgnn_core::rng::stream;
use sgnn_core::suite::{run_suite, SuiteConfig};
use sgnn_core::verify::{
    check_chebyshev, check_moment_formula, check_stability, check_variance_bound, error_radius, normalize_taps,
    CheckConfig,
};

fn small_network(seed: u64) -> (SgnnParams, GresModel, Vec<f64>) {
    let mut rng = stream(seed);
    let g = sbm(12, 3, 0.8, 0.2, &mut rng).unwrap().scaled(0.25);
    let model = GresModel::all_droppable(g, ShiftKind::Adjacency, 0.2).unwrap();
    let arch = Architecture {
        widths: vec![1, 3, 1],
        k: 2,
        activation: Activation::Relu,
        readout: None,
        realization_mode: RealizationMode::PerFilter,
    };
    let mut params = SgnnParams::init(arch, 12, &mut rng).unwrap();
    normalize_taps(&mut params, model.spectral_envelope().unwrap());
    (params, model, gaussian(12, &mut rng))
}

#[test]
fn chebyshev_holds_across_thresholds() {
    let (params, model, x) = small_network(1);
    let reports = check_chebyshev(&params, &model, &x, &[1e-4, 1e-3, 1e-2, 0.1, 1.0], 500, 3).unwrap();
    assert_eq!(reports.len(), 5);
    for r in &reports {
        assert!(!r.violated, "{r:?}");
        assert!((0.0..=1.0).contains(&r.empirical));
    }
    // Larger thresholds can only admit more samples.
    assert!(reports.windows(2).all(|w| w[0].empirical <= w[1].empirical));
}

#[test]
fn stability_deviation_grows_with_perturbation_and_stays_below_constant() {
    let (params, model, x) = small_network(2);
    let s = check_stability(&params, &model, &x, &[1e-3, 3e-3, 1e-2], 50, 500, 4).unwrap();
    assert!(s.mean_deviation.windows(2).all(|w| w[0] <= w[1]), "{:?}", s.mean_deviation);
    assert!(s.ratio <= 1.0, "ratio {}", s.ratio);
    assert!(!s.report.violated);
}

#[test]
fn variance_bound_holds_for_normalized_filters() {
    let (params, model, x) = small_network(3);
    let cfg = CheckConfig { n_realizations: 400, lipschitz_samples: 500, seed: 5 };
    let r = check_variance_bound(&params, &model, &x, &cfg).unwrap();
    assert!(!r.violated && r.slack > 0.0, "{r:?}");
}

#[test]
fn moment_check_uses_enumeration_or_sampling() {
    let (_, model, _) = small_network(4);
    // Dozens of variable edges: too many to enumerate.
    let mc = check_moment_formula(&model, 1).unwrap();
    assert!(mc.note.as_deref().unwrap().contains("Monte Carlo"));
    assert!(!mc.violated, "{mc:?}");
    let small = random_model(4, ShiftKind::Laplacian, &mut stream(9));
    let exact = check_moment_formula(&small, 1).unwrap();
    assert!(exact.empirical <= 1e-12);
}

#[test]
fn error_radius_hand_value() {
    // 2(0.1) + 0.5 ((0 + 2/2)^2 + (1 + 4/4)^2) / 2 + 0.01
    let r = error_radius(0.1, 0.5, 0.0, 1.0, 2.0, 4, 0.01);
    assert!((r - 1.46).abs() < 1e-12);
}

#[test]
fn forced_zero_bounds_are_reported_as_violations() {
    let cfg = SuiteConfig { force_zero_bound: true, ..SuiteConfig::default() };
    let out = run_suite(&cfg, 0, Some("moment-formula")).unwrap();
    assert_eq!(out.reports.len(), 1);
    assert!(out.violations() == 1 || out.reports[0].empirical == 0.0);
    let out = run_suite(&cfg, 0, Some("output-bound")).unwrap();
    assert_eq!(out.violations(), 1);
}
