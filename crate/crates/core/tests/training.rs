use sgnn_core::experiments::source_loc::{gen_source_localization, SourceLocConfig, SourceLocTask};
use sgnn_core::model::{Activation, Architecture, Readout, ReadoutKind, RealizationMode, SgnnParams};
use sgnn_core::objective::DualVars;
use sgnn_core::rng::stream;
use sgnn_core::training::{Mode, Optimizer, TrainConfig, Trainer};
use sgnn_core::SgnnError;

fn task() -> SourceLocTask {
    let cfg = SourceLocConfig {
        n: 20,
        communities: 4,
        desk_scale_factor: 0.04,
        t_max: 5,
        noise_std: 0.01,
        amplitude: Some(30.0),
        ..SourceLocConfig::default()
    };
    gen_source_localization(&cfg, 0.2, &mut stream(11)).unwrap()
}

fn params(n: usize) -> SgnnParams {
    let arch = Architecture {
        widths: vec![1, 4, 4],
        k: 3,
        activation: Activation::Relu,
        readout: Some(Readout { kind: ReadoutKind::Dense, out_dim: 4 }),
        realization_mode: RealizationMode::PerFilter,
    };
    SgnnParams::init(arch, n, &mut stream(12)).unwrap()
}

fn config(mode: Mode) -> TrainConfig {
    TrainConfig {
        c_f: 0.0,
        c_s: 0.5,
        eta_primal: 0.01,
        eta_dual: 0.1,
        gamma_steps: 1,
        n_realizations: 4,
        max_iters: 60,
        batch_size: 10,
        optimizer: Optimizer::adam(),
        grad_norm_tol: 0.0,
        mode,
        constraint_target: Default::default(),
        freeze_dual: false,
    }
}

#[test]
fn zero_step_size_leaves_parameters_unchanged() {
    let t = task();
    let init = params(t.model.n());
    for opt in [Optimizer::PlainSgd, Optimizer::adam()] {
        for mode in [Mode::PrimalDual, Mode::Unconstrained, Mode::Regularized { beta: 1.0 }] {
            let cfg = TrainConfig { eta_primal: 0.0, optimizer: opt, max_iters: 5, ..config(mode) };
            let out = Trainer::new(init.clone(), DualVars::default(), &t.model, &t.data, cfg, 3)
                .unwrap()
                .run(|_, _| {})
                .unwrap();
            assert_eq!(out.params, init);
            assert_eq!(out.trace.rows.len(), 5);
        }
    }
}

#[test]
fn frozen_zero_duals_reproduce_unconstrained_training() {
    let t = task();
    let init = params(t.model.n());
    let frozen = TrainConfig { freeze_dual: true, ..config(Mode::PrimalDual) };
    let a = Trainer::new(init.clone(), DualVars::default(), &t.model, &t.data, frozen, 9)
        .unwrap()
        .run(|_, _| {})
        .unwrap();
    let b = Trainer::new(init, DualVars::default(), &t.model, &t.data, config(Mode::Unconstrained), 9)
        .unwrap()
        .run(|_, _| {})
        .unwrap();
    assert_eq!(a.params.values(), b.params.values());
    assert!(a.trace.rows.iter().all(|r| r.gamma1 == 0.0 && r.gamma2 == 0.0));
    let ca: Vec<f64> = a.trace.rows.iter().map(|r| r.mean_cost).collect();
    let cb: Vec<f64> = b.trace.rows.iter().map(|r| r.mean_cost).collect();
    assert_eq!(ca, cb);
}

#[test]
fn training_is_reproducible() {
    let t = task();
    let run = || {
        Trainer::new(params(t.model.n()), DualVars::default(), &t.model, &t.data, config(Mode::PrimalDual), 5)
            .unwrap()
            .run(|_, _| {})
            .unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.params, b.params);
}

#[test]
fn binding_constraint_raises_the_dual_and_restores_feasibility() {
    let t = task();
    let init = params(t.model.n());
    let cfg = TrainConfig { c_s: 0.05, max_iters: 300, ..config(Mode::PrimalDual) };
    let unc = Trainer::new(init.clone(), DualVars::default(), &t.model, &t.data, TrainConfig { mode: Mode::Unconstrained, ..cfg.clone() }, 4)
        .unwrap()
        .run(|_, _| {})
        .unwrap();
    let out = Trainer::new(init, DualVars::default(), &t.model, &t.data, cfg.clone(), 4)
        .unwrap()
        .run(|_, _| {})
        .unwrap();
    let rows = &out.trace.rows;
    assert!(rows.iter().all(|r| r.gamma1 >= 0.0 && r.gamma2 >= 0.0));
    let tail_unc = unc.trace.tail_mean(30, |r| r.second_moment);
    assert!(tail_unc > cfg.c_s, "constraint should bind: unconstrained second moment {tail_unc}");
    assert!(rows.iter().any(|r| r.gamma2 > 0.0));
    let slack = out.trace.tail_mean(30, |r| r.slack2);
    assert!(slack >= -0.05, "tail slack {slack}");
}

#[test]
fn runaway_step_size_reports_divergence_with_partial_trace() {
    let t = task();
    let mut init = params(t.model.n());
    init.values_mut().iter_mut().for_each(|v| *v *= 50.0);
    let cfg = TrainConfig { eta_primal: 1e6, optimizer: Optimizer::PlainSgd, max_iters: 200, ..config(Mode::Unconstrained) };
    let err = Trainer::new(init, DualVars::default(), &t.model, &t.data, cfg, 1)
        .unwrap()
        .run(|_, _| {})
        .unwrap_err();
    assert!(matches!(err.error, SgnnError::Diverged { .. }), "{:?}", err.error);
    assert!(err.trace.rows.len() < 200);
}
