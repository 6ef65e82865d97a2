//! Primal-dual training under output-moment constraints, plus the unconstrained and
//! variance-regularized baselines.

use std::io::Write;

use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Result, SgnnError};
use crate::gres::GresModel;
use crate::linalg::norm2;
use crate::model::SgnnParams;
use crate::objective::{dual_step, evaluate_batch, DualVars, Draws, Evaluation, Objective};
use crate::rng::{derive_seed, derive_stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Optimizer {
    PlainSgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Mode {
    PrimalDual,
    Unconstrained,
    Regularized { beta: f64 },
}

impl Mode {
    pub fn label(&self) -> &'static str {
        match self {
            Mode::PrimalDual => "primal_dual",
            Mode::Unconstrained => "unconstrained",
            Mode::Regularized { .. } => "regularized",
        }
    }
}

/// Which constraint the dual variables enforce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintTarget {
    /// `m1 >= c_f` and `m2 <= c_s`, two dual variables.
    #[default]
    Surrogate,
    /// `Var <= c_s - c_f^2`, one dual variable (stored as `gamma1`).
    OriginalVariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub c_f: f64,
    pub c_s: f64,
    pub eta_primal: f64,
    pub eta_dual: f64,
    pub gamma_steps: usize,
    pub n_realizations: usize,
    pub max_iters: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub grad_norm_tol: f64,
    pub mode: Mode,
    #[serde(default)]
    pub constraint_target: ConstraintTarget,
    /// Keep the dual variables at their initial values.
    #[serde(default)]
    pub freeze_dual: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            c_f: 0.0,
            c_s: 0.5,
            eta_primal: 1e-3,
            eta_dual: 0.1,
            gamma_steps: 1,
            n_realizations: 10,
            max_iters: 2000,
            batch_size: 50,
            optimizer: Optimizer::adam(),
            grad_norm_tol: 1e-6,
            mode: Mode::PrimalDual,
            constraint_target: ConstraintTarget::Surrogate,
            freeze_dual: false,
        }
    }
}

impl TrainConfig {
    /// Variance bound implied by the surrogate constraints.
    pub fn c_v(&self) -> f64 {
        self.c_s - self.c_f * self.c_f
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SgnnError::Config(m.to_string()));
        if !(self.c_s >= 0.0) || !self.c_f.is_finite() {
            return bad("c_s must be nonnegative and c_f finite");
        }
        if self.constraint_target == ConstraintTarget::OriginalVariance && self.c_v() < 0.0 {
            return bad("c_s - c_f^2 must be nonnegative for the variance constraint");
        }
        if !(self.eta_primal >= 0.0 && self.eta_primal.is_finite())
            || !(self.eta_dual >= 0.0 && self.eta_dual.is_finite())
        {
            return bad("step sizes must be finite and nonnegative");
        }
        if self.gamma_steps == 0 || self.n_realizations == 0 || self.batch_size == 0 {
            return bad("gamma_steps, n_realizations, and batch_size must be at least 1");
        }
        if let Mode::Regularized { beta } = self.mode {
            if !(beta >= 0.0) {
                return bad("regularization weight must be nonnegative");
            }
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return bad("Adam needs beta1, beta2 in [0, 1) and eps > 0");
            }
        }
        Ok(())
    }
}

/// One row of the training trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub mean_cost: f64,
    pub first_moment: f64,
    pub second_moment: f64,
    pub variance: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub lagrangian: f64,
    pub grad_norm: f64,
    pub slack1: f64,
    pub slack2: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub rows: Vec<TraceRow>,
}

impl TrainTrace {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wr.serialize(r)?;
        }
        if self.rows.is_empty() {
            wr.write_record([
                "iter",
                "mean_cost",
                "first_moment",
                "second_moment",
                "variance",
                "gamma1",
                "gamma2",
                "lagrangian",
                "grad_norm",
                "slack1",
                "slack2",
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Mean of `f` over the last `window` rows.
    pub fn tail_mean(&self, window: usize, f: impl Fn(&TraceRow) -> f64) -> f64 {
        let k = window.min(self.rows.len()).max(1);
        let tail = &self.rows[self.rows.len().saturating_sub(k)..];
        tail.iter().map(f).sum::<f64>() / tail.len().max(1) as f64
    }
}

#[derive(Debug, Clone)]
enum OptState {
    Plain,
    Adam { m: Vec<f64>, v: Vec<f64>, t: i32 },
}

const TAG_BATCH: u64 = 1;
const TAG_REAL: u64 = 2;
const TAG_DUAL_BATCH: u64 = 3;
const TAG_DUAL_REAL: u64 = 4;
const TAG_PROBE: u64 = 5;

/// Cost above which a run is declared divergent.
pub const DIVERGENCE_COST: f64 = 1e6;

/// Training loop state. All randomness derives from `seed` and the iteration counters.
#[derive(Debug, Clone)]
pub struct Trainer<'a> {
    model: &'a GresModel,
    data: &'a LabeledDataset,
    cfg: TrainConfig,
    seed: u64,
    params: SgnnParams,
    gamma: DualVars,
    opt: OptState,
    iter: usize,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: SgnnParams,
    pub gamma: DualVars,
    pub trace: TrainTrace,
    pub iterations: usize,
    pub stopped_on_tolerance: bool,
}

/// A failed run with everything recorded up to the failure.
#[derive(Debug)]
pub struct TrainFailure {
    pub error: SgnnError,
    pub trace: TrainTrace,
    pub params: SgnnParams,
}

impl<'a> Trainer<'a> {
    pub fn new(
        params: SgnnParams,
        gamma: DualVars,
        model: &'a GresModel,
        data: &'a LabeledDataset,
        cfg: TrainConfig,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        if gamma.gamma1 < 0.0 || gamma.gamma2 < 0.0 {
            return Err(SgnnError::Config("initial dual variables must be nonnegative".into()));
        }
        if data.n() != params.n() || model.n() != params.n() {
            return Err(SgnnError::Dimension {
                expected: params.n(),
                actual: data.n(),
                context: "dataset and model must match the parameter node count",
            });
        }
        if data.split().train.is_empty() {
            return Err(SgnnError::Config("training split is empty".into()));
        }
        let opt = match cfg.optimizer {
            Optimizer::PlainSgd => OptState::Plain,
            Optimizer::Adam { .. } => OptState::Adam {
                m: vec![0.0; params.len()],
                v: vec![0.0; params.len()],
                t: 0,
            },
        };
        Ok(Trainer {
            model,
            data,
            cfg,
            seed,
            params,
            gamma,
            opt,
            iter: 0,
        })
    }

    pub fn params(&self) -> &SgnnParams {
        &self.params
    }
    pub fn gamma(&self) -> DualVars {
        self.gamma
    }
    pub fn iteration(&self) -> usize {
        self.iter
    }
    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Objective minimized by the primal phase under the current duals.
    pub fn primal_objective(&self) -> Objective {
        match self.cfg.mode {
            Mode::Unconstrained => Objective::Cost,
            Mode::Regularized { beta } => Objective::Regularized { beta },
            Mode::PrimalDual => match self.cfg.constraint_target {
                ConstraintTarget::Surrogate => Objective::Lagrangian {
                    gamma: self.gamma,
                    c_f: self.cfg.c_f,
                    c_s: self.cfg.c_s,
                },
                ConstraintTarget::OriginalVariance => Objective::VarianceLagrangian {
                    gamma: self.gamma.gamma1,
                    c_v: self.cfg.c_v(),
                },
            },
        }
    }

    fn batch(&self, path: &[u64]) -> Vec<usize> {
        let train = &self.data.split().train;
        if self.cfg.batch_size >= train.len() {
            return train.clone();
        }
        let mut rng = derive_stream(self.seed, path);
        sample_indices(&mut rng, train.len(), self.cfg.batch_size)
            .into_iter()
            .map(|k| train[k])
            .collect()
    }

    fn draws(&self, path: &[u64]) -> Draws {
        Draws::new(self.cfg.n_realizations, derive_seed(self.seed, path))
    }

    fn apply_update(&mut self, grad: &[f64]) {
        let lr = self.cfg.eta_primal;
        let values = self.params.values_mut();
        match (&mut self.opt, self.cfg.optimizer) {
            (OptState::Plain, _) => {
                for (p, g) in values.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            (OptState::Adam { m, v, t }, Optimizer::Adam { beta1, beta2, eps }) => {
                *t += 1;
                let c1 = 1.0 - beta1.powi(*t);
                let c2 = 1.0 - beta2.powi(*t);
                for k in 0..values.len() {
                    let g = grad[k];
                    m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                    v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                    let mh = m[k] / c1;
                    let vh = v[k] / c2;
                    values[k] -= lr * mh / (vh.sqrt() + eps);
                }
            }
            (OptState::Adam { .. }, Optimizer::PlainSgd) => unreachable!("state follows config"),
        }
    }

    /// One gradient step on the primal objective; returns the pre-step evaluation.
    pub fn primal_step(&mut self, t: usize, tau: usize) -> Result<Evaluation> {
        let path = [t as u64, tau as u64];
        let idx = self.batch(&[TAG_BATCH, path[0], path[1]]);
        let draws = self.draws(&[TAG_REAL, path[0], path[1]]);
        let e = evaluate_batch(
            &self.params,
            self.model,
            self.data,
            &idx,
            draws,
            self.primal_objective(),
            true,
        )?;
        if !e.cost.is_finite() || e.cost > DIVERGENCE_COST {
            return Err(SgnnError::Diverged {
                iter: t + 1,
                reason: format!("cost {}", e.cost),
            });
        }
        let grad = e.grad.as_deref().expect("gradient requested");
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(SgnnError::Diverged {
                iter: t + 1,
                reason: "non-finite gradient".into(),
            });
        }
        let grad = grad.to_vec();
        self.apply_update(&grad);
        Ok(e)
    }

    /// Moments on a fresh batch and fresh realizations, followed by the projected dual step.
    pub fn dual_update(&mut self, t: usize) -> Result<Evaluation> {
        let idx = self.batch(&[TAG_DUAL_BATCH, t as u64]);
        let draws = self.draws(&[TAG_DUAL_REAL, t as u64]);
        let e = evaluate_batch(&self.params, self.model, self.data, &idx, draws, Objective::Cost, false)?;
        if !self.cfg.freeze_dual {
            let eta = self.cfg.eta_dual;
            self.gamma = match self.cfg.constraint_target {
                ConstraintTarget::Surrogate => {
                    dual_step(self.gamma, e.m1, e.m2, self.cfg.c_f, self.cfg.c_s, eta)?
                }
                ConstraintTarget::OriginalVariance => DualVars {
                    gamma1: (self.gamma.gamma1 + eta * (e.variance - self.cfg.c_v())).max(0.0),
                    gamma2: 0.0,
                },
            };
        }
        Ok(e)
    }

    /// One outer iteration: `gamma_steps` primal steps, then (primal-dual mode) one dual step.
    pub fn step(&mut self) -> Result<TraceRow> {
        let t = self.iter;
        let mut last = None;
        for tau in 0..self.cfg.gamma_steps {
            last = Some(self.primal_step(t, tau)?);
        }
        let primal = last.expect("gamma_steps >= 1");
        let moments = if self.cfg.mode == Mode::PrimalDual {
            self.dual_update(t)?
        } else {
            primal.clone()
        };
        self.iter += 1;
        let (slack1, slack2) = match (self.cfg.mode, self.cfg.constraint_target) {
            (Mode::PrimalDual, ConstraintTarget::OriginalVariance) => {
                let s = self.cfg.c_v() - moments.variance;
                (s, s)
            }
            _ => (moments.m1 - self.cfg.c_f, self.cfg.c_s - moments.m2),
        };
        Ok(TraceRow {
            iter: self.iter,
            mean_cost: primal.cost,
            first_moment: moments.m1,
            second_moment: moments.m2,
            variance: moments.variance,
            gamma1: self.gamma.gamma1,
            gamma2: self.gamma.gamma2,
            lagrangian: primal.value,
            grad_norm: norm2(primal.grad.as_deref().unwrap_or(&[])),
            slack1,
            slack2,
        })
    }

    /// Runs to `max_iters` or until the gradient norm drops below tolerance.
    /// `observer` sees the state after every iteration.
    pub fn run(
        mut self,
        mut observer: impl FnMut(&Trainer<'a>, &TraceRow),
    ) -> std::result::Result<TrainOutcome, Box<TrainFailure>> {
        let mut trace = TrainTrace::default();
        let mut stopped = false;
        while self.iter < self.cfg.max_iters {
            match self.step() {
                Ok(row) => {
                    trace.rows.push(row);
                    observer(&self, &row);
                    if row.grad_norm < self.cfg.grad_norm_tol {
                        stopped = true;
                        break;
                    }
                }
                Err(error) => {
                    return Err(Box::new(TrainFailure {
                        error,
                        trace,
                        params: self.params,
                    }))
                }
            }
        }
        Ok(TrainOutcome {
            iterations: self.iter,
            params: self.params,
            gamma: self.gamma,
            trace,
            stopped_on_tolerance: stopped,
        })
    }

    /// Decrease of the primal objective (duals fixed) achieved by `steps` extra primal
    /// steps, measured on `eval` with fixed realizations. A proxy for primal suboptimality.
    pub fn suboptimality_probe(&self, steps: usize, eval: &[usize], draws: usize) -> Result<f64> {
        let d = Draws::new(draws, derive_seed(self.seed, &[TAG_PROBE]));
        let obj = self.primal_objective();
        let before = evaluate_batch(&self.params, self.model, self.data, eval, d, obj, false)?.value;
        let mut probe = self.clone();
        for s in 0..steps {
            probe.primal_step(usize::MAX / 2 + s, 0)?;
        }
        let after = evaluate_batch(&probe.params, self.model, self.data, eval, d, obj, false)?.value;
        Ok((before - after).max(0.0))
    }
}

/// Primal-dual training (Algorithm: alternate primal descent and projected dual ascent).
pub fn train_primal_dual(
    init: SgnnParams,
    gamma: DualVars,
    model: &GresModel,
    data: &LabeledDataset,
    cfg: &TrainConfig,
    seed: u64,
) -> std::result::Result<TrainOutcome, Box<TrainFailure>> {
    let cfg = TrainConfig {
        mode: Mode::PrimalDual,
        ..cfg.clone()
    };
    run(init, gamma, model, data, cfg, seed)
}

/// Stochastic descent on the expected cost alone.
pub fn train_unconstrained(
    init: SgnnParams,
    model: &GresModel,
    data: &LabeledDataset,
    cfg: &TrainConfig,
    seed: u64,
) -> std::result::Result<TrainOutcome, Box<TrainFailure>> {
    let cfg = TrainConfig {
        mode: Mode::Unconstrained,
        ..cfg.clone()
    };
    run(init, DualVars::default(), model, data, cfg, seed)
}

/// Descent on `cost + beta Var`.
pub fn train_regularized(
    init: SgnnParams,
    model: &GresModel,
    data: &LabeledDataset,
    cfg: &TrainConfig,
    beta: f64,
    seed: u64,
) -> std::result::Result<TrainOutcome, Box<TrainFailure>> {
    let cfg = TrainConfig {
        mode: Mode::Regularized { beta },
        ..cfg.clone()
    };
    run(init, DualVars::default(), model, data, cfg, seed)
}

fn run(
    init: SgnnParams,
    gamma: DualVars,
    model: &GresModel,
    data: &LabeledDataset,
    cfg: TrainConfig,
    seed: u64,
) -> std::result::Result<TrainOutcome, Box<TrainFailure>> {
    let fallback = init.clone();
    match Trainer::new(init, gamma, model, data, cfg, seed) {
        Ok(tr) => tr.run(|_, _| {}),
        Err(error) => Err(Box::new(TrainFailure {
            error,
            trace: TrainTrace::default(),
            params: fallback,
        })),
    }
}
