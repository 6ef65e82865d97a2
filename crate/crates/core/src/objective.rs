//! Monte-Carlo objectives over random shift realizations: expected cost, the
//! surrogate Lagrangian, and the variance-penalized cost, with exact gradients.

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{check_len, Result, SgnnError};
use crate::gres::GresModel;
use crate::model::{backward, forward, ForwardTape, RealizationSeq, SgnnParams, Upstream};
use crate::parallel::map_indexed;
use crate::rng::derive_stream;

/// Dual variables of the surrogate problem, both kept nonnegative.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DualVars {
    pub gamma1: f64,
    pub gamma2: f64,
}

impl DualVars {
    pub fn is_zero(&self) -> bool {
        self.gamma1 == 0.0 && self.gamma2 == 0.0
    }
}

/// Projected ascent step `g1 <- [g1 + eta (c_f - m1)]+`, `g2 <- [g2 - eta (c_s - m2)]+`.
pub fn dual_step(gamma: DualVars, m1: f64, m2: f64, c_f: f64, c_s: f64, eta: f64) -> Result<DualVars> {
    if !m1.is_finite() || !m2.is_finite() {
        return Err(SgnnError::Numerical("dual step received non-finite moments".into()));
    }
    Ok(DualVars {
        gamma1: (gamma.gamma1 + eta * (c_f - m1)).max(0.0),
        gamma2: (gamma.gamma2 - eta * (c_s - m2)).max(0.0),
    })
}

/// What is being minimized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// Expected loss only.
    Cost,
    /// `cost + g1 (c_f - m1) - g2 (c_s - m2)`.
    Lagrangian { gamma: DualVars, c_f: f64, c_s: f64 },
    /// `cost + beta Var`.
    Regularized { beta: f64 },
    /// `cost + gamma (Var - c_v)`: the variance constraint imposed directly.
    VarianceLagrangian { gamma: f64, c_v: f64 },
}

impl Objective {
    /// Whether the gradient needs per-entry means over realizations before any backward pass.
    fn needs_means(&self) -> bool {
        match *self {
            Objective::Regularized { beta } => beta != 0.0,
            Objective::VarianceLagrangian { gamma, .. } => gamma != 0.0,
            _ => false,
        }
    }

    fn variance_weight(&self) -> f64 {
        match *self {
            Objective::Regularized { beta } => beta,
            Objective::VarianceLagrangian { gamma, .. } => gamma,
            _ => 0.0,
        }
    }
}

/// How realizations are drawn for one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Draws {
    pub count: usize,
    /// Realization `j` comes from the stream derived from `(seed, [j])`.
    pub seed: u64,
    /// Odd realizations replay the previous stream with complemented draws.
    pub antithetic: bool,
}

impl Draws {
    pub fn new(count: usize, seed: u64) -> Self {
        Draws {
            count,
            seed,
            antithetic: false,
        }
    }

    pub fn sequence(&self, model: &GresModel, params: &SgnnParams, j: usize) -> RealizationSeq {
        let (base, complement) = if self.antithetic {
            (j - j % 2, j % 2 == 1)
        } else {
            (j, false)
        };
        let mut rng = derive_stream(self.seed, &[base as u64]);
        RealizationSeq::sample_with(model, params.arch(), &mut rng, complement)
    }
}

/// Result of one Monte-Carlo evaluation over a block of inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Mean loss over realizations and inputs (`0` when no targets are supplied).
    pub cost: f64,
    /// `(1/n) sum_i E[Phi_i]`, averaged over inputs.
    pub m1: f64,
    /// `(1/n) sum_i E[Phi_i^2]`, averaged over inputs.
    pub m2: f64,
    /// Plug-in variance `(1/n) sum_i (E[Phi_i^2] - E[Phi_i]^2)`, averaged over inputs.
    pub variance: f64,
    /// Plug-in variance of each output entry `(f, i, c)`.
    pub entry_variance: Vec<f64>,
    /// Objective value.
    pub value: f64,
    pub grad: Option<Vec<f64>>,
}

/// Input block and optional targets for an evaluation.
#[derive(Clone, Copy)]
pub struct Block<'a> {
    pub x: &'a [f64],
    pub b: usize,
    pub targets: Option<(&'a LabeledDataset, &'a [usize])>,
}

impl<'a> Block<'a> {
    pub fn inputs(x: &'a [f64], b: usize) -> Self {
        Block { x, b, targets: None }
    }
}

struct PerRealization {
    loss_sum: f64,
    phi: Vec<f64>,
    grad: Option<Vec<f64>>,
    deferred: Option<(RealizationSeq, ForwardTape, Option<Vec<f64>>)>,
}

/// Evaluates `objective` (and optionally its gradient) by averaging over `draws`.
pub fn evaluate(
    params: &SgnnParams,
    model: &GresModel,
    block: Block<'_>,
    draws: Draws,
    objective: Objective,
    want_grad: bool,
) -> Result<Evaluation> {
    let nn = draws.count;
    if nn == 0 {
        return Err(SgnnError::Config("at least one realization is required".into()));
    }
    if draws.antithetic && nn % 2 == 1 {
        return Err(SgnnError::Config("antithetic sampling needs an even count".into()));
    }
    let b = block.b;
    check_len(params.n(), model.n(), "model dimension")?;
    if let Some((_, idx)) = block.targets {
        check_len(b, idx.len(), "target indices")?;
    }
    let entries = params.arch().out_features() * params.n();
    let scale_out = 1.0 / (nn * b) as f64;
    let scale_mom = 1.0 / (nn * b * entries) as f64;
    let two_pass = want_grad && objective.needs_means();
    let lag = match objective {
        Objective::Lagrangian { gamma, .. } if !gamma.is_zero() => Some(gamma),
        _ => None,
    };

    let per: Vec<PerRealization> = map_indexed(nn, |j| -> Result<PerRealization> {
        let seq = draws.sequence(model, params, j);
        let bound = seq.bind(model);
        let tape = forward(params, &bound, block.x, b)?;
        let mut gout = (want_grad && block.targets.is_some()).then(|| vec![0.0; tape.output().len()]);
        let loss_sum = match block.targets {
            Some((ds, idx)) => ds
                .batch_loss(tape.output(), idx, gout.as_deref_mut())?
                .iter()
                .sum(),
            None => 0.0,
        };
        if let Some(g) = gout.as_mut() {
            g.iter_mut().for_each(|v| *v *= scale_out);
        }
        let phi = tape.phi().to_vec();
        if !want_grad {
            return Ok(PerRealization { loss_sum, phi, grad: None, deferred: None });
        }
        if two_pass {
            return Ok(PerRealization {
                loss_sum,
                phi,
                grad: None,
                deferred: Some((seq, tape, gout)),
            });
        }
        let dphi = lag.map(|g| {
            phi.iter()
                .map(|&v| (-g.gamma1 + 2.0 * g.gamma2 * v) * scale_mom)
                .collect::<Vec<f64>>()
        });
        let mut grad = vec![0.0; params.len()];
        backward(
            params,
            &bound,
            &tape,
            Upstream { output: gout.as_deref(), phi: dphi.as_deref() },
            &mut grad,
        )?;
        Ok(PerRealization { loss_sum, phi, grad: Some(grad), deferred: None })
    })?;

    let len = entries * b;
    let mut s1 = vec![0.0; len];
    let mut s2 = vec![0.0; len];
    let mut loss = 0.0;
    for r in &per {
        loss += r.loss_sum;
        for ((a, q), &v) in s1.iter_mut().zip(s2.iter_mut()).zip(&r.phi) {
            *a += v;
            *q += v * v;
        }
    }
    let inv = 1.0 / nn as f64;
    let mean: Vec<f64> = s1.iter().map(|v| v * inv).collect();
    let entry_variance: Vec<f64> = s2
        .iter()
        .zip(&mean)
        .map(|(q, m)| (q * inv - m * m).max(0.0))
        .collect();
    let cost = if block.targets.is_some() { loss * scale_out } else { 0.0 };
    let denom = len as f64;
    let m1 = s1.iter().sum::<f64>() * inv / denom;
    let m2 = s2.iter().sum::<f64>() * inv / denom;
    let variance = entry_variance.iter().sum::<f64>() / denom;

    let value = match objective {
        Objective::Cost => cost,
        Objective::Lagrangian { gamma, c_f, c_s } => {
            cost + gamma.gamma1 * (c_f - m1) - gamma.gamma2 * (c_s - m2)
        }
        Objective::Regularized { beta } => cost + beta * variance,
        Objective::VarianceLagrangian { gamma, c_v } => cost + gamma * (variance - c_v),
    };
    if !value.is_finite() {
        return Err(SgnnError::Numerical(format!("objective evaluated to {value}")));
    }

    let grad = if !want_grad {
        None
    } else if two_pass {
        let w = objective.variance_weight();
        let coef = 2.0 * w * scale_mom;
        let parts: Vec<Vec<f64>> = map_indexed(nn, |j| -> Result<Vec<f64>> {
            let (seq, tape, gout) = per[j].deferred.as_ref().expect("kept for the second pass");
            let dphi: Vec<f64> = per[j]
                .phi
                .iter()
                .zip(&mean)
                .map(|(v, m)| coef * (v - m))
                .collect();
            let mut g = vec![0.0; params.len()];
            backward(
                params,
                &seq.bind(model),
                tape,
                Upstream { output: gout.as_deref(), phi: Some(&dphi) },
                &mut g,
            )?;
            Ok(g)
        })?;
        Some(sum_in_order(parts.iter().map(Vec::as_slice), params.len()))
    } else {
        Some(sum_in_order(
            per.iter().map(|r| r.grad.as_deref().expect("single pass keeps gradients")),
            params.len(),
        ))
    };

    Ok(Evaluation {
        cost,
        m1,
        m2,
        variance,
        entry_variance,
        value,
        grad,
    })
}

fn sum_in_order<'a>(parts: impl Iterator<Item = &'a [f64]>, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for p in parts {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    out
}

/// Objective on a dataset mini-batch.
pub fn evaluate_batch(
    params: &SgnnParams,
    model: &GresModel,
    data: &LabeledDataset,
    indices: &[usize],
    draws: Draws,
    objective: Objective,
    want_grad: bool,
) -> Result<Evaluation> {
    let x = data.batch(indices);
    let block = Block {
        x: &x,
        b: indices.len(),
        targets: Some((data, indices)),
    };
    evaluate(params, model, block, draws, objective, want_grad)
}
