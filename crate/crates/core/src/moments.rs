//! Monte-Carlo estimates of the expected cost, output moments, and deviation probabilities.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{check_len, Result, SgnnError};
use crate::gres::GresModel;
use crate::model::{forward, Architecture, RealizationSeq, SgnnParams};
use crate::objective::{evaluate, evaluate_batch, Block, Draws, Objective};
use crate::parallel::map_indexed;

/// Realization count and seed for an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McConfig {
    pub n_realizations: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub antithetic: bool,
}

impl McConfig {
    pub fn new(n_realizations: usize, master_seed: u64) -> Self {
        McConfig {
            n_realizations,
            master_seed,
            antithetic: false,
        }
    }

    fn draws(&self) -> Draws {
        Draws {
            count: self.n_realizations,
            seed: self.master_seed,
            antithetic: self.antithetic,
        }
    }
}

/// Empirical moments of the pre-readout output for one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub mean_cost: f64,
    pub first_moment: f64,
    pub second_moment: f64,
    pub variance: f64,
    pub per_node_variance: Vec<f64>,
    pub n_samples: usize,
}

/// Draws the shifts for one forward pass.
pub fn sample_realization_seq<R: RngCore + ?Sized>(
    model: &GresModel,
    arch: &Architecture,
    rng: &mut R,
) -> RealizationSeq {
    RealizationSeq::sample(model, arch, rng)
}

/// `(1/N) sum_j` mean batch loss under realization `j`.
pub fn estimate_cost(
    params: &SgnnParams,
    model: &GresModel,
    data: &LabeledDataset,
    indices: &[usize],
    cfg: &McConfig,
) -> Result<f64> {
    Ok(evaluate_batch(params, model, data, indices, cfg.draws(), Objective::Cost, false)?.cost)
}

/// Plug-in moments of `Phi(x)` over `cfg.n_realizations` draws.
pub fn estimate_moments(
    params: &SgnnParams,
    model: &GresModel,
    x: &[f64],
    cfg: &McConfig,
) -> Result<MomentReport> {
    check_len(params.n() * params.arch().widths[0], x.len(), "moment input")?;
    if cfg.n_realizations < 2 {
        return Err(SgnnError::Config(
            "variance estimation needs at least two realizations".into(),
        ));
    }
    let e = evaluate(params, model, Block::inputs(x, 1), cfg.draws(), Objective::Cost, false)?;
    Ok(MomentReport {
        mean_cost: e.cost,
        first_moment: e.m1,
        second_moment: e.m2,
        variance: e.variance,
        per_node_variance: e.entry_variance,
        n_samples: cfg.n_realizations,
    })
}

/// Squared deviations `(1/n) ||Phi_j - E[Phi]||^2` for `m` fresh realizations, with the
/// mean estimated from an independent batch of `m` realizations.
pub fn deviation_samples(
    params: &SgnnParams,
    model: &GresModel,
    x: &[f64],
    m: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let reference = Draws::new(m, crate::rng::derive_seed(seed, &[0]));
    let fresh = Draws::new(m, crate::rng::derive_seed(seed, &[1]));
    let outputs = |d: Draws| {
        map_indexed(m, |j| -> Result<Vec<f64>> {
            let seq = d.sequence(model, params, j);
            Ok(forward(params, &seq.bind(model), x, 1)?.phi().to_vec())
        })
    };
    let refs = outputs(reference)?;
    let len = refs.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; len];
    for r in &refs {
        for (a, v) in mean.iter_mut().zip(r) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= m as f64);
    Ok(outputs(fresh)?
        .iter()
        .map(|phi| {
            phi.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / len as f64
        })
        .collect())
}

/// Empirical `Pr[(1/n) ||Phi - E[Phi]||^2 <= eps]`.
pub fn deviation_probability(
    params: &SgnnParams,
    model: &GresModel,
    x: &[f64],
    eps: f64,
    m: usize,
    seed: u64,
) -> Result<f64> {
    if m < 100 {
        return Err(SgnnError::Config("deviation probability needs at least 100 realizations".into()));
    }
    let d = deviation_samples(params, model, x, m, seed)?;
    Ok(fraction_within(&d, eps))
}

pub fn fraction_within(deviations: &[f64], eps: f64) -> f64 {
    deviations.iter().filter(|&&v| v <= eps).count() as f64 / deviations.len() as f64
}
