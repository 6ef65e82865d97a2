#![allow(dead_code)]

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use sgnn_core::data::{Inputs, LabeledDataset, Labels, Split};
use sgnn_core::graph::{Edge, Graph, ShiftKind};
use sgnn_core::gres::GresModel;
use sgnn_core::model::{Activation, Architecture, Readout, ReadoutKind, RealizationMode, SgnnParams};
use sgnn_core::objective::{evaluate, Block, Draws, Objective};

pub const ACTIVATIONS: [Activation; 4] = [
    Activation::Relu,
    Activation::LeakyRelu { slope: 0.1 },
    Activation::Abs,
    Activation::Identity,
];

pub fn gaussian<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

/// Random weighted graph on `n` nodes with a random subset droppable and a few addable
/// non-edges.
pub fn random_model<R: Rng + ?Sized>(n: usize, kind: ShiftKind, rng: &mut R) -> GresModel {
    let mut nominal = Vec::new();
    let mut absent = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(0.5) {
                nominal.push(Edge::new(i, j, rng.random_range(0.2..0.6)));
            } else {
                absent.push(Edge::new(i, j, rng.random_range(0.2..0.6)));
            }
        }
    }
    let drop: Vec<(usize, usize)> = nominal.iter().filter(|_| rng.random_bool(0.7)).map(|e| e.key()).collect();
    absent.truncate(3);
    let p = rng.random_range(0.1..0.5);
    let q = rng.random_range(0.1..0.5);
    GresModel::new(Graph::new(n, nominal).unwrap(), kind, &drop, absent, p, q).unwrap()
}

pub struct Instance {
    pub model: GresModel,
    pub params: SgnnParams,
    pub data: LabeledDataset,
    pub batch: Vec<usize>,
}

/// Small random network, model, and labeled batch. `which` picks the activation and
/// readout so that a run over consecutive values covers every combination.
pub fn random_instance<R: Rng + ?Sized>(which: usize, rng: &mut R) -> Instance {
    let n = rng.random_range(3..=8);
    let kind = if rng.random_bool(0.5) { ShiftKind::Adjacency } else { ShiftKind::Laplacian };
    let model = random_model(n, kind, rng);
    let layers = rng.random_range(1..=2);
    let mut widths = vec![1];
    for _ in 0..layers {
        widths.push(rng.random_range(1..=3));
    }
    let activation = ACTIVATIONS[which % 4];
    let readout_choice = (which / 4) % 3;
    let classes = 3;
    let readout = match readout_choice {
        0 => Some(Readout { kind: ReadoutKind::Dense, out_dim: classes }),
        1 => Some(Readout { kind: ReadoutKind::PerNode, out_dim: 1 }),
        _ => {
            *widths.last_mut().unwrap() = 1;
            None
        }
    };
    let arch = Architecture {
        widths,
        k: rng.random_range(1..=3),
        activation,
        readout,
        realization_mode: RealizationMode::PerFilter,
    };
    let params = SgnnParams::init(arch, n, rng).unwrap();
    let b = 3;
    let inputs = gaussian(n * b, rng);
    let labels = if readout_choice == 0 {
        Labels::Classes { labels: (0..b).map(|_| rng.random_range(0..classes)).collect(), num_classes: classes }
    } else {
        Labels::NodeTargets { nodes: (0..b).map(|_| rng.random_range(0..n)).collect(), values: gaussian(b, rng) }
    };
    let split = Split { train: (0..b).collect(), val: vec![], test: vec![] };
    let data = LabeledDataset::new(n, Inputs::Dense(inputs), labels, split).unwrap();
    Instance { model, params, data, batch: (0..b).collect() }
}

pub fn objective_value(inst: &Instance, params: &SgnnParams, draws: Draws, obj: Objective) -> f64 {
    let x = inst.data.batch(&inst.batch);
    let block = Block { x: &x, b: inst.batch.len(), targets: Some((&inst.data, &inst.batch)) };
    evaluate(params, &inst.model, block, draws, obj, false).unwrap().value
}

pub fn analytic_gradient(inst: &Instance, draws: Draws, obj: Objective) -> Vec<f64> {
    let x = inst.data.batch(&inst.batch);
    let block = Block { x: &x, b: inst.batch.len(), targets: Some((&inst.data, &inst.batch)) };
    evaluate(&inst.params, &inst.model, block, draws, obj, true).unwrap().grad.unwrap()
}

/// Central differences with step `h` on every parameter.
pub fn fd_gradient(inst: &Instance, draws: Draws, obj: Objective, h: f64) -> Vec<f64> {
    let mut g = Vec::with_capacity(inst.params.len());
    for i in 0..inst.params.len() {
        let mut plus = inst.params.clone();
        plus.values_mut()[i] += h;
        let mut minus = inst.params.clone();
        minus.values_mut()[i] -= h;
        g.push((objective_value(inst, &plus, draws, obj) - objective_value(inst, &minus, draws, obj)) / (2.0 * h));
    }
    g
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let s = sgnn_core::linalg::norm2(a).max(sgnn_core::linalg::norm2(b));
    if s == 0.0 {
        0.0
    } else {
        d / s
    }
}
