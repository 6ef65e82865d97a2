//! Forward passes and gradients against independent reference computations.

mod common;

use common::*;
use ndarray::Array2;
use sgnn_core::graph::{ShiftKind, ShiftOperator};
use sgnn_core::linalg::eigh;
use sgnn_core::model::{
    filter_apply, forward, frequency_response, Architecture, ExplicitSeq, ReadoutKind, RealizationSeq, SgnnParams,
};
use sgnn_core::objective::{DualVars, Draws, Objective};
use sgnn_core::rng::stream;

fn matvec(m: &Array2<f64>, x: &[f64]) -> Vec<f64> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[[i, j]] * x[j]).sum()).collect()
}

/// Plain nested-loop network on one input, final output (readout applied if present).
fn reference_forward(params: &SgnnParams, mats: &[Array2<f64>], x: &[f64]) -> Vec<f64> {
    let arch: &Architecture = params.arch();
    let n = params.n();
    let mut feats: Vec<Vec<f64>> = vec![x.to_vec()];
    for l in 0..arch.layers() {
        let mut next = Vec::new();
        for f in 0..arch.widths[l + 1] {
            let mut u = vec![0.0; n];
            for (g, xg) in feats.iter().enumerate() {
                let taps = params.taps(l, f, g);
                let mut z = xg.clone();
                for i in 0..n {
                    u[i] += taps[0] * z[i];
                }
                for k in 1..=arch.k {
                    z = matvec(&mats[arch.slot(l, f, g, k)], &z);
                    for i in 0..n {
                        u[i] += taps[k] * z[i];
                    }
                }
            }
            next.push(u.into_iter().map(|v| arch.activation.apply(v)).collect());
        }
        feats = next;
    }
    let fl = arch.out_features();
    match arch.readout {
        None => feats.concat(),
        Some(r) => {
            let w = params.readout_weights();
            let bias = params.readout_bias();
            match r.kind {
                ReadoutKind::Dense => (0..r.out_dim)
                    .map(|c| {
                        let mut s = bias[c];
                        for (f, phi) in feats.iter().enumerate() {
                            for (i, v) in phi.iter().enumerate() {
                                s += w[c * n * fl + i * fl + f] * v;
                            }
                        }
                        s
                    })
                    .collect(),
                ReadoutKind::PerNode => (0..r.out_dim)
                    .flat_map(|c| {
                        let feats = &feats;
                        (0..n).map(move |i| bias[c] + (0..fl).map(|f| w[c * fl + f] * feats[f][i]).sum::<f64>())
                    })
                    .collect(),
            }
        }
    }
}

#[test]
fn batched_forward_matches_reference_loops() {
    let mut rng = stream(101);
    for which in 0..24 {
        let inst = random_instance(which, &mut rng);
        let arch = inst.params.arch().clone();
        let seq = RealizationSeq::sample(&inst.model, &arch, &mut rng);
        let mats: Vec<Array2<f64>> = seq
            .realizations()
            .iter()
            .map(|r| inst.model.to_shift(r).into_matrix())
            .collect();
        let b = inst.batch.len();
        let x = inst.data.batch(&inst.batch);
        let tape = forward(&inst.params, &seq.bind(&inst.model), &x, b).unwrap();
        let out = tape.output();
        let len = out.len() / b;
        for c in 0..b {
            let expect = reference_forward(&inst.params, &mats, &inst.data.input(c));
            assert_eq!(expect.len(), len);
            for (e, v) in expect.iter().enumerate() {
                let got = out[e * b + c];
                assert!((got - v).abs() <= 1e-12 * (1.0 + v.abs()), "instance {which}: {got} vs {v}");
            }
        }
        // Sparse realized operators agree with their dense matrices.
        let explicit = ExplicitSeq {
            shifts: mats.iter().map(|m| ShiftOperator::new(ShiftKind::Adjacency, m.clone()).unwrap()).collect(),
        };
        let dense = forward(&inst.params, &explicit, &x, b).unwrap();
        for (a, d) in out.iter().zip(dense.output()) {
            assert!((a - d).abs() <= 1e-12 * (1.0 + d.abs()));
        }
    }
}

#[test]
fn fixed_shift_filter_is_a_spectral_multiplier() {
    let mut rng = stream(7);
    for trial in 0..10 {
        let n = 3 + trial % 5;
        let kind = if trial % 2 == 0 { ShiftKind::Adjacency } else { ShiftKind::Laplacian };
        let model = random_model(n, kind, &mut rng);
        let s = model.nominal().clone();
        let taps = gaussian(4, &mut rng);
        let x = gaussian(n, &mut rng);
        let y = filter_apply(&taps, &[s.clone(), s.clone(), s.clone()], &x).unwrap();
        let eig = eigh(s.matrix()).unwrap();
        let x_hat = eig.gft(&x).unwrap();
        let scaled: Vec<f64> = x_hat
            .iter()
            .zip(eig.eigenvalues.iter())
            .map(|(v, &lam)| v * frequency_response(&taps, &[lam, lam, lam]))
            .collect();
        let expect = eig.igft(&scaled).unwrap();
        for (a, b) in y.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }
}

#[test]
fn gradients_match_central_differences() {
    let mut rng = stream(2024);
    let mut worst = 0.0f64;
    for which in 0..24 {
        let inst = random_instance(which, &mut rng);
        let draws = Draws::new(3, 900 + which as u64);
        let objectives = [
            Objective::Cost,
            Objective::Lagrangian {
                gamma: DualVars { gamma1: 0.4, gamma2: 0.7 },
                c_f: 0.1,
                c_s: 0.3,
            },
            Objective::Regularized { beta: 0.5 },
            Objective::VarianceLagrangian { gamma: 0.6, c_v: 0.2 },
        ];
        for obj in objectives {
            let a = analytic_gradient(&inst, draws, obj);
            let f = fd_gradient(&inst, draws, obj, 1e-5);
            let e = relative_error(&a, &f);
            worst = worst.max(e);
            assert!(e < 1e-5, "instance {which} {obj:?}: relative error {e:e}");
        }
    }
    assert!(worst.is_finite());
}
