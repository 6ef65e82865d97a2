//! Labeled graph-signal datasets and their batch losses.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result, SgnnError};
use crate::loss::{argmax, cross_entropy_grad};

/// Signals on `n` nodes.
#[derive(Debug, Clone, PartialEq)]
pub enum Inputs {
    /// One stored signal per sample, `len * n` values.
    Dense(Vec<f64>),
    /// Row `u` of `rows` (`users * n`) with node `held_out` zeroed, per sample `(u, held_out)`.
    HoldOut {
        rows: Vec<f64>,
        samples: Vec<(usize, usize)>,
    },
}

/// Targets per sample.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Classes { labels: Vec<usize>, num_classes: usize },
    /// Scalar target observed at a single node.
    NodeTargets { nodes: Vec<usize>, values: Vec<f64> },
}

/// Train, validation, and test index lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Seeded shuffle of `0..len` cut into consecutive parts of the given sizes.
    pub fn random<R: Rng + ?Sized>(len: usize, sizes: [usize; 3], rng: &mut R) -> Result<Self> {
        if sizes.iter().sum::<usize>() != len {
            return Err(SgnnError::Config(format!(
                "split sizes {sizes:?} do not add up to {len}"
            )));
        }
        let mut idx: Vec<usize> = (0..len).collect();
        idx.shuffle(rng);
        let test = idx.split_off(sizes[0] + sizes[1]);
        let val = idx.split_off(sizes[0]);
        Ok(Split { train: idx, val, test })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    n: usize,
    inputs: Inputs,
    labels: Labels,
    split: Split,
}

impl LabeledDataset {
    pub fn new(n: usize, inputs: Inputs, labels: Labels, split: Split) -> Result<Self> {
        let len = match &inputs {
            Inputs::Dense(v) => {
                if n == 0 || v.len() % n != 0 {
                    return Err(SgnnError::Config("dense inputs are not a multiple of n".into()));
                }
                v.len() / n
            }
            Inputs::HoldOut { rows, samples } => {
                if n == 0 || rows.len() % n != 0 {
                    return Err(SgnnError::Config("hold-out rows are not a multiple of n".into()));
                }
                let users = rows.len() / n;
                if samples.iter().any(|&(u, i)| u >= users || i >= n) {
                    return Err(SgnnError::Config("hold-out sample out of range".into()));
                }
                samples.len()
            }
        };
        match &labels {
            Labels::Classes { labels, num_classes } => {
                check_len(len, labels.len(), "class labels")?;
                if labels.iter().any(|&c| c >= *num_classes) {
                    return Err(SgnnError::Config("class label out of range".into()));
                }
            }
            Labels::NodeTargets { nodes, values } => {
                check_len(len, nodes.len(), "target nodes")?;
                check_len(len, values.len(), "target values")?;
                if nodes.iter().any(|&i| i >= n) {
                    return Err(SgnnError::Config("target node out of range".into()));
                }
            }
        }
        let mut all: Vec<usize> = split
            .train
            .iter()
            .chain(&split.val)
            .chain(&split.test)
            .copied()
            .collect();
        all.sort_unstable();
        if all.len() != len || all.iter().enumerate().any(|(k, &v)| k != v) {
            return Err(SgnnError::Config("split is not a partition of the samples".into()));
        }
        Ok(LabeledDataset {
            n,
            inputs,
            labels,
            split,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn len(&self) -> usize {
        match &self.labels {
            Labels::Classes { labels, .. } => labels.len(),
            Labels::NodeTargets { nodes, .. } => nodes.len(),
        }
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn split(&self) -> &Split {
        &self.split
    }
    pub fn labels(&self) -> &Labels {
        &self.labels
    }
    pub fn inputs(&self) -> &Inputs {
        &self.inputs
    }

    /// Signal of sample `idx`.
    pub fn input(&self, idx: usize) -> Vec<f64> {
        let n = self.n;
        match &self.inputs {
            Inputs::Dense(v) => v[idx * n..(idx + 1) * n].to_vec(),
            Inputs::HoldOut { rows, samples } => {
                let (u, h) = samples[idx];
                let mut x = rows[u * n..(u + 1) * n].to_vec();
                x[h] = 0.0;
                x
            }
        }
    }

    /// Node-major block of the given samples.
    pub fn batch(&self, indices: &[usize]) -> Vec<f64> {
        let n = self.n;
        let b = indices.len();
        let mut out = vec![0.0; n * b];
        for (c, &idx) in indices.iter().enumerate() {
            for (i, v) in self.input(idx).into_iter().enumerate() {
                out[i * b + c] = v;
            }
        }
        out
    }

    /// Per-sample losses of a batch output; when `grad` is given it receives the
    /// gradient of each sample's loss with respect to the output block.
    ///
    /// Class labels read `[class][sample]` scores; node targets read `[node][sample]`.
    pub fn batch_loss(
        &self,
        output: &[f64],
        indices: &[usize],
        mut grad: Option<&mut [f64]>,
    ) -> Result<Vec<f64>> {
        let b = indices.len();
        if let Some(g) = grad.as_deref_mut() {
            check_len(output.len(), g.len(), "loss gradient buffer")?;
            g.fill(0.0);
        }
        match &self.labels {
            Labels::Classes { labels, num_classes } => {
                check_len(num_classes * b, output.len(), "class scores")?;
                let mut logits = vec![0.0; *num_classes];
                let mut gl = vec![0.0; *num_classes];
                let mut out = Vec::with_capacity(b);
                for (c, &idx) in indices.iter().enumerate() {
                    for (k, z) in logits.iter_mut().enumerate() {
                        *z = output[k * b + c];
                    }
                    let v = cross_entropy_grad(&logits, labels[idx], &mut gl);
                    if let Some(g) = grad.as_deref_mut() {
                        for (k, d) in gl.iter().enumerate() {
                            g[k * b + c] = *d;
                        }
                    }
                    out.push(v);
                }
                Ok(out)
            }
            Labels::NodeTargets { nodes, values } => {
                check_len(self.n * b, output.len(), "node predictions")?;
                let mut out = Vec::with_capacity(b);
                for (c, &idx) in indices.iter().enumerate() {
                    let pos = nodes[idx] * b + c;
                    let r = output[pos] - values[idx];
                    if let Some(g) = grad.as_deref_mut() {
                        g[pos] = 2.0 * r;
                    }
                    out.push(r * r);
                }
                Ok(out)
            }
        }
    }

    /// Argmax class per sample from `[class][sample]` scores.
    pub fn predict_classes(output: &[f64], num_classes: usize, b: usize) -> Vec<usize> {
        (0..b)
            .map(|c| {
                let logits: Vec<f64> = (0..num_classes).map(|k| output[k * b + c]).collect();
                argmax(&logits)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn split_is_a_seeded_partition() {
        let a = Split::random(10, [6, 2, 2], &mut stream(3)).unwrap();
        let b = Split::random(10, [6, 2, 2], &mut stream(3)).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<usize> = a.train.iter().chain(&a.val).chain(&a.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(Split::random(10, [6, 2, 1], &mut stream(3)).is_err());
    }

    #[test]
    fn hold_out_zeroes_target() {
        let rows = vec![1.0, 2.0, 3.0, 4.0, 0.0, 5.0];
        let ds = LabeledDataset::new(
            3,
            Inputs::HoldOut {
                rows,
                samples: vec![(0, 1), (1, 2)],
            },
            Labels::NodeTargets {
                nodes: vec![1, 2],
                values: vec![2.0, 5.0],
            },
            Split {
                train: vec![0],
                val: vec![],
                test: vec![1],
            },
        )
        .unwrap();
        assert_eq!(ds.input(0), vec![1.0, 0.0, 3.0]);
        assert_eq!(ds.batch(&[0, 1]), vec![1.0, 4.0, 0.0, 0.0, 3.0, 0.0]);
        let out = vec![0.0, 0.0, 1.0, 0.0, 0.0, 4.0];
        let mut g = vec![0.0; 6];
        let l = ds.batch_loss(&out, &[0, 1], Some(&mut g)).unwrap();
        assert_eq!(l, vec![1.0, 1.0]);
        assert_eq!(g, vec![0.0, 0.0, -2.0, 0.0, 0.0, -2.0]);
    }
}
