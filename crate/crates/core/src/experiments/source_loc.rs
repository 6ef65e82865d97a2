//! Source localization on a stochastic block model: identify which community a
//! diffused impulse started in.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Inputs, LabeledDataset, Labels, Split};
use crate::error::{Result, SgnnError};
use crate::generators::{communities, sbm};
use crate::graph::{Graph, ShiftKind, ShiftOperator};
use crate::gres::GresModel;

/// Train/validation/test sizes at full scale.
pub const FULL_SIZES: [usize; 3] = [10_000, 2_500, 2_500];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceLocConfig {
    pub n: usize,
    pub communities: usize,
    pub p_intra: f64,
    pub p_inter: f64,
    /// Fraction of [`FULL_SIZES`] to generate.
    pub desk_scale_factor: f64,
    pub t_max: usize,
    /// Noise standard deviation relative to a unit impulse.
    pub noise_std: f64,
    /// Signal scale; `sqrt(n)` when unset.
    pub amplitude: Option<f64>,
    /// Only this many nominal edges (chosen at random) are droppable; all when unset.
    pub droppable: Option<usize>,
}

impl Default for SourceLocConfig {
    fn default() -> Self {
        SourceLocConfig {
            n: 50,
            communities: 5,
            p_intra: 0.8,
            p_inter: 0.2,
            desk_scale_factor: 0.3,
            t_max: 50,
            noise_std: 0.1,
            amplitude: None,
            droppable: None,
        }
    }
}

impl SourceLocConfig {
    pub fn sizes(&self) -> [usize; 3] {
        FULL_SIZES.map(|s| (s as f64 * self.desk_scale_factor).round() as usize)
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude.unwrap_or((self.n as f64).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SgnnError::Config(m.to_string()));
        if self.communities == 0 || self.communities > self.n {
            return bad("need between 1 and n communities");
        }
        if !(self.desk_scale_factor > 0.0) || !(self.noise_std >= 0.0) {
            return bad("desk_scale_factor must be positive and noise_std nonnegative");
        }
        if self.sizes()[0] == 0 {
            return bad("training split is empty at this scale");
        }
        if let Some(a) = self.amplitude {
            if !(a > 0.0 && a.is_finite()) {
                return bad("amplitude must be positive");
            }
        }
        Ok(())
    }
}

pub struct SourceLocTask {
    /// Nominal graph with weights divided by the adjacency spectral radius.
    pub graph: Graph,
    pub model: GresModel,
    pub data: LabeledDataset,
    /// Source node of each community.
    pub sources: Vec<usize>,
    pub community: Vec<usize>,
}

/// Highest-degree node of each community, lowest index on ties.
pub fn community_sources(graph: &Graph, community: &[usize], c: usize) -> Vec<usize> {
    let deg = graph.degrees();
    (0..c)
        .map(|k| {
            let mut best = usize::MAX;
            for i in (0..graph.n()).filter(|&i| community[i] == k) {
                if best == usize::MAX || deg[i] > deg[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// `S^t delta_s` for every source and `t = 0..=t_max`, indexed `[source][t]`.
pub fn diffusions(shift: &ShiftOperator, sources: &[usize], t_max: usize) -> Result<Vec<Vec<Vec<f64>>>> {
    let n = shift.n();
    sources
        .iter()
        .map(|&s| {
            let mut x = vec![0.0; n];
            x[s] = 1.0;
            let mut out = Vec::with_capacity(t_max + 1);
            out.push(x.clone());
            for _ in 0..t_max {
                x = shift.mul_vec(&x)?;
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(SgnnError::Numerical("diffusion overflowed".into()));
                }
                out.push(x.clone());
            }
            Ok(out)
        })
        .collect()
}

/// Draws the graph, the random-edge model with drop probability `p`, and the labeled
/// samples, in that order from `rng`.
pub fn gen_source_localization<R: Rng + ?Sized>(
    cfg: &SourceLocConfig,
    p: f64,
    rng: &mut R,
) -> Result<SourceLocTask> {
    cfg.validate()?;
    let raw = sbm(cfg.n, cfg.communities, cfg.p_intra, cfg.p_inter, rng)?;
    let rho = ShiftOperator::from_graph(&raw, ShiftKind::Adjacency).spectral_radius()?;
    if rho == 0.0 {
        return Err(SgnnError::InvalidGraph("sampled graph has no edges".into()));
    }
    let graph = raw.scaled(1.0 / rho);
    let model = match cfg.droppable {
        None => GresModel::all_droppable(graph.clone(), ShiftKind::Adjacency, p)?,
        Some(m) => {
            if m > graph.num_edges() {
                return Err(SgnnError::Config(format!(
                    "{m} droppable edges requested but the graph has {}",
                    graph.num_edges()
                )));
            }
            let mut pick: Vec<usize> = sample_indices(rng, graph.num_edges(), m).into_vec();
            pick.sort_unstable();
            let pairs: Vec<(usize, usize)> = pick.iter().map(|&k| graph.edges()[k].key()).collect();
            GresModel::new(graph.clone(), ShiftKind::Adjacency, &pairs, Vec::new(), p, 0.0)?
        }
    };

    let community = communities(cfg.n, cfg.communities);
    let sources = community_sources(&graph, &community, cfg.communities);
    let shift = ShiftOperator::from_graph(&graph, ShiftKind::Adjacency);
    let diff = diffusions(&shift, &sources, cfg.t_max)?;

    let sizes = cfg.sizes();
    let total: usize = sizes.iter().sum();
    let alpha = cfg.amplitude();
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| SgnnError::Config(e.to_string()))?;
    let mut inputs = Vec::with_capacity(total * cfg.n);
    let mut labels = Vec::with_capacity(total);
    for _ in 0..total {
        let s = rng.random_range(0..cfg.communities);
        let t = rng.random_range(0..=cfg.t_max);
        for &v in &diff[s][t] {
            let e: f64 = noise.sample(rng);
            inputs.push(alpha * (v + e));
        }
        labels.push(s);
    }
    let split = Split::random(total, sizes, rng)?;
    let data = LabeledDataset::new(
        cfg.n,
        Inputs::Dense(inputs),
        Labels::Classes {
            labels,
            num_classes: cfg.communities,
        },
        split,
    )?;
    Ok(SourceLocTask {
        graph,
        model,
        data,
        sources,
        community,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn full_scale_sizes() {
        let cfg = SourceLocConfig {
            desk_scale_factor: 1.0,
            ..Default::default()
        };
        assert_eq!(cfg.sizes(), FULL_SIZES);
        assert_eq!(SourceLocConfig::default().sizes(), [3000, 750, 750]);
    }

    #[test]
    fn zero_time_no_noise_is_an_impulse() {
        let cfg = SourceLocConfig {
            desk_scale_factor: 0.002,
            noise_std: 0.0,
            t_max: 0,
            amplitude: Some(1.0),
            ..Default::default()
        };
        let task = gen_source_localization(&cfg, 0.1, &mut stream(4)).unwrap();
        for idx in 0..task.data.len() {
            let x = task.data.input(idx);
            let Labels::Classes { labels, .. } = task.data.labels() else {
                unreachable!()
            };
            let s = task.sources[labels[idx]];
            for (i, v) in x.iter().enumerate() {
                assert_eq!(*v, if i == s { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn long_diffusion_stays_finite() {
        let cfg = SourceLocConfig {
            desk_scale_factor: 0.01,
            ..Default::default()
        };
        let task = gen_source_localization(&cfg, 0.0, &mut stream(1)).unwrap();
        let shift = ShiftOperator::from_graph(&task.graph, ShiftKind::Adjacency);
        let d = diffusions(&shift, &task.sources, 50).unwrap();
        assert!(d.iter().flatten().flatten().all(|v| v.is_finite() && v.abs() <= 1.0 + 1e-9));
    }
}
