//! MovieLens-100k rating prediction on an item-similarity graph.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use ndarray::Array2;
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Inputs, LabeledDataset, Labels, Split};
use crate::error::{Result, SgnnError};
use crate::generators::ranked_correlations;
use crate::graph::{Graph, ShiftKind};
use crate::gres::GresModel;
use crate::model::{forward, RealizationSeq, SgnnParams};
use crate::rng::derive_stream;

pub const USERS: usize = 943;
pub const ITEMS: usize = 1682;
pub const RATINGS: usize = 100_000;

/// Parses tab-separated `user item rating timestamp` lines with 1-based ids into a
/// users x items matrix sized by the largest ids seen; `0` marks unrated.
pub fn read_ratings<R: Read>(r: R) -> Result<Array2<f64>> {
    let mut triples = Vec::new();
    let (mut users, mut items) = (0usize, 0usize);
    for (k, line) in BufReader::new(r).lines().enumerate() {
        let line_no = k + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| SgnnError::Parse { line: line_no, msg };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            return Err(err(format!("expected at least 3 tab-separated fields, got {}", fields.len())));
        }
        let id = |s: &str, what: &str| -> Result<usize> {
            match s.trim().parse::<usize>() {
                Ok(v) if v >= 1 => Ok(v),
                _ => Err(err(format!("invalid {what} id {s:?}"))),
            }
        };
        let u = id(fields[0], "user")?;
        let i = id(fields[1], "item")?;
        let rating: f64 = match fields[2].trim().parse::<u8>() {
            Ok(v @ 1..=5) => f64::from(v),
            _ => return Err(err(format!("invalid rating {:?}", fields[2]))),
        };
        users = users.max(u);
        items = items.max(i);
        triples.push((line_no, u - 1, i - 1, rating));
    }
    let mut m = Array2::zeros((users, items));
    for (line, u, i, r) in triples {
        if m[[u, i]] != 0.0 {
            return Err(SgnnError::Parse {
                line,
                msg: format!("duplicate rating for user {} item {}", u + 1, i + 1),
            });
        }
        m[[u, i]] = r;
    }
    Ok(m)
}

/// Loads `u.data` and checks the documented shape and rating count.
pub fn load_movielens(path: &Path) -> Result<Array2<f64>> {
    let file = File::open(path).map_err(|e| {
        SgnnError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?;
    let m = read_ratings(file)?;
    if m.dim() != (USERS, ITEMS) {
        return Err(SgnnError::Config(format!(
            "expected {USERS}x{ITEMS} ratings, found {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let count = m.iter().filter(|&&v| v != 0.0).count();
    if count != RATINGS {
        return Err(SgnnError::Config(format!("expected {RATINGS} ratings, found {count}")));
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecSysConfig {
    /// Path of `u.data`; the CLI falls back to `SGNN_MOVIELENS` and then `data/ml-100k/u.data`.
    pub data_path: Option<String>,
    /// Most-correlated pairs forming the nominal (droppable) edge set.
    pub keep_top: usize,
    /// Following pairs forming the addable edge set.
    pub add_next: usize,
    /// Restrict to this many most-rated items.
    pub item_limit: Option<usize>,
    /// Train/validation/test fractions of the hold-out samples.
    pub split: [f64; 3],
    /// Random subset of hold-out samples to use.
    pub max_samples: Option<usize>,
}

impl Default for RecSysConfig {
    fn default() -> Self {
        RecSysConfig {
            data_path: None,
            keep_top: 35,
            add_next: 20,
            item_limit: Some(200),
            split: [0.8, 0.1, 0.1],
            max_samples: Some(20_000),
        }
    }
}

pub struct RecSysTask {
    /// Original item index of every node.
    pub items: Vec<usize>,
    /// Users x nodes raw ratings.
    pub ratings: Array2<f64>,
    pub graph: Graph,
    pub model: GresModel,
    /// Hold-out samples with targets centered by `mu`.
    pub data: LabeledDataset,
    /// Mean training rating.
    pub mu: f64,
}

/// Items sorted by descending rating count (lowest index on ties), first `limit` kept,
/// returned in ascending index order.
pub fn most_rated_items(ratings: &Array2<f64>, limit: usize) -> Vec<usize> {
    let counts: Vec<usize> = (0..ratings.ncols())
        .map(|j| ratings.column(j).iter().filter(|&&v| v != 0.0).count())
        .collect();
    let mut order: Vec<usize> = (0..ratings.ncols()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut keep: Vec<usize> = order.into_iter().take(limit).collect();
    keep.sort_unstable();
    keep
}

/// Item graph, random-edge model with `p = q`, and hold-one-out samples.
pub fn build_recsys_task<R: Rng + ?Sized>(
    ratings: &Array2<f64>,
    cfg: &RecSysConfig,
    p: f64,
    rng: &mut R,
) -> Result<RecSysTask> {
    let items = match cfg.item_limit {
        Some(l) => most_rated_items(ratings, l.min(ratings.ncols())),
        None => (0..ratings.ncols()).collect(),
    };
    let n = items.len();
    let sub = Array2::from_shape_fn((ratings.nrows(), n), |(u, k)| ratings[[u, items[k]]]);
    let ranked = ranked_correlations(&sub);
    if ranked.len() < cfg.keep_top + cfg.add_next {
        return Err(SgnnError::Config(format!(
            "only {} correlated pairs, {} needed",
            ranked.len(),
            cfg.keep_top + cfg.add_next
        )));
    }
    let graph = Graph::new(n, ranked[..cfg.keep_top].iter().copied())?;
    let drop: Vec<(usize, usize)> = graph.edges().iter().map(|e| e.key()).collect();
    let add = ranked[cfg.keep_top..cfg.keep_top + cfg.add_next].to_vec();
    let model = GresModel::new(graph.clone(), ShiftKind::Adjacency, &drop, add, p, p)?;

    let mut samples = Vec::new();
    for u in 0..sub.nrows() {
        let rated: Vec<usize> = (0..n).filter(|&k| sub[[u, k]] != 0.0).collect();
        // A single rating leaves nothing to predict from.
        if rated.len() >= 2 {
            samples.extend(rated.into_iter().map(|k| (u, k)));
        }
    }
    if let Some(cap) = cfg.max_samples {
        if cap < samples.len() {
            let mut pick = sample_indices(rng, samples.len(), cap).into_vec();
            pick.sort_unstable();
            samples = pick.into_iter().map(|k| samples[k]).collect();
        }
    }
    let total = samples.len();
    if cfg.split.iter().any(|f| !(*f >= 0.0)) || (cfg.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(SgnnError::Config("split fractions must be nonnegative and sum to 1".into()));
    }
    let n_train = (cfg.split[0] * total as f64).round() as usize;
    let n_val = ((cfg.split[1] * total as f64).round() as usize).min(total - n_train);
    let split = Split::random(total, [n_train, n_val, total - n_train - n_val], rng)?;
    if split.train.is_empty() {
        return Err(SgnnError::Config("no training samples".into()));
    }
    let mu = split.train.iter().map(|&s| sub[[samples[s].0, samples[s].1]]).sum::<f64>()
        / split.train.len() as f64;
    let nodes: Vec<usize> = samples.iter().map(|&(_, k)| k).collect();
    let values: Vec<f64> = samples.iter().map(|&(u, k)| sub[[u, k]] - mu).collect();
    let rows = sub.iter().copied().collect();
    let data = LabeledDataset::new(
        n,
        Inputs::HoldOut { rows, samples },
        Labels::NodeTargets { nodes, values },
        split,
    )?;
    Ok(RecSysTask {
        items,
        ratings: sub,
        graph,
        model,
        data,
        mu,
    })
}

/// Top-`k` unrated nodes per user under one realization each (drawn from `(seed, [user])`).
/// Ties go to the lower node index. Users without ratings are skipped.
pub fn recommend(params: &SgnnParams, task: &RecSysTask, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let users: Vec<usize> = (0..task.ratings.nrows())
        .filter(|&u| task.ratings.row(u).iter().any(|&v| v != 0.0))
        .collect();
    crate::parallel::map_indexed(users.len(), |idx| -> Result<Vec<usize>> {
        let u = users[idx];
        let x = task.ratings.row(u).to_vec();
        let mut rng = derive_stream(seed, &[u as u64]);
        let seq = RealizationSeq::sample(&task.model, params.arch(), &mut rng);
        let tape = forward(params, &seq.bind(&task.model), &x, 1)?;
        let scores = tape.output();
        let mut cand: Vec<usize> = (0..x.len()).filter(|&i| x[i] == 0.0).collect();
        cand.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        cand.truncate(k);
        Ok(cand)
    })
}
