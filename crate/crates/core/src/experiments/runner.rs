//! Experiment configuration and the (graph seed x p x mode) sweep.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, Labels};
use crate::error::{Result, SgnnError};
use crate::experiments::metrics::{ad_at_k, mean_std};
use crate::experiments::recsys::{build_recsys_task, load_movielens, recommend, RecSysConfig, RecSysTask};
use crate::experiments::source_loc::{gen_source_localization, SourceLocConfig, SourceLocTask};
use crate::gres::GresModel;
use crate::model::{
    forward, Activation, Architecture, Readout, ReadoutKind, RealizationMode, RealizationSeq, SgnnParams,
    DEFAULT_LEAKY_SLOPE,
};
use crate::objective::{evaluate_batch, DualVars, Draws, Objective};
use crate::parallel::map_indexed;
use crate::rng::{derive_seed, derive_stream};
use crate::training::{Mode, Optimizer, TrainConfig, TrainTrace, Trainer};
use crate::verify::network_lipschitz;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskConfig {
    SourceLocalization(SourceLocConfig),
    RecSys(RecSysConfig),
}

impl TaskConfig {
    pub fn label(&self) -> &'static str {
        match self {
            TaskConfig::SourceLocalization(_) => "source_localization",
            TaskConfig::RecSys(_) => "rec_sys",
        }
    }
}

/// Training procedure of one sweep column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSpec {
    PrimalDual,
    Unconstrained,
    Regularized { beta: f64 },
    /// Unconstrained training on the nominal graph, evaluated under the random model.
    Gnn,
}

impl ModeSpec {
    pub fn label(&self) -> &'static str {
        match self {
            ModeSpec::PrimalDual => "primal_dual",
            ModeSpec::Unconstrained => "unconstrained",
            ModeSpec::Regularized { .. } => "regularized",
            ModeSpec::Gnn => "gnn",
        }
    }

    fn train_mode(&self) -> Mode {
        match *self {
            ModeSpec::PrimalDual => Mode::PrimalDual,
            ModeSpec::Unconstrained | ModeSpec::Gnn => Mode::Unconstrained,
            ModeSpec::Regularized { beta } => Mode::Regularized { beta },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub p_values: Vec<f64>,
    pub graph_seeds: usize,
    pub modes: Vec<ModeSpec>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            p_values: vec![0.05, 0.15, 0.25],
            graph_seeds: 3,
            modes: vec![ModeSpec::PrimalDual, ModeSpec::Unconstrained],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Test-time realization draws for metric mean and spread.
    pub n_draws: usize,
    /// Draws for the recommendation-diversity metric.
    pub ad_draws: usize,
    pub ad_k: usize,
    /// Cap on evaluated test samples.
    pub max_test: Option<usize>,
    /// Cost curve sampling period (iterations).
    pub trace_every: usize,
    /// Training samples and realizations behind the final moment estimates.
    pub moment_samples: usize,
    pub moment_draws: usize,
    pub lipschitz_samples: usize,
    /// Parameters to evaluate instead of training.
    pub checkpoint: Option<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_draws: 200,
            ad_draws: 10,
            ad_k: 10,
            max_test: None,
            trace_every: 50,
            moment_samples: 500,
            moment_draws: 50,
            lipschitz_samples: 1000,
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub task: TaskConfig,
    pub architecture: Architecture,
    pub train: TrainConfig,
    /// Edge probability for single runs (`q = p` for the recommendation task).
    #[serde(default)]
    pub p: f64,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Suffix of the task column, e.g. `c_v=0.3`.
    #[serde(default)]
    pub variant: Option<String>,
    /// Write a checkpoint every this many training iterations; 0 writes only the final one.
    #[serde(default)]
    pub checkpoint_every: usize,
}

impl ExperimentConfig {
    pub fn source_localization() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            task: TaskConfig::SourceLocalization(SourceLocConfig {
                noise_std: 0.001,
                amplitude: Some(300.0),
                ..SourceLocConfig::default()
            }),
            architecture: Architecture {
                widths: vec![1, 4, 4],
                k: 3,
                activation: Activation::Relu,
                readout: Some(Readout {
                    kind: ReadoutKind::Dense,
                    out_dim: 5,
                }),
                realization_mode: RealizationMode::PerFilter,
            },
            train: TrainConfig {
                c_f: 0.0,
                c_s: 0.5,
                eta_primal: 3e-3,
                eta_dual: 0.1,
                gamma_steps: 1,
                n_realizations: 10,
                max_iters: 2000,
                batch_size: 20,
                optimizer: Optimizer::adam(),
                grad_norm_tol: 1e-6,
                mode: Mode::PrimalDual,
                constraint_target: Default::default(),
                freeze_dual: false,
            },
            p: 0.1,
            sweep: SweepConfig::default(),
            eval: EvalConfig::default(),
            variant: None,
            checkpoint_every: 0,
        }
    }

    pub fn recsys() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            task: TaskConfig::RecSys(RecSysConfig::default()),
            architecture: Architecture {
                widths: vec![1, 32],
                k: 4,
                activation: Activation::LeakyRelu {
                    slope: DEFAULT_LEAKY_SLOPE,
                },
                readout: Some(Readout {
                    kind: ReadoutKind::PerNode,
                    out_dim: 1,
                }),
                realization_mode: RealizationMode::PerFilter,
            },
            train: TrainConfig {
                c_f: 0.0,
                c_s: 0.5,
                eta_primal: 1e-3,
                eta_dual: 0.1,
                gamma_steps: 1,
                n_realizations: 5,
                max_iters: 500,
                batch_size: 20,
                optimizer: Optimizer::adam(),
                grad_norm_tol: 1e-6,
                mode: Mode::PrimalDual,
                constraint_target: Default::default(),
                freeze_dual: false,
            },
            p: 0.1,
            sweep: SweepConfig {
                p_values: vec![0.05, 0.1, 0.15, 0.2, 0.25],
                graph_seeds: 1,
                modes: vec![ModeSpec::PrimalDual, ModeSpec::Unconstrained, ModeSpec::Gnn],
            },
            eval: EvalConfig {
                n_draws: 20,
                max_test: Some(1000),
                ..EvalConfig::default()
            },
            variant: None,
            checkpoint_every: 0,
        }
    }

    /// Full-scale protocol: all samples, 10000 iterations, 10 graph seeds.
    pub fn into_full(mut self) -> Self {
        if let TaskConfig::SourceLocalization(c) = &mut self.task {
            c.desk_scale_factor = 1.0;
        }
        self.train.max_iters = 10_000;
        self.sweep.graph_seeds = 10;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(SgnnError::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.architecture.validate()?;
        self.train.validate()?;
        if let TaskConfig::SourceLocalization(c) = &self.task {
            c.validate()?;
        }
        let probs = std::iter::once(self.p).chain(self.sweep.p_values.iter().copied());
        for p in probs {
            if !(0.0..1.0).contains(&p) {
                return Err(SgnnError::Config(format!("edge probability {p} outside [0, 1)")));
            }
        }
        if self.eval.n_draws == 0 || self.eval.trace_every == 0 {
            return Err(SgnnError::Config("n_draws and trace_every must be positive".into()));
        }
        Ok(())
    }

    pub fn task_label(&self) -> String {
        match &self.variant {
            Some(v) => format!("{}:{v}", self.task.label()),
            None => self.task.label().to_string(),
        }
    }
}

/// Locates `u.data`: the configured path, then `SGNN_MOVIELENS`, then `data/ml-100k/u.data`
/// in the working directory or any ancestor.
pub fn movielens_path(cfg: &RecSysConfig) -> Result<PathBuf> {
    if let Some(p) = &cfg.data_path {
        return Ok(PathBuf::from(p));
    }
    if let Ok(p) = std::env::var("SGNN_MOVIELENS") {
        return Ok(PathBuf::from(p));
    }
    let rel = Path::new("data").join("ml-100k").join("u.data");
    let mut dir = std::env::current_dir()?;
    loop {
        let cand = dir.join(&rel);
        if cand.is_file() {
            return Ok(cand);
        }
        if !dir.pop() {
            return Err(SgnnError::Config(
                "MovieLens u.data not found; set task.data_path or SGNN_MOVIELENS".into(),
            ));
        }
    }
}

pub enum Task {
    Source(SourceLocTask),
    Rec(RecSysTask),
}

impl Task {
    pub fn model(&self) -> &GresModel {
        match self {
            Task::Source(t) => &t.model,
            Task::Rec(t) => &t.model,
        }
    }
    pub fn data(&self) -> &LabeledDataset {
        match self {
            Task::Source(t) => &t.data,
            Task::Rec(t) => &t.data,
        }
    }
    fn with_probability(&mut self, p: f64) -> Result<()> {
        match self {
            Task::Source(t) => t.model = t.model.with_probabilities(p, 0.0)?,
            Task::Rec(t) => t.model = t.model.with_probabilities(p, p)?,
        }
        Ok(())
    }
}

const TAG_GRAPH: u64 = 11;
const TAG_INIT: u64 = 12;
const TAG_TRAIN: u64 = 13;
const TAG_EVAL: u64 = 14;
const TAG_MOMENTS: u64 = 15;
const TAG_LIPSCHITZ: u64 = 16;

/// Shared inputs loaded once per experiment.
pub struct Inputs {
    ratings: Option<Array2<f64>>,
}

impl Inputs {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(Inputs {
            ratings: match &cfg.task {
                TaskConfig::RecSys(r) => Some(load_movielens(&movielens_path(r)?)?),
                TaskConfig::SourceLocalization(_) => None,
            },
        })
    }

    pub fn ratings(&self) -> Option<&Array2<f64>> {
        self.ratings.as_ref()
    }
}

/// Task instance for graph seed `g` with edge probability `p`.
pub fn build_task(cfg: &ExperimentConfig, inputs: &Inputs, p: f64, g: usize, seed: u64) -> Result<Task> {
    let mut rng = derive_stream(seed, &[TAG_GRAPH, g as u64]);
    Ok(match &cfg.task {
        TaskConfig::SourceLocalization(c) => Task::Source(gen_source_localization(c, p, &mut rng)?),
        TaskConfig::RecSys(c) => {
            let ratings = inputs
                .ratings
                .as_ref()
                .ok_or_else(|| SgnnError::Config("ratings not loaded".into()))?;
            Task::Rec(build_recsys_task(ratings, c, p, &mut rng)?)
        }
    })
}

/// Initial parameters for graph seed `g`; shared by every mode and `p` of that seed.
pub fn init_params(cfg: &ExperimentConfig, n: usize, g: usize, seed: u64) -> Result<SgnnParams> {
    let mut params = SgnnParams::init(cfg.architecture.clone(), n, &mut derive_stream(seed, &[TAG_INIT, g as u64]))?;
    if matches!(cfg.task, TaskConfig::RecSys(_)) {
        // Start from the mean-rating predictor.
        params.zero_readout();
    }
    Ok(params)
}

pub fn train_seed(seed: u64, g: usize) -> u64 {
    derive_seed(seed, &[TAG_TRAIN, g as u64])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub task: String,
    pub mode: String,
    pub p: f64,
    pub q: f64,
    pub graph_seed: usize,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
}

/// One trained (graph seed, p, mode) cell.
pub struct CellOutcome {
    pub graph_seed: usize,
    pub p: f64,
    pub mode: ModeSpec,
    pub params: SgnnParams,
    pub gamma: DualVars,
    pub trace: TrainTrace,
    pub rows: Vec<ResultRow>,
}

/// Trains one cell. The `gnn` mode trains on the nominal graph.
pub fn train_cell(
    cfg: &ExperimentConfig,
    task: &Task,
    mode: ModeSpec,
    g: usize,
    seed: u64,
) -> Result<(SgnnParams, DualVars, TrainTrace)> {
    let init = init_params(cfg, task.model().n(), g, seed)?;
    let nominal;
    let model = if mode == ModeSpec::Gnn {
        nominal = task.model().with_probabilities(0.0, 0.0)?;
        &nominal
    } else {
        task.model()
    };
    let tc = TrainConfig {
        mode: mode.train_mode(),
        ..cfg.train.clone()
    };
    let trainer = Trainer::new(init, DualVars::default(), model, task.data(), tc, train_seed(seed, g))?;
    match trainer.run(|_, _| {}) {
        Ok(out) => Ok((out.params, out.gamma, out.trace)),
        Err(f) => Err(f.error),
    }
}

fn eval_indices(data: &LabeledDataset, cap: Option<usize>) -> Vec<usize> {
    let mut idx = data.split().test.clone();
    if let Some(c) = cap {
        idx.truncate(c);
    }
    idx
}

const EVAL_CHUNK: usize = 250;

/// Per-draw test accuracy; draw `j` shares one realization sequence across the test set.
pub fn accuracy_draws(params: &SgnnParams, task: &SourceLocTask, idx: &[usize], draws: usize, seed: u64) -> Result<Vec<f64>> {
    let Labels::Classes { labels, num_classes } = task.data.labels() else {
        return Err(SgnnError::Config("classification labels expected".into()));
    };
    let chunks: Vec<(&[usize], Vec<f64>)> = idx.chunks(EVAL_CHUNK).map(|c| (c, task.data.batch(c))).collect();
    map_indexed(draws, |j| -> Result<f64> {
        let seq = RealizationSeq::sample(&task.model, params.arch(), &mut derive_stream(seed, &[j as u64]));
        let mut hits = 0usize;
        for (c, x) in &chunks {
            let out = forward(params, &seq.bind(&task.model), x, c.len())?;
            let pred = LabeledDataset::predict_classes(out.output(), *num_classes, c.len());
            hits += pred.iter().zip(c.iter()).filter(|(p, &i)| **p == labels[i]).count();
        }
        Ok(hits as f64 / idx.len().max(1) as f64)
    })
}

/// Per-draw test RMSE of `mu + output` at the held-out node.
pub fn rmse_draws(params: &SgnnParams, task: &RecSysTask, idx: &[usize], draws: usize, seed: u64) -> Result<Vec<f64>> {
    let Labels::NodeTargets { nodes, values } = task.data.labels() else {
        return Err(SgnnError::Config("node targets expected".into()));
    };
    let chunks: Vec<(&[usize], Vec<f64>)> = idx.chunks(EVAL_CHUNK).map(|c| (c, task.data.batch(c))).collect();
    map_indexed(draws, |j| -> Result<f64> {
        let seq = RealizationSeq::sample(&task.model, params.arch(), &mut derive_stream(seed, &[j as u64]));
        let mut se = 0.0;
        for (c, x) in &chunks {
            let b = c.len();
            let out = forward(params, &seq.bind(&task.model), x, b)?;
            for (col, &s) in c.iter().enumerate() {
                let r = out.output()[nodes[s] * b + col] - values[s];
                se += r * r;
            }
        }
        Ok((se / idx.len().max(1) as f64).sqrt())
    })
}

/// RMSE of predicting the training mean everywhere.
pub fn baseline_rmse(task: &RecSysTask, idx: &[usize]) -> Result<f64> {
    let Labels::NodeTargets { values, .. } = task.data.labels() else {
        return Err(SgnnError::Config("node targets expected".into()));
    };
    // Targets are already centered by the training mean.
    let se: f64 = idx.iter().map(|&s| values[s] * values[s]).sum();
    Ok((se / idx.len().max(1) as f64).sqrt())
}

/// Metric rows for trained parameters evaluated under `task`'s random model.
pub fn evaluate_cell(
    cfg: &ExperimentConfig,
    task: &Task,
    params: &SgnnParams,
    g: usize,
    seed: u64,
) -> Result<Vec<(String, f64, f64)>> {
    let eval_seed = derive_seed(seed, &[TAG_EVAL, g as u64]);
    let idx = eval_indices(task.data(), cfg.eval.max_test);
    let mut out = Vec::new();
    match task {
        Task::Source(t) => {
            let acc = accuracy_draws(params, t, &idx, cfg.eval.n_draws, eval_seed)?;
            let (m, s) = mean_std(&acc);
            out.push(("accuracy".to_string(), m, s));
        }
        Task::Rec(t) => {
            let r = rmse_draws(params, t, &idx, cfg.eval.n_draws, eval_seed)?;
            let (m, s) = mean_std(&r);
            out.push(("rmse".to_string(), m, s));
            out.push(("rmse_baseline".to_string(), baseline_rmse(t, &idx)?, 0.0));
            let ad: Vec<f64> = (0..cfg.eval.ad_draws)
                .map(|j| {
                    let lists = recommend(params, t, cfg.eval.ad_k, derive_seed(eval_seed, &[u64::MAX, j as u64]))?;
                    Ok(ad_at_k(&lists, cfg.eval.ad_k) as f64)
                })
                .collect::<Result<_>>()?;
            let (m, s) = mean_std(&ad);
            out.push((format!("ad@{}", cfg.eval.ad_k), m, s));
        }
    }

    // Output moments on training inputs under the random model.
    let train = task.data().split().train.clone();
    let take: Vec<usize> = train.into_iter().take(cfg.eval.moment_samples).collect();
    let draws = Draws::new(cfg.eval.moment_draws.max(2), derive_seed(seed, &[TAG_MOMENTS, g as u64]));
    let e = evaluate_batch(params, task.model(), task.data(), &take, draws, Objective::Cost, false)?;
    out.push(("train_cost".to_string(), e.cost, 0.0));
    out.push(("first_moment".to_string(), e.m1, 0.0));
    out.push(("second_moment".to_string(), e.m2, 0.0));
    out.push(("variance".to_string(), e.variance, 0.0));
    out.push(("slack1".to_string(), e.m1 - cfg.train.c_f, 0.0));
    out.push(("slack2".to_string(), cfg.train.c_s - e.m2, 0.0));

    let radius = task.model().spectral_envelope()?;
    let lip = network_lipschitz(
        params,
        radius,
        cfg.eval.lipschitz_samples.max(100),
        &mut derive_stream(seed, &[TAG_LIPSCHITZ, g as u64]),
    )?;
    out.push(("c_l".to_string(), lip.c_l, 0.0));
    Ok(out)
}

/// `cost@<iter>` rows: mean and spread of the training cost over each trailing window.
pub fn cost_curve(trace: &TrainTrace, every: usize) -> Vec<(String, f64, f64)> {
    let mut out = Vec::new();
    let mut end = every;
    while end <= trace.rows.len() {
        let w: Vec<f64> = trace.rows[end - every..end].iter().map(|r| r.mean_cost).collect();
        let (m, s) = mean_std(&w);
        out.push((format!("cost@{end}"), m, s));
        end += every;
    }
    out
}

pub struct ExperimentResult {
    pub rows: Vec<ResultRow>,
    pub cells: Vec<CellOutcome>,
}

impl ExperimentResult {
    pub fn write_results_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        write_rows(&self.rows, w)
    }
}

pub fn write_rows<W: std::io::Write>(rows: &[ResultRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    if rows.is_empty() {
        wr.write_record(["task", "mode", "p", "q", "graph_seed", "metric", "mean", "std"])?;
    }
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_rows<R: std::io::Read>(r: R) -> Result<Vec<ResultRow>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rd.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

/// Trains and evaluates every (graph seed, p, mode) cell. Rows come out sorted by
/// graph seed, then p, then mode order in the config.
pub fn run_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<ExperimentResult> {
    cfg.validate()?;
    let inputs = Inputs::load(cfg)?;
    let mut keys = Vec::new();
    for g in 0..cfg.sweep.graph_seeds {
        for (pi, _) in cfg.sweep.p_values.iter().enumerate() {
            for (mi, _) in cfg.sweep.modes.iter().enumerate() {
                keys.push((g, pi, mi));
            }
        }
    }
    let label = cfg.task_label();
    let cells = map_indexed(keys.len(), |c| -> Result<CellOutcome> {
        let (g, pi, mi) = keys[c];
        let p = cfg.sweep.p_values[pi];
        let mode = cfg.sweep.modes[mi];
        let task = build_task(cfg, &inputs, p, g, seed)?;
        let (params, gamma, trace) = train_cell(cfg, &task, mode, g, seed)?;
        let mut metrics = cost_curve(&trace, cfg.eval.trace_every);
        metrics.extend(evaluate_cell(cfg, &task, &params, g, seed)?);
        let q = task.model().q();
        let rows = metrics
            .into_iter()
            .map(|(metric, mean, std)| ResultRow {
                task: label.clone(),
                mode: mode.label().to_string(),
                p,
                q,
                graph_seed: g,
                metric,
                mean,
                std,
            })
            .collect();
        Ok(CellOutcome {
            graph_seed: g,
            p,
            mode,
            params,
            gamma,
            trace,
            rows,
        })
    })?;
    let rows = cells.iter().flat_map(|c| c.rows.iter().cloned()).collect();
    Ok(ExperimentResult { rows, cells })
}

/// Evaluates fixed parameters over the p sweep (no training).
pub fn evaluate_params(cfg: &ExperimentConfig, params: &SgnnParams, seed: u64, mode_label: &str) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let inputs = Inputs::load(cfg)?;
    let label = cfg.task_label();
    let mut rows = Vec::new();
    for g in 0..cfg.sweep.graph_seeds.max(1) {
        let mut task = build_task(cfg, &inputs, cfg.p, g, seed)?;
        if task.model().n() != params.n() {
            return Err(SgnnError::Config(format!(
                "checkpoint has {} nodes, task has {}",
                params.n(),
                task.model().n()
            )));
        }
        for &p in &cfg.sweep.p_values {
            task.with_probability(p)?;
            for (metric, mean, std) in evaluate_cell(cfg, &task, params, g, seed)? {
                rows.push(ResultRow {
                    task: label.clone(),
                    mode: mode_label.to_string(),
                    p,
                    q: task.model().q(),
                    graph_seed: g,
                    metric,
                    mean,
                    std,
                });
            }
        }
    }
    Ok(rows)
}
