//! The verification suite: every closed-form check run on generated instances, with a
//! small trained model for the checks that need one.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Result, SgnnError};
use crate::experiments::source_loc::{gen_source_localization, SourceLocConfig};
use crate::generators::sbm;
use crate::graph::{Edge, Graph, ShiftKind, ShiftOperator};
use crate::gres::GresModel;
use crate::linalg::norm2;
use crate::model::{forward, output_bound, Activation, Architecture, Readout, ReadoutKind, RealizationMode, SgnnParams};
use crate::moments::{estimate_moments, McConfig};
use crate::objective::{Draws, DualVars};
use crate::parallel::map_indexed;
use crate::rng::{derive_seed, derive_stream};
use crate::training::{Mode, Optimizer, TrainConfig, TrainTrace, Trainer};
use crate::verify::{
    check_chebyshev, check_moment_formula, check_stability, check_variance_bound, convergence_diagnostics,
    normalize_taps, CheckConfig, CheckReport, ConvergenceDiag, StabilityReport,
};

pub const SUITE_SCHEMA_VERSION: u32 = 1;

/// Check names accepted by `only`.
pub const CHECKS: [&str; 7] = [
    "moment-formula",
    "output-bound",
    "variance-bound",
    "chebyshev",
    "stability",
    "feasibility",
    "convergence",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteConfig {
    pub schema_version: u32,
    /// Random small models for the moment-formula check.
    pub moment_models: usize,
    pub moment_max_nodes: usize,
    pub moment_max_edges: usize,
    /// Random `(x, realization)` draws for the output bound.
    pub output_draws: usize,
    pub output_widths: Vec<usize>,
    /// Block-model instance for the variance bound.
    pub n: usize,
    pub communities: usize,
    pub p_intra: f64,
    pub p_inter: f64,
    /// Addable non-edges.
    pub add_edges: usize,
    pub grid: Vec<f64>,
    pub architecture: Architecture,
    pub n_realizations: usize,
    pub lipschitz_samples: usize,
    /// Deviation thresholds as multiples of a pilot variance estimate.
    pub eps_multipliers: Vec<f64>,
    pub stability_eps: Vec<f64>,
    pub stability_trials: usize,
    /// Small source-localization task and training run behind the trained-model checks.
    pub train_task: SourceLocConfig,
    pub train: TrainConfig,
    pub train_p: f64,
    /// Replaces every bound by zero. Test fixture for the failure path.
    pub force_zero_bound: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            schema_version: SUITE_SCHEMA_VERSION,
            moment_models: 50,
            moment_max_nodes: 8,
            moment_max_edges: 10,
            output_draws: 1000,
            output_widths: vec![1, 3, 3, 1],
            n: 20,
            communities: 4,
            p_intra: 0.8,
            p_inter: 0.2,
            add_edges: 20,
            grid: vec![0.05, 0.1, 0.2, 0.3],
            architecture: Architecture {
                widths: vec![1, 4, 1],
                k: 3,
                activation: Activation::Relu,
                readout: None,
                realization_mode: RealizationMode::PerFilter,
            },
            n_realizations: 2000,
            lipschitz_samples: 2000,
            eps_multipliers: vec![1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0, 12.0],
            stability_eps: vec![1e-3, 3e-3, 1e-2],
            stability_trials: 200,
            train_task: SourceLocConfig {
                n: 20,
                communities: 4,
                desk_scale_factor: 0.04,
                t_max: 5,
                noise_std: 0.01,
                amplitude: Some(10.0),
                ..SourceLocConfig::default()
            },
            train: TrainConfig {
                c_f: 0.0,
                c_s: 0.5,
                eta_primal: 0.01,
                eta_dual: 0.1,
                gamma_steps: 1,
                n_realizations: 10,
                max_iters: 300,
                batch_size: 20,
                optimizer: Optimizer::adam(),
                grad_norm_tol: 1e-9,
                mode: Mode::PrimalDual,
                constraint_target: Default::default(),
                freeze_dual: false,
            },
            train_p: 0.1,
            force_zero_bound: false,
        }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SUITE_SCHEMA_VERSION {
            return Err(SgnnError::Config(format!(
                "unsupported schema_version {} (expected {SUITE_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.architecture.validate()?;
        self.train.validate()?;
        self.train_task.validate()?;
        if self.output_widths.len() < 2 || *self.output_widths.last().unwrap_or(&0) != 1 {
            return Err(SgnnError::Config("output_widths must end in a single feature".into()));
        }
        if self.moment_max_nodes < 2 || self.n < 2 || self.grid.is_empty() {
            return Err(SgnnError::Config("suite instances need at least two nodes and one grid point".into()));
        }
        Ok(())
    }
}

/// One row of `moments.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub p: f64,
    pub q: f64,
    #[serde(rename = "N")]
    pub n_realizations: usize,
    pub mean_cost: Option<f64>,
    pub first_moment: f64,
    pub second_moment: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, Default)]
pub struct SuiteOutcome {
    pub reports: Vec<CheckReport>,
    pub moments: Vec<MomentRow>,
    pub stability: Option<StabilityReport>,
    pub convergence: Option<ConvergenceDiag>,
}

impl SuiteOutcome {
    pub fn violations(&self) -> usize {
        self.reports.iter().filter(|r| r.violated).count()
    }
}

pub fn write_moments_csv<W: std::io::Write>(rows: &[MomentRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    if rows.is_empty() {
        wr.write_record(["p", "q", "N", "mean_cost", "first_moment", "second_moment", "variance"])?;
    }
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

const TAG_MOMENT: u64 = 1;
const TAG_OUTPUT: u64 = 2;
const TAG_VARIANCE: u64 = 3;
const TAG_TRAINED: u64 = 4;
const TAG_CHEB: u64 = 5;
const TAG_STAB: u64 = 6;

/// Random graph on at most `max_nodes` nodes with `m_d + m_a <= max_edges` variable edges.
pub fn random_small_model<R: Rng + ?Sized>(max_nodes: usize, max_edges: usize, rng: &mut R) -> Result<GresModel> {
    let n = rng.random_range(2..=max_nodes);
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let budget = max_edges.min(pairs.len());
    let variable = rng.random_range(1..=budget);
    let fixed = rng.random_range(0..=(pairs.len() - variable).min(3));
    let pick = sample_indices(rng, pairs.len(), variable + fixed).into_vec();
    let m_d = rng.random_range(0..=variable);
    let w = |rng: &mut R| rng.random_range(0.5..1.5);
    let edge = |k: usize, wt: f64| Edge::new(pairs[k].0, pairs[k].1, wt);
    let mut nominal = Vec::new();
    let mut drop = Vec::new();
    let mut add = Vec::new();
    for (slot, &k) in pick.iter().enumerate() {
        let e = edge(k, w(rng));
        if slot < m_d {
            drop.push(e.key());
            nominal.push(e);
        } else if slot < variable {
            add.push(e);
        } else {
            nominal.push(e);
        }
    }
    let kind = if rng.random_bool(0.5) { ShiftKind::Adjacency } else { ShiftKind::Laplacian };
    let grid = |rng: &mut R| f64::from(rng.random_range(1u8..=9)) / 10.0;
    let (p, q) = (grid(rng), grid(rng));
    GresModel::new(Graph::new(n, nominal)?, kind, &drop, add, p, q)
}

/// Block model with unit weights divided by the adjacency spectral radius, plus `m_a`
/// addable non-edges of the same weight.
fn block_instance<R: Rng + ?Sized>(cfg: &SuiteConfig, rng: &mut R) -> Result<(Graph, Vec<Edge>)> {
    let raw = sbm(cfg.n, cfg.communities, cfg.p_intra, cfg.p_inter, rng)?;
    let rho = ShiftOperator::from_graph(&raw, ShiftKind::Adjacency).spectral_radius()?;
    if rho == 0.0 {
        return Err(SgnnError::InvalidGraph("sampled graph has no edges".into()));
    }
    let graph = raw.scaled(1.0 / rho);
    let absent: Vec<(usize, usize)> = (0..cfg.n)
        .flat_map(|i| (i + 1..cfg.n).map(move |j| (i, j)))
        .filter(|&(i, j)| !graph.contains(i, j))
        .collect();
    let m_a = cfg.add_edges.min(absent.len());
    let mut pick = sample_indices(rng, absent.len(), m_a).into_vec();
    pick.sort_unstable();
    let add = pick.into_iter().map(|k| Edge::new(absent[k].0, absent[k].1, 1.0 / rho)).collect();
    Ok((graph, add))
}

fn gaussian<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn moment_check(cfg: &SuiteConfig, seed: u64) -> Result<CheckReport> {
    let mut worst = 0.0f64;
    let mut enumerated = 0usize;
    for i in 0..cfg.moment_models {
        let model = random_small_model(
            cfg.moment_max_nodes,
            cfg.moment_max_edges,
            &mut derive_stream(seed, &[TAG_MOMENT, i as u64]),
        )?;
        let r = check_moment_formula(&model, derive_seed(seed, &[TAG_MOMENT, i as u64, 1]))?;
        if r.bound > 0.0 {
            enumerated += 1;
        }
        worst = worst.max(r.empirical);
    }
    Ok(CheckReport::upper(
        "moment-formula",
        json!({ "models": cfg.moment_models, "max_nodes": cfg.moment_max_nodes, "max_edges": cfg.moment_max_edges, "enumerated": enumerated }),
        worst,
        1e-12,
        0.0,
    )
    .with_note("max abs error of the closed-form expected squared shift"))
}

fn output_check(cfg: &SuiteConfig, seed: u64) -> Result<CheckReport> {
    let mut rng = derive_stream(seed, &[TAG_OUTPUT]);
    let (graph, add) = block_instance(cfg, &mut rng)?;
    let drop: Vec<(usize, usize)> = graph.edges().iter().map(|e| e.key()).collect();
    let model = GresModel::new(graph, ShiftKind::Adjacency, &drop, add, 0.2, 0.2)?;
    let arch = Architecture {
        widths: cfg.output_widths.clone(),
        k: cfg.architecture.k,
        activation: Activation::Relu,
        readout: None,
        realization_mode: RealizationMode::PerFilter,
    };
    let mut params = SgnnParams::init(arch.clone(), cfg.n, &mut rng)?;
    // Large taps so that normalization is active for most filters.
    params.values_mut().iter_mut().for_each(|v| *v *= 10.0);
    let radius = model.spectral_envelope()?;
    normalize_taps(&mut params, radius);
    let draws = Draws::new(cfg.output_draws, derive_seed(seed, &[TAG_OUTPUT, 1]));
    let ratios = map_indexed(cfg.output_draws, |j| -> Result<f64> {
        let x = gaussian(cfg.n, &mut derive_stream(seed, &[TAG_OUTPUT, 2, j as u64]));
        let seq = draws.sequence(&model, &params, j);
        let phi = forward(&params, &seq.bind(&model), &x, 1)?;
        Ok(norm2(phi.phi()) / output_bound(&arch, norm2(&x)))
    })?;
    let worst = ratios.iter().copied().fold(0.0, f64::max);
    let violations = ratios.iter().filter(|&&r| r > 1.0).count();
    Ok(CheckReport::upper(
        "output-bound",
        json!({ "draws": cfg.output_draws, "widths": arch.widths, "k": arch.k, "violations": violations, "domain_radius": radius }),
        worst,
        1.0,
        0.0,
    )
    .with_note("largest ratio of output norm to the closed-form bound"))
}

fn variance_checks(cfg: &SuiteConfig, seed: u64) -> Result<(Vec<CheckReport>, Vec<MomentRow>)> {
    let mut rng = derive_stream(seed, &[TAG_VARIANCE]);
    let (graph, add) = block_instance(cfg, &mut rng)?;
    let drop: Vec<(usize, usize)> = graph.edges().iter().map(|e| e.key()).collect();
    let base = GresModel::new(graph, ShiftKind::Adjacency, &drop, add, 0.0, 0.0)?;
    let mut params = SgnnParams::init(cfg.architecture.clone(), cfg.n, &mut rng)?;
    normalize_taps(&mut params, base.spectral_envelope()?);
    let x = gaussian(cfg.n, &mut rng);
    let mut reports = Vec::new();
    let mut rows = Vec::new();
    for (pi, &p) in cfg.grid.iter().enumerate() {
        for (qi, &q) in cfg.grid.iter().enumerate() {
            let model = base.with_probabilities(p, q)?;
            let cc = CheckConfig {
                n_realizations: cfg.n_realizations,
                lipschitz_samples: cfg.lipschitz_samples,
                seed: derive_seed(seed, &[TAG_VARIANCE, pi as u64, qi as u64]),
            };
            reports.push(check_variance_bound(&params, &model, &x, &cc)?);
            let m = estimate_moments(&params, &model, &x, &McConfig::new(cfg.n_realizations, derive_seed(cc.seed, &[3])))?;
            rows.push(MomentRow {
                p,
                q,
                n_realizations: cfg.n_realizations,
                mean_cost: None,
                first_moment: m.first_moment,
                second_moment: m.second_moment,
                variance: m.variance,
            });
        }
    }
    Ok((reports, rows))
}

/// Trained parameters, the model and an evaluation input, plus the run's trace.
struct Trained {
    params: SgnnParams,
    model: GresModel,
    x: Vec<f64>,
    trace: TrainTrace,
    xi: f64,
    c_y: f64,
}

fn train_small(cfg: &SuiteConfig, seed: u64) -> Result<Trained> {
    let task = gen_source_localization(&cfg.train_task, cfg.train_p, &mut derive_stream(seed, &[TAG_TRAINED]))?;
    let arch = Architecture {
        readout: Some(Readout {
            kind: ReadoutKind::Dense,
            out_dim: cfg.train_task.communities,
        }),
        ..cfg.architecture.clone()
    };
    let init = SgnnParams::init(arch, task.model.n(), &mut derive_stream(seed, &[TAG_TRAINED, 1]))?;
    let tseed = derive_seed(seed, &[TAG_TRAINED, 2]);
    let trainer = Trainer::new(init, DualVars::default(), &task.model, &task.data, cfg.train.clone(), tseed)?;
    let out = trainer.run(|_, _| {}).map_err(|f| f.error)?;
    let split = task.data.split();
    let probe_idx: Vec<usize> = split.train.iter().copied().take(50).collect();
    let resumed = Trainer::new(out.params.clone(), out.gamma, &task.model, &task.data, cfg.train.clone(), tseed)?;
    let xi = resumed.suboptimality_probe(20, &probe_idx, cfg.train.n_realizations)?;
    let x_max = (0..task.data.len()).map(|i| norm2(&task.data.input(i))).fold(0.0, f64::max);
    let c_y = output_bound(out.params.arch(), x_max);
    let pick = split.test.first().or(split.train.first()).copied().unwrap_or(0);
    Ok(Trained {
        x: task.data.input(pick).to_vec(),
        params: out.params,
        model: task.model,
        trace: out.trace,
        xi,
        c_y,
    })
}

/// Runs every check, or only the named one.
pub fn run_suite(cfg: &SuiteConfig, seed: u64, only: Option<&str>) -> Result<SuiteOutcome> {
    cfg.validate()?;
    if let Some(name) = only {
        if !CHECKS.contains(&name) {
            return Err(SgnnError::Config(format!(
                "unknown check {name:?}; expected one of {}",
                CHECKS.join(", ")
            )));
        }
    }
    let want = |name: &str| only.is_none_or(|o| o == name);
    let mut out = SuiteOutcome::default();
    if want("moment-formula") {
        out.reports.push(moment_check(cfg, seed)?);
    }
    if want("output-bound") {
        out.reports.push(output_check(cfg, seed)?);
    }
    if want("variance-bound") {
        let (r, m) = variance_checks(cfg, seed)?;
        out.reports.extend(r);
        out.moments.extend(m);
    }
    let needs_model = ["chebyshev", "stability", "feasibility", "convergence"];
    if needs_model.iter().any(|c| want(c)) {
        let t = train_small(cfg, seed)?;
        if want("feasibility") {
            let window = (t.trace.rows.len() / 10).max(1);
            let s1 = t.trace.tail_mean(window, |r| r.slack1);
            let s2 = t.trace.tail_mean(window, |r| r.slack2);
            let gamma_ok = t.trace.rows.iter().all(|r| r.gamma1 >= 0.0 && r.gamma2 >= 0.0);
            let r = CheckReport::lower(
                "feasibility",
                json!({ "window": window, "slack1": s1, "slack2": s2, "c_s": cfg.train.c_s, "duals_nonnegative": gamma_ok }),
                if gamma_ok { s1.min(s2) } else { f64::NEG_INFINITY },
                -0.05,
                0.0,
                0.0,
            )
            .with_note("smallest trailing-mean constraint slack of the trained model");
            out.reports.push(r);
        }
        if want("chebyshev") {
            let pilot = estimate_moments(
                &t.params,
                &t.model,
                &t.x,
                &McConfig::new(cfg.n_realizations, derive_seed(seed, &[TAG_CHEB, 0])),
            )?;
            let var = pilot.variance.max(f64::MIN_POSITIVE);
            let grid: Vec<f64> = cfg.eps_multipliers.iter().map(|m| m * var).collect();
            out.reports.extend(check_chebyshev(
                &t.params,
                &t.model,
                &t.x,
                &grid,
                cfg.n_realizations,
                derive_seed(seed, &[TAG_CHEB, 1]),
            )?);
        }
        if want("stability") {
            let mut params = t.params.clone();
            normalize_taps(&mut params, t.model.spectral_envelope()?);
            let s = check_stability(
                &params,
                &t.model,
                &t.x,
                &cfg.stability_eps,
                cfg.stability_trials,
                cfg.lipschitz_samples,
                derive_seed(seed, &[TAG_STAB]),
            )?;
            out.reports.push(s.report.clone());
            out.stability = Some(s);
        }
        if want("convergence") {
            let d = convergence_diagnostics(&t.trace, &cfg.train, DualVars::default(), t.c_y, t.model.n(), t.xi, 0.01)?;
            out.reports.push(
                CheckReport::upper(
                    "convergence",
                    json!({ "t_bound": d.t_bound, "iterations": t.trace.rows.len(), "c_y": t.c_y }),
                    d.xi_estimate,
                    d.error_radius,
                    0.0,
                )
                .with_note("primal suboptimality proxy against the error radius; diagnostic"),
            );
            out.convergence = Some(d);
        }
    }
    if cfg.force_zero_bound {
        out.reports = out.reports.into_iter().map(|r| r.with_bound(0.0)).collect();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn small_models_respect_limits() {
        let mut rng = stream(5);
        for _ in 0..200 {
            let m = random_small_model(8, 10, &mut rng).unwrap();
            assert!(m.n() <= 8);
            assert!(m.m_d() + m.m_a() <= 10 && m.m_d() + m.m_a() >= 1);
            assert!((1..=9).any(|k| (m.p() - f64::from(k) / 10.0).abs() < 1e-15));
        }
    }

    #[test]
    fn unknown_check_is_a_config_error() {
        let err = run_suite(&SuiteConfig::default(), 0, Some("nope")).unwrap_err();
        assert!(matches!(err, SgnnError::Config(_)));
    }
}
