//! Numerical checks of the variance, deviation, moment, stability, and convergence
//! bounds for trained or synthetic filters.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{check_len, Result, SgnnError};
use crate::graph::{ShiftKind, ShiftOperator};
use crate::gres::GresModel;
use crate::linalg::{eigh, max_abs_diff, norm2};
use crate::model::{
    forward, frequency_response, max_abs_response, response_gradient, ExplicitSeq, SgnnParams,
};
use crate::objective::{DualVars, Draws};
use crate::parallel::map_indexed;
use crate::rng::{derive_seed, derive_stream};
use crate::training::{TrainConfig, TrainTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LipschitzMethod {
    GradientMc,
    PairwiseFiniteDiff,
    CoefficientBound,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    pub c_l: f64,
    pub domain_radius: f64,
    pub samples_used: usize,
    pub method: LipschitzMethod,
    /// `sum_k |h_k| sqrt(k) r^(k-1)`, an upper bound on every estimate.
    pub majorant: f64,
}

/// Vertices are enumerated up to this order; beyond it only random points are used.
const MAX_VERTEX_ORDER: usize = 16;

/// `sum_k |h_k| sqrt(k) r^(k-1)`.
pub fn coefficient_majorant(taps: &[f64], radius: f64) -> f64 {
    taps.iter()
        .enumerate()
        .skip(1)
        .map(|(k, h)| h.abs() * (k as f64).sqrt() * radius.powi(k as i32 - 1))
        .sum()
}

fn uniform_point<R: Rng + ?Sized>(k: usize, r: f64, rng: &mut R) -> Vec<f64> {
    (0..k).map(|_| rng.random_range(-r..=r)).collect()
}

/// Maximum gradient norm of the frequency response over `[-r, r]^K`, from `n_samples`
/// uniform points plus every vertex of the cube. Each squared partial derivative is
/// convex along every coordinate, so the maximum sits on a vertex.
pub fn estimate_lipschitz<R: Rng + ?Sized>(
    taps: &[f64],
    lambda_max: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<LipschitzEstimate> {
    if n_samples < 100 {
        return Err(SgnnError::Config("Lipschitz estimation needs at least 100 samples".into()));
    }
    if !(lambda_max >= 0.0) {
        return Err(SgnnError::Config("domain radius must be nonnegative".into()));
    }
    let k = taps.len().saturating_sub(1);
    let majorant = coefficient_majorant(taps, lambda_max);
    if k == 0 {
        return Ok(LipschitzEstimate {
            c_l: 0.0,
            domain_radius: lambda_max,
            samples_used: 0,
            method: LipschitzMethod::GradientMc,
            majorant,
        });
    }
    let mut best = 0.0f64;
    let mut used = 0;
    for _ in 0..n_samples {
        let lam = uniform_point(k, lambda_max, rng);
        best = best.max(norm2(&response_gradient(taps, &lam)));
        used += 1;
    }
    if k <= MAX_VERTEX_ORDER {
        for mask in 0u32..(1 << k) {
            let lam: Vec<f64> = (0..k)
                .map(|j| if mask >> j & 1 == 1 { lambda_max } else { -lambda_max })
                .collect();
            best = best.max(norm2(&response_gradient(taps, &lam)));
            used += 1;
        }
    }
    Ok(LipschitzEstimate {
        c_l: best.min(majorant),
        domain_radius: lambda_max,
        samples_used: used,
        method: LipschitzMethod::GradientMc,
        majorant,
    })
}

/// Largest `|h(a) - h(b)| / ||a - b||` over random nearby pairs in the cube.
pub fn estimate_lipschitz_pairwise<R: Rng + ?Sized>(
    taps: &[f64],
    lambda_max: f64,
    n_pairs: usize,
    rng: &mut R,
) -> LipschitzEstimate {
    let k = taps.len().saturating_sub(1);
    let majorant = coefficient_majorant(taps, lambda_max);
    let mut best = 0.0f64;
    if k > 0 && lambda_max > 0.0 {
        let step = 1e-4 * lambda_max;
        for _ in 0..n_pairs {
            let a = uniform_point(k, lambda_max, rng);
            let b: Vec<f64> = a
                .iter()
                .map(|v| (v + rng.random_range(-step..=step)).clamp(-lambda_max, lambda_max))
                .collect();
            let d: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            if d > 0.0 {
                best = best.max((frequency_response(taps, &a) - frequency_response(taps, &b)).abs() / d);
            }
        }
    }
    LipschitzEstimate {
        c_l: best,
        domain_radius: lambda_max,
        samples_used: n_pairs,
        method: LipschitzMethod::PairwiseFiniteDiff,
        majorant,
    }
}

/// Largest gradient-based estimate over every filter of the network.
pub fn network_lipschitz<R: Rng + ?Sized>(
    params: &SgnnParams,
    lambda_max: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<LipschitzEstimate> {
    let mut out = LipschitzEstimate {
        c_l: 0.0,
        domain_radius: lambda_max,
        samples_used: 0,
        method: LipschitzMethod::GradientMc,
        majorant: 0.0,
    };
    for taps in params.filters() {
        let e = estimate_lipschitz(taps, lambda_max, n_samples, rng)?;
        out.c_l = out.c_l.max(e.c_l);
        out.majorant = out.majorant.max(e.majorant);
        out.samples_used += e.samples_used;
    }
    Ok(out)
}

/// Rescales every filter whose response exceeds 1 in magnitude somewhere on `[-r, r]^K`
/// so that its maximum is exactly 1.
pub fn normalize_taps(params: &mut SgnnParams, radius: f64) {
    let arch = params.arch().clone();
    for l in 0..arch.layers() {
        for f in 0..arch.widths[l + 1] {
            for g in 0..arch.widths[l] {
                let taps = params.taps_mut(l, f, g);
                let m = max_abs_response(taps, radius);
                if m > 1.0 {
                    taps.iter_mut().for_each(|h| *h /= m);
                }
            }
        }
    }
}

/// Inputs of the leading-order variance bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceBoundInputs {
    pub c_l: f64,
    pub m_d: usize,
    pub m_a: usize,
    pub p: f64,
    pub q: f64,
    pub k: usize,
    pub layers: usize,
    pub width: usize,
    pub c_sigma: f64,
    pub n: usize,
    pub x_norm: f64,
}

/// `C_L^2 (M_d p(1-p) + M_a q(1-q)) C ||x||^2` with
/// `C = 4K sum_{l=1..L} F^(2L-3) C_sigma^(2l-2) / n`. Higher-order terms in `p(1-p)` and
/// `q(1-q)` are not included.
pub fn variance_bound(v: &VarianceBoundInputs) -> Result<f64> {
    let all = [v.c_l, v.p, v.q, v.c_sigma, v.x_norm];
    if all.iter().any(|x| !(*x >= 0.0)) || v.n == 0 || v.width == 0 {
        return Err(SgnnError::Config("variance bound inputs must be nonnegative".into()));
    }
    let f = v.width as f64;
    let l = v.layers as i32;
    let sum: f64 = (1..=l).map(|ell| f.powi(2 * l - 3) * v.c_sigma.powi(2 * ell - 2)).sum();
    let c = 4.0 * v.k as f64 * sum / v.n as f64;
    let edge = v.m_d as f64 * v.p * (1.0 - v.p) + v.m_a as f64 * v.q * (1.0 - v.q);
    Ok(v.c_l * v.c_l * edge * c * v.x_norm * v.x_norm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    /// Empirical value should not exceed the bound.
    Upper,
    /// Empirical value should not fall below the bound.
    Lower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check_name: String,
    pub inputs: Value,
    pub empirical: f64,
    pub bound: f64,
    /// Margin in the direction of the check; negative when on the wrong side.
    pub slack: f64,
    pub violated: bool,
    pub stderr: f64,
    pub sense: Sense,
    /// Allowed deviation in standard errors.
    pub se_multiplier: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl CheckReport {
    /// Violated when `empirical > bound + 3 stderr`.
    pub fn upper(name: &str, inputs: Value, empirical: f64, bound: f64, stderr: f64) -> Self {
        Self::build(name, inputs, empirical, bound, stderr, Sense::Upper, 3.0)
    }

    /// Violated when `empirical < bound - k stderr`.
    pub fn lower(name: &str, inputs: Value, empirical: f64, bound: f64, stderr: f64, k: f64) -> Self {
        Self::build(name, inputs, empirical, bound, stderr, Sense::Lower, k)
    }

    fn build(
        name: &str,
        inputs: Value,
        empirical: f64,
        bound: f64,
        stderr: f64,
        sense: Sense,
        k: f64,
    ) -> Self {
        let (slack, violated) = match sense {
            Sense::Upper => (bound - empirical, empirical > bound + k * stderr),
            Sense::Lower => (empirical - bound, empirical < bound - k * stderr),
        };
        CheckReport {
            check_name: name.to_string(),
            inputs,
            empirical,
            bound,
            slack,
            violated: violated || !empirical.is_finite() || bound.is_nan(),
            stderr,
            sense,
            se_multiplier: k,
            note: None,
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    /// Replaces the bound (and recomputes slack and verdict).
    pub fn with_bound(self, bound: f64) -> Self {
        Self::build(
            &self.check_name,
            self.inputs,
            self.empirical,
            bound,
            self.stderr,
            self.sense,
            self.se_multiplier,
        )
        .with_note_opt(self.note)
    }

    fn with_note_opt(mut self, note: Option<String>) -> Self {
        self.note = note;
        self
    }
}

#[derive(Serialize)]
struct VerifyRow<'a> {
    check_name: &'a str,
    empirical: f64,
    bound: f64,
    slack: f64,
    stderr: f64,
    violated: bool,
    inputs: String,
}

/// `verify.csv` rows.
pub fn write_verify_csv<W: std::io::Write>(reports: &[CheckReport], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    if reports.is_empty() {
        wr.write_record(["check_name", "empirical", "bound", "slack", "stderr", "violated", "inputs"])?;
    }
    for r in reports {
        wr.serialize(VerifyRow {
            check_name: &r.check_name,
            empirical: r.empirical,
            bound: r.bound,
            slack: r.slack,
            stderr: r.stderr,
            violated: r.violated,
            inputs: r.inputs.to_string(),
        })?;
    }
    wr.flush()?;
    Ok(())
}

/// Pre-readout outputs for `count` realizations drawn from `seed`.
pub fn phi_samples(
    params: &SgnnParams,
    model: &GresModel,
    x: &[f64],
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let draws = Draws::new(count, seed);
    map_indexed(count, |j| -> Result<Vec<f64>> {
        let seq = draws.sequence(model, params, j);
        Ok(forward(params, &seq.bind(model), x, 1)?.phi().to_vec())
    })
}

fn entry_mean(samples: &[Vec<f64>]) -> Vec<f64> {
    let len = samples.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; len];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= samples.len() as f64);
    mean
}

/// `(1/len) ||s - mean||^2` per sample.
fn sq_deviations(samples: &[Vec<f64>], mean: &[f64]) -> Vec<f64> {
    samples
        .iter()
        .map(|s| s.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / mean.len() as f64)
        .collect()
}

fn mean_and_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Settings shared by the Monte-Carlo checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckConfig {
    pub n_realizations: usize,
    pub lipschitz_samples: usize,
    pub seed: u64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            n_realizations: 2000,
            lipschitz_samples: 2000,
            seed: 0,
        }
    }
}

/// Plug-in output variance against [`variance_bound`]. Expects filters normalized so
/// that `max |h| <= 1` on the spectral envelope of the model.
pub fn check_variance_bound(
    params: &SgnnParams,
    model: &GresModel,
    x: &[f64],
    cfg: &CheckConfig,
) -> Result<CheckReport> {
    check_len(params.n(), x.len(), "variance check input")?;
    let arch = params.arch();
    let radius = model.spectral_envelope()?;
    let lip = network_lipschitz(
        params,
        radius,
        cfg.lipschitz_samples,
        &mut derive_stream(cfg.seed, &[1]),
    )?;
    let samples = phi_samples(params, model, x, cfg.n_realizations, derive_seed(cfg.seed, &[2]))?;
    // The plug-in variance is the mean squared deviation from the sample mean.
    let dev = sq_deviations(&samples, &entry_mean(&samples));
    let (empirical, stderr) = mean_and_stderr(&dev);
    let inputs = VarianceBoundInputs {
        c_l: lip.c_l,
        m_d: model.m_d(),
        m_a: model.m_a(),
        p: model.p(),
        q: model.q(),
        k: arch.k,
        layers: arch.layers(),
        width: arch.hidden_width(),
        c_sigma: arch.activation.lipschitz(),
        n: params.n(),
        x_norm: norm2(x),
    };
    let bound = variance_bound(&inputs)?;
    Ok(CheckReport::upper(
        "variance-bound",
        json!({
            "bound_inputs": inputs,
            "domain_radius": radius,
            "n_realizations": cfg.n_realizations,
            "max_abs_response": params.filters().map(|t| max_abs_response(t, radius)).fold(0.0, f64::max),
        }),
        empirical,
        bound,
        stderr,
    )
    .with_note("leading-order bound; higher-order terms in p(1-p), q(1-q) omitted"))
}

/// Deviation probability against `1 - Var/eps` for each `eps`. The mean and variance
/// come from one batch of `m` realizations, the probability from another.
pub fn check_chebyshev(
    params: &SgnnParams,
    model: &GresModel,
    x: &[f64],
    eps_grid: &[f64],
    m: usize,
    seed: u64,
) -> Result<Vec<CheckReport>> {
    if m < 100 {
        return Err(SgnnError::Config("deviation checks need at least 100 realizations".into()));
    }
    let reference = phi_samples(params, model, x, m, derive_seed(seed, &[0]))?;
    let mean = entry_mean(&reference);
    let var = sq_deviations(&reference, &mean).iter().sum::<f64>() / m as f64;
    let fresh = phi_samples(params, model, x, m, derive_seed(seed, &[1]))?;
    let dev = sq_deviations(&fresh, &mean);
    Ok(eps_grid
        .iter()
        .map(|&eps| {
            let prob = crate::moments::fraction_within(&dev, eps);
            let se = (prob * (1.0 - prob) / m as f64).sqrt();
            let bound = if eps > 0.0 { 1.0 - var / eps } else { f64::NEG_INFINITY };
            let r = CheckReport::lower(
                "chebyshev",
                json!({ "eps": eps, "variance": var, "m": m }),
                prob,
                bound,
                se,
                2.0,
            );
            if bound < 0.0 {
                r.with_note("vacuous: eps below the variance")
            } else {
                r
            }
        })
        .collect())
}

/// Enumerable models (at most this many variable edges) are checked exactly.
pub const ENUMERATION_LIMIT: usize = 12;
const MOMENT_MC_SAMPLES: usize = 20_000;

/// Closed-form `E[S^2]` against exhaustive enumeration (or Monte Carlo for large models).
pub fn check_moment_formula(model: &GresModel, seed: u64) -> Result<CheckReport> {
    let closed = model.expected_square();
    let m = model.m_d() + model.m_a();
    let inputs = json!({
        "n": model.n(), "kind": model.kind(), "m_d": model.m_d(), "m_a": model.m_a(),
        "p": model.p(), "q": model.q(),
    });
    if m <= ENUMERATION_LIMIT {
        let n = model.n();
        let mut exact = Array2::<f64>::zeros((n, n));
        for (prob, r) in model.enumerate()? {
            let s = model.to_shift(&r).into_matrix();
            exact.scaled_add(prob, &s.dot(&s));
        }
        let err = max_abs_diff(&exact, &closed);
        return Ok(CheckReport::upper("moment-formula", inputs, err, 1e-12, 0.0)
            .with_note("exhaustive enumeration"));
    }
    let mut rng = derive_stream(seed, &[0]);
    let n = model.n();
    let mut sum = Array2::<f64>::zeros((n, n));
    let mut sq = Array2::<f64>::zeros((n, n));
    for _ in 0..MOMENT_MC_SAMPLES {
        let s = model.sample_shift(&mut rng).into_matrix();
        let s2 = s.dot(&s);
        sq.zip_mut_with(&s2, |a, b| *a += b * b);
        sum += &s2;
    }
    let cnt = MOMENT_MC_SAMPLES as f64;
    let mean = &sum / cnt;
    let mut worst = 0.0f64;
    let mut worst_se = 0.0f64;
    for ((idx, &mu), &c) in mean.indexed_iter().zip(closed.iter()) {
        let var = (sq[idx] / cnt - mu * mu).max(0.0);
        let se = (var / cnt).sqrt();
        let z = (mu - c).abs();
        if z - 3.0 * se > worst - 3.0 * worst_se {
            worst = z;
            worst_se = se;
        }
    }
    Ok(CheckReport::upper("moment-formula", inputs, worst, 0.0, worst_se)
        .with_note("Monte Carlo fallback"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub eps: Vec<f64>,
    pub mean_deviation: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Least-squares slope through the origin of mean deviation against `eps`.
    pub slope: f64,
    /// `K C_L L C_sigma^L F^(L-1) ||x||`.
    pub c_b: f64,
    pub ratio: f64,
    pub report: CheckReport,
}

/// Random symmetric matrix with spectral norm 1.
fn unit_symmetric<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Array2<f64>> {
    let mut e = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let v: f64 = StandardNormal.sample(rng);
            e[[i, j]] = v;
            e[[j, i]] = v;
        }
    }
    let r = eigh(&e)?.spectral_radius();
    if r == 0.0 {
        return Err(SgnnError::Numerical("degenerate perturbation".into()));
    }
    Ok(e / r)
}

/// Output deviation under additive shift perturbations of spectral norm `eps`, against
/// the first-order constant `C_B`. Each trial fixes one sampled realization sequence and
/// one set of perturbation directions, reused across `eps`, so deviations are paired.
pub fn check_stability(
    params: &SgnnParams,
    model: &GresModel,
    x: &[f64],
    eps_list: &[f64],
    trials: usize,
    lipschitz_samples: usize,
    seed: u64,
) -> Result<StabilityReport> {
    check_len(params.n(), x.len(), "stability check input")?;
    if eps_list.is_empty() || trials == 0 {
        return Err(SgnnError::Config("stability check needs eps values and trials".into()));
    }
    let arch = params.arch();
    let slots = arch.num_slots();
    let n = params.n();
    let per_trial: Vec<Vec<f64>> = map_indexed(trials, |t| -> Result<Vec<f64>> {
        let mut rng = derive_stream(seed, &[t as u64]);
        let base: Vec<Array2<f64>> = (0..slots)
            .map(|_| model.sample_shift(&mut rng).into_matrix())
            .collect();
        let dirs: Vec<Array2<f64>> = (0..slots)
            .map(|_| unit_symmetric(n, &mut rng))
            .collect::<Result<_>>()?;
        let wrap = |mats: Vec<Array2<f64>>| -> Result<ExplicitSeq<ShiftOperator>> {
            Ok(ExplicitSeq {
                shifts: mats
                    .into_iter()
                    .map(|m| ShiftOperator::new(ShiftKind::Adjacency, m))
                    .collect::<Result<_>>()?,
            })
        };
        let phi0 = forward(params, &wrap(base.clone())?, x, 1)?.phi().to_vec();
        eps_list
            .iter()
            .map(|&eps| {
                let pert = base.iter().zip(&dirs).map(|(s, e)| s + &(e * eps)).collect();
                let phi = forward(params, &wrap(pert)?, x, 1)?.phi().to_vec();
                Ok(phi.iter().zip(&phi0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            })
            .collect()
    })?;
    let mut mean_deviation = Vec::with_capacity(eps_list.len());
    let mut stderr = Vec::with_capacity(eps_list.len());
    for e in 0..eps_list.len() {
        let col: Vec<f64> = per_trial.iter().map(|r| r[e]).collect();
        let (m, se) = mean_and_stderr(&col);
        mean_deviation.push(m);
        stderr.push(se);
    }
    let num: f64 = eps_list.iter().zip(&mean_deviation).map(|(e, d)| e * d).sum();
    let den: f64 = eps_list.iter().map(|e| e * e).sum();
    let slope = if den > 0.0 { num / den } else { 0.0 };
    let slope_se = if den > 0.0 {
        eps_list.iter().zip(&stderr).map(|(e, s)| e * s).sum::<f64>() / den
    } else {
        0.0
    };

    let radius = model.spectral_envelope()?;
    let lip = network_lipschitz(params, radius, lipschitz_samples, &mut derive_stream(seed, &[u64::MAX]))?;
    let l = arch.layers() as i32;
    let c_sigma = arch.activation.lipschitz();
    let c_b = arch.k as f64
        * lip.c_l
        * l as f64
        * c_sigma.powi(l)
        * (arch.hidden_width() as f64).powi(l - 1)
        * norm2(x);
    let ratio = if c_b > 0.0 { slope / c_b } else if slope == 0.0 { 0.0 } else { f64::INFINITY };
    let report = CheckReport::upper(
        "stability",
        json!({ "eps": eps_list, "trials": trials, "c_l": lip.c_l, "domain_radius": radius }),
        slope,
        c_b,
        slope_se,
    );
    Ok(StabilityReport {
        eps: eps_list.to_vec(),
        mean_deviation,
        stderr,
        slope,
        c_b,
        ratio,
        report,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceDiag {
    /// Primal suboptimality proxy.
    pub xi_estimate: f64,
    /// `ceil(||gamma_0 - gamma_final||^2 / (2 eta delta))`, the final duals standing in for
    /// the optimum.
    pub t_bound: f64,
    /// `2 xi + eta ((C_f + C_y/sqrt(n))^2 + (C_s + C_y^2/n)^2) / 2 + delta`.
    pub error_radius: f64,
}

/// Convergence diagnostics for a finished run. `gamma0` is the initial dual point,
/// `xi_hat` a suboptimality proxy, `c_y` an output-norm bound, `delta` the target accuracy.
pub fn convergence_diagnostics(
    trace: &TrainTrace,
    cfg: &TrainConfig,
    gamma0: DualVars,
    c_y: f64,
    n: usize,
    xi_hat: f64,
    delta: f64,
) -> Result<ConvergenceDiag> {
    if !(delta > 0.0) || n == 0 || !(xi_hat >= 0.0) || !(c_y >= 0.0) {
        return Err(SgnnError::Config("diagnostics need delta > 0, n > 0, and nonnegative xi, C_y".into()));
    }
    let last = trace
        .rows
        .last()
        .ok_or_else(|| SgnnError::Config("empty trace".into()))?;
    let d1 = last.gamma1 - gamma0.gamma1;
    let d2 = last.gamma2 - gamma0.gamma2;
    let eta = cfg.eta_dual;
    let t_bound = if eta > 0.0 {
        ((d1 * d1 + d2 * d2) / (2.0 * eta * delta)).ceil()
    } else {
        f64::INFINITY
    };
    Ok(ConvergenceDiag {
        xi_estimate: xi_hat,
        t_bound,
        error_radius: error_radius(xi_hat, eta, cfg.c_f, cfg.c_s, c_y, n, delta),
    })
}

/// `2 xi + eta ((C_f + C_y/sqrt(n))^2 + (C_s + C_y^2/n)^2) / 2 + delta`.
pub fn error_radius(xi: f64, eta: f64, c_f: f64, c_s: f64, c_y: f64, n: usize, delta: f64) -> f64 {
    let nf = n as f64;
    let a = c_f + c_y / nf.sqrt();
    let b = c_s + c_y * c_y / nf;
    2.0 * xi + eta * (a * a + b * b) / 2.0 + delta
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn lipschitz_trivial_cases() {
        let mut rng = stream(0);
        let c = estimate_lipschitz(&[3.0], 1.0, 100, &mut rng).unwrap();
        assert_eq!(c.c_l, 0.0);
        let lin = estimate_lipschitz(&[0.0, 1.0], 1.0, 100, &mut rng).unwrap();
        assert!((lin.c_l - 1.0).abs() < 1e-15);
        assert!(estimate_lipschitz(&[0.0, 1.0], 1.0, 99, &mut rng).is_err());
    }

    #[test]
    fn variance_bound_hand_value() {
        let v = VarianceBoundInputs {
            c_l: 1.0,
            m_d: 1,
            m_a: 0,
            p: 0.5,
            q: 0.0,
            k: 1,
            layers: 1,
            width: 1,
            c_sigma: 1.0,
            n: 4,
            x_norm: 1.0,
        };
        assert!((variance_bound(&v).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(variance_bound(&VarianceBoundInputs { p: 0.0, ..v }).unwrap(), 0.0);
        assert_eq!(variance_bound(&VarianceBoundInputs { c_l: 0.0, ..v }).unwrap(), 0.0);
    }

    #[test]
    fn report_verdicts() {
        let r = CheckReport::upper("x", Value::Null, 1.0, 0.9, 0.03);
        assert!(r.violated);
        let r = CheckReport::upper("x", Value::Null, 1.0, 0.9, 0.034);
        assert!(!r.violated);
        let r = CheckReport::lower("x", Value::Null, 0.9, 0.95, 0.03, 2.0);
        assert!(!r.violated);
        assert!((r.slack + 0.05).abs() < 1e-12);
    }

    #[test]
    fn radius_limits_and_monotonicity() {
        assert!((error_radius(0.1, 0.0, 0.0, 1.0, 2.0, 10, 0.01) - 0.21).abs() < 1e-15);
        let mut prev = 0.0;
        for eta in [0.01, 0.1, 0.5, 1.0] {
            let r = error_radius(0.1, eta, 0.2, 1.0, 2.0, 10, 0.01);
            assert!(r > prev);
            prev = r;
        }
    }
}
