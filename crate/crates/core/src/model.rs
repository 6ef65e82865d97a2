//! Stochastic graph filters, the layered network, and its exact reverse-mode gradient.
//!
//! Signals travel in node-major blocks: a feature map of `F` features over `n`
//! nodes for a batch of `b` inputs is stored as `x[(f * n + i) * b + c]`.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result, SgnnError};
use crate::graph::Shift;
use crate::gres::{GresModel, Realization};

/// Pointwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu { slope: f64 },
    Abs,
    Identity,
}

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

impl Activation {
    #[inline]
    pub fn apply(self, u: f64) -> f64 {
        match self {
            Activation::Relu => u.max(0.0),
            Activation::LeakyRelu { slope } => {
                if u > 0.0 {
                    u
                } else {
                    slope * u
                }
            }
            Activation::Abs => u.abs(),
            Activation::Identity => u,
        }
    }

    /// Derivative, with the kink at zero resolved to the left-hand slope
    /// (`0` for ReLU and Abs, `slope` for leaky ReLU).
    #[inline]
    pub fn derivative(self, u: f64) -> f64 {
        match self {
            Activation::Relu => {
                if u > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { slope } => {
                if u > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Abs => {
                if u > 0.0 {
                    1.0
                } else if u < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    /// Lipschitz constant `C_sigma`.
    pub fn lipschitz(self) -> f64 {
        match self {
            Activation::LeakyRelu { slope } => slope.abs().max(1.0),
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutKind {
    /// Dense map from all `n * F_L` final features to `out_dim` scores.
    Dense,
    /// The same `F_L -> out_dim` map applied at every node.
    PerNode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Readout {
    pub kind: ReadoutKind,
    pub out_dim: usize,
}

/// How many independent shifts a forward pass draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RealizationMode {
    /// One shift per filter and tap.
    #[default]
    PerFilter,
    /// One shift per tap index and layer, shared by the layer's filters. Non-default.
    SharedPerHop,
}

/// Layer widths, filter order, nonlinearity, and readout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    /// `F_0, ..., F_L`.
    pub widths: Vec<usize>,
    /// Filter order `K`; each filter has `K + 1` taps.
    pub k: usize,
    pub activation: Activation,
    #[serde(default)]
    pub readout: Option<Readout>,
    #[serde(default)]
    pub realization_mode: RealizationMode,
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(SgnnError::InvalidParams("need at least one layer".into()));
        }
        if self.widths.contains(&0) {
            return Err(SgnnError::InvalidParams("layer widths must be positive".into()));
        }
        if let Some(r) = self.readout {
            if r.out_dim == 0 {
                return Err(SgnnError::InvalidParams("readout out_dim must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn taps(&self) -> usize {
        self.k + 1
    }

    /// Output feature count `F_L` before the readout.
    pub fn out_features(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    /// Widest hidden layer, `1` for single-layer networks.
    pub fn hidden_width(&self) -> usize {
        let l = self.layers();
        self.widths[1..l].iter().copied().max().unwrap_or(1)
    }

    pub fn num_filters(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1]).sum()
    }

    pub fn num_coeffs(&self) -> usize {
        self.num_filters() * self.taps()
    }

    /// Offset of filter `(l, f, g)`'s first tap.
    pub fn filter_offset(&self, l: usize, f: usize, g: usize) -> usize {
        let base: usize = self.widths[..l + 1]
            .windows(2)
            .map(|w| w[0] * w[1])
            .sum::<usize>();
        (base + f * self.widths[l] + g) * self.taps()
    }

    /// Number of shift draws `P` per forward pass.
    pub fn num_slots(&self) -> usize {
        match self.realization_mode {
            RealizationMode::PerFilter => self.num_filters() * self.k,
            RealizationMode::SharedPerHop => self.layers() * self.k,
        }
    }

    /// Slot of tap `k >= 1` of filter `(l, f, g)`.
    #[inline]
    pub fn slot(&self, l: usize, f: usize, g: usize, k: usize) -> usize {
        debug_assert!(k >= 1 && k <= self.k);
        match self.realization_mode {
            RealizationMode::PerFilter => {
                let base: usize = self.widths[..l + 1].windows(2).map(|w| w[0] * w[1]).sum();
                (base + f * self.widths[l] + g) * self.k + k - 1
            }
            RealizationMode::SharedPerHop => l * self.k + k - 1,
        }
    }

    fn readout_in(&self, n: usize) -> Option<usize> {
        self.readout.map(|r| match r.kind {
            ReadoutKind::Dense => n * self.out_features(),
            ReadoutKind::PerNode => self.out_features(),
        })
    }

    /// Length of the network output for a single input on `n` nodes.
    pub fn output_len(&self, n: usize) -> usize {
        match self.readout {
            None => n * self.out_features(),
            Some(Readout {
                kind: ReadoutKind::Dense,
                out_dim,
            }) => out_dim,
            Some(Readout {
                kind: ReadoutKind::PerNode,
                out_dim,
            }) => n * out_dim,
        }
    }
}

/// The shift count `K (2F + (L - 1) F^2)` quoted for an `L`-layer, width-`F` network,
/// reported alongside [`Architecture::num_slots`] which counts the actual filters.
pub fn quoted_shift_count(k: usize, f: usize, l: usize) -> usize {
    k * (2 * f + (l.saturating_sub(1)) * f * f)
}

/// All trainable values in one flat vector: filter taps `[l][f][g][k]`, then readout
/// weights `[out][in]` and bias `[out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SgnnParams {
    arch: Architecture,
    n: usize,
    values: Vec<f64>,
}

impl SgnnParams {
    pub fn zeros(arch: Architecture, n: usize) -> Result<Self> {
        arch.validate()?;
        let len = arch.num_coeffs()
            + arch
                .readout
                .map(|r| r.out_dim * (arch.readout_in(n).unwrap_or(0) + 1))
                .unwrap_or(0);
        Ok(SgnnParams {
            arch,
            n,
            values: vec![0.0; len],
        })
    }

    /// Taps uniform in `+-1 / sqrt((K + 1) F_{l-1})`; readout uniform in `+-1 / sqrt(fan_in)`, zero bias.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, n: usize, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(arch, n)?;
        let taps = p.arch.taps();
        for l in 0..p.arch.layers() {
            let bound = 1.0 / ((taps * p.arch.widths[l]) as f64).sqrt();
            let start = p.arch.filter_offset(l, 0, 0);
            let len = p.arch.widths[l] * p.arch.widths[l + 1] * taps;
            for v in &mut p.values[start..start + len] {
                *v = rng.random_range(-bound..=bound);
            }
        }
        if let Some(fan_in) = p.arch.readout_in(n) {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w0 = p.arch.num_coeffs();
            let wl = p.readout_weight_len();
            for v in &mut p.values[w0..w0 + wl] {
                *v = rng.random_range(-bound..=bound);
            }
        }
        Ok(p)
    }

    pub fn from_values(arch: Architecture, n: usize, values: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(arch, n)?;
        check_len(p.values.len(), values.len(), "parameter vector")?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SgnnError::InvalidParams("non-finite parameter".into()));
        }
        p.values = values;
        Ok(p)
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Taps `h_0..h_K` of filter `(l, f, g)`.
    pub fn taps(&self, l: usize, f: usize, g: usize) -> &[f64] {
        let o = self.arch.filter_offset(l, f, g);
        &self.values[o..o + self.arch.taps()]
    }

    pub fn taps_mut(&mut self, l: usize, f: usize, g: usize) -> &mut [f64] {
        let o = self.arch.filter_offset(l, f, g);
        let t = self.arch.taps();
        &mut self.values[o..o + t]
    }

    /// Every filter's taps in `(l, f, g)` order.
    pub fn filters(&self) -> impl Iterator<Item = &[f64]> {
        self.values[..self.arch.num_coeffs()].chunks(self.arch.taps())
    }

    fn readout_weight_len(&self) -> usize {
        match (self.arch.readout, self.arch.readout_in(self.n)) {
            (Some(r), Some(i)) => r.out_dim * i,
            _ => 0,
        }
    }

    pub fn readout_weights(&self) -> &[f64] {
        let o = self.arch.num_coeffs();
        &self.values[o..o + self.readout_weight_len()]
    }

    pub fn readout_bias(&self) -> &[f64] {
        let o = self.arch.num_coeffs() + self.readout_weight_len();
        &self.values[o..]
    }

    /// Zeroes readout weights and bias.
    pub fn zero_readout(&mut self) {
        let o = self.arch.num_coeffs();
        self.values[o..].fill(0.0);
    }

    /// Hash of the exact parameter bits, used to detect stale tapes.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ self.values.len() as u64;
        for v in &self.values {
            h ^= v.to_bits();
            h = h.wrapping_mul(0x0000_0100_0000_01b3).rotate_left(29);
        }
        h
    }

    /// Nested coefficient arrays `[l][f][g][k]`.
    pub fn nested_coeffs(&self) -> Vec<Vec<Vec<Vec<f64>>>> {
        (0..self.arch.layers())
            .map(|l| {
                (0..self.arch.widths[l + 1])
                    .map(|f| {
                        (0..self.arch.widths[l])
                            .map(|g| self.taps(l, f, g).to_vec())
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    /// Readout as `(weights[out][in], bias[out])`.
    pub fn nested_readout(&self) -> Option<(Vec<Vec<f64>>, Vec<f64>)> {
        let fan_in = self.arch.readout_in(self.n)?;
        let w = self.readout_weights().chunks(fan_in).map(<[f64]>::to_vec).collect();
        Some((w, self.readout_bias().to_vec()))
    }

    /// Inverse of [`nested_coeffs`](Self::nested_coeffs) plus [`nested_readout`](Self::nested_readout).
    pub fn from_nested(
        arch: Architecture,
        n: usize,
        coeffs: &[Vec<Vec<Vec<f64>>>],
        readout: Option<&(Vec<Vec<f64>>, Vec<f64>)>,
    ) -> Result<Self> {
        let mut values = Vec::new();
        let bad = || SgnnError::InvalidParams("coefficient array shape does not match architecture".into());
        arch.validate()?;
        if coeffs.len() != arch.layers() {
            return Err(bad());
        }
        for (l, layer) in coeffs.iter().enumerate() {
            if layer.len() != arch.widths[l + 1] {
                return Err(bad());
            }
            for row in layer {
                if row.len() != arch.widths[l] {
                    return Err(bad());
                }
                for taps in row {
                    if taps.len() != arch.taps() {
                        return Err(bad());
                    }
                    values.extend_from_slice(taps);
                }
            }
        }
        match (arch.readout, readout) {
            (None, None) => {}
            (Some(r), Some((w, b))) => {
                let fan_in = arch.readout_in(n).unwrap_or(0);
                if w.len() != r.out_dim || w.iter().any(|row| row.len() != fan_in) || b.len() != r.out_dim {
                    return Err(bad());
                }
                for row in w {
                    values.extend_from_slice(row);
                }
                values.extend_from_slice(b);
            }
            _ => return Err(bad()),
        }
        Self::from_values(arch, n, values)
    }
}

/// Source of the shifts consumed by one forward pass, addressed by slot.
pub trait ShiftSeq: Sync {
    fn n(&self) -> usize;
    fn apply(&self, slot: usize, x: &[f64], out: &mut [f64], b: usize);
}

/// Independent realizations for every slot of an architecture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RealizationSeq {
    realizations: Vec<Realization>,
}

impl RealizationSeq {
    pub fn sample<R: RngCore + ?Sized>(model: &GresModel, arch: &Architecture, rng: &mut R) -> Self {
        Self::sample_with(model, arch, rng, false)
    }

    /// With `complement`, each draw is replaced by its complement (antithetic partner).
    pub fn sample_with<R: RngCore + ?Sized>(
        model: &GresModel,
        arch: &Architecture,
        rng: &mut R,
        complement: bool,
    ) -> Self {
        RealizationSeq {
            realizations: (0..arch.num_slots())
                .map(|_| model.sample_with(rng, complement))
                .collect(),
        }
    }

    pub fn from_realizations(realizations: Vec<Realization>) -> Self {
        RealizationSeq { realizations }
    }

    pub fn len(&self) -> usize {
        self.realizations.len()
    }
    pub fn is_empty(&self) -> bool {
        self.realizations.is_empty()
    }
    pub fn realizations(&self) -> &[Realization] {
        &self.realizations
    }

    pub fn bind<'a>(&'a self, model: &'a GresModel) -> SampledSeq<'a> {
        SampledSeq { model, seq: self }
    }
}

/// A realization sequence together with the model that interprets it.
#[derive(Clone, Copy)]
pub struct SampledSeq<'a> {
    pub model: &'a GresModel,
    pub seq: &'a RealizationSeq,
}

impl ShiftSeq for SampledSeq<'_> {
    fn n(&self) -> usize {
        self.model.n()
    }
    fn apply(&self, slot: usize, x: &[f64], out: &mut [f64], b: usize) {
        self.model.apply(&self.seq.realizations[slot], x, out, b);
    }
}

/// Explicit per-slot operators.
pub struct ExplicitSeq<S: Shift> {
    pub shifts: Vec<S>,
}

impl<S: Shift> ShiftSeq for ExplicitSeq<S> {
    fn n(&self) -> usize {
        self.shifts.first().map_or(0, Shift::dim)
    }
    fn apply(&self, slot: usize, x: &[f64], out: &mut [f64], b: usize) {
        self.shifts[slot].apply(x, out, b);
    }
}

/// The same operator at every slot.
pub struct RepeatedShift<'a, S: Shift>(pub &'a S);

impl<S: Shift> ShiftSeq for RepeatedShift<'_, S> {
    fn n(&self) -> usize {
        self.0.dim()
    }
    fn apply(&self, _slot: usize, x: &[f64], out: &mut [f64], b: usize) {
        self.0.apply(x, out, b);
    }
}

/// Stochastic graph filter on a single signal: `sum_k h_k S_k ... S_1 x`.
pub fn filter_apply<S: Shift>(taps: &[f64], shifts: &[S], x: &[f64]) -> Result<Vec<f64>> {
    if taps.is_empty() {
        return Err(SgnnError::InvalidParams("filter needs at least one tap".into()));
    }
    check_len(taps.len() - 1, shifts.len(), "filter shifts")?;
    let n = x.len();
    let mut y: Vec<f64> = x.iter().map(|v| taps[0] * v).collect();
    let mut z = x.to_vec();
    let mut next = vec![0.0; n];
    for (h, s) in taps[1..].iter().zip(shifts) {
        check_len(n, s.dim(), "filter shift dimension")?;
        s.apply(&z, &mut next, 1);
        std::mem::swap(&mut z, &mut next);
        for (yi, zi) in y.iter_mut().zip(&z) {
            *yi += h * zi;
        }
    }
    Ok(y)
}

#[derive(Debug, Clone)]
struct LayerTape {
    pre: Vec<f64>,
    post: Vec<f64>,
    /// `z_k` for every filter `(f, g)` and `k = 1..=K`, each `n * b` long.
    shifted: Vec<f64>,
}

/// Record of one batched forward pass, replayed by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardTape {
    fingerprint: u64,
    n: usize,
    b: usize,
    input: Vec<f64>,
    layers: Vec<LayerTape>,
    output: Vec<f64>,
}

impl ForwardTape {
    pub fn batch(&self) -> usize {
        self.b
    }
    pub fn n(&self) -> usize {
        self.n
    }
    /// Pre-readout output `Phi`, `F_L * n * b` long.
    pub fn phi(&self) -> &[f64] {
        &self.layers.last().expect("at least one layer").post
    }
    /// Final output: readout scores if present, otherwise `Phi`.
    pub fn output(&self) -> &[f64] {
        if self.output.is_empty() {
            self.phi()
        } else {
            &self.output
        }
    }
    pub fn pre_activation(&self, l: usize) -> &[f64] {
        &self.layers[l].pre
    }
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Batched forward pass over `b` inputs laid out `[g][i][c]`.
pub fn forward(params: &SgnnParams, seq: &dyn ShiftSeq, x: &[f64], b: usize) -> Result<ForwardTape> {
    let arch = params.arch();
    let n = params.n();
    check_len(n, seq.n(), "shift sequence dimension")?;
    check_len(arch.widths[0] * n * b, x.len(), "forward input")?;
    let nb = n * b;
    let kk = arch.k;
    let mut layers: Vec<LayerTape> = Vec::with_capacity(arch.layers());
    for l in 0..arch.layers() {
        let (fin, fout) = (arch.widths[l], arch.widths[l + 1]);
        let prev: &[f64] = if l == 0 { x } else { &layers[l - 1].post };
        let mut pre = vec![0.0; fout * nb];
        let mut shifted = vec![0.0; fout * fin * kk * nb];
        for f in 0..fout {
            for g in 0..fin {
                let taps = params.taps(l, f, g);
                let xg = &prev[g * nb..(g + 1) * nb];
                let u = &mut pre[f * nb..(f + 1) * nb];
                axpy(taps[0], xg, u);
                let base = (f * fin + g) * kk * nb;
                for k in 1..=kk {
                    let (done, rest) = shifted.split_at_mut(base + (k - 1) * nb);
                    let src = if k == 1 { xg } else { &done[base + (k - 2) * nb..] };
                    let dst = &mut rest[..nb];
                    seq.apply(arch.slot(l, f, g, k), src, dst, b);
                    axpy(taps[k], dst, u);
                }
            }
        }
        let post: Vec<f64> = pre.iter().map(|&u| arch.activation.apply(u)).collect();
        if post.iter().any(|v| !v.is_finite()) {
            return Err(SgnnError::NonFinite { layer: l + 1 });
        }
        layers.push(LayerTape { pre, post, shifted });
    }
    let phi = &layers.last().expect("validated").post;
    let output = match arch.readout {
        None => Vec::new(),
        Some(r) => readout_forward(params, r, phi, n, b),
    };
    if output.iter().any(|v| !v.is_finite()) {
        return Err(SgnnError::NonFinite {
            layer: arch.layers() + 1,
        });
    }
    Ok(ForwardTape {
        fingerprint: params.fingerprint(),
        n,
        b,
        input: x.to_vec(),
        layers,
        output,
    })
}

fn readout_forward(params: &SgnnParams, r: Readout, phi: &[f64], n: usize, b: usize) -> Vec<f64> {
    let fl = params.arch().out_features();
    let w = params.readout_weights();
    let bias = params.readout_bias();
    match r.kind {
        ReadoutKind::Dense => {
            let fan_in = n * fl;
            let mut out = vec![0.0; r.out_dim * b];
            for c in 0..r.out_dim {
                let o = &mut out[c * b..(c + 1) * b];
                o.fill(bias[c]);
                let row = &w[c * fan_in..(c + 1) * fan_in];
                for f in 0..fl {
                    for i in 0..n {
                        let wv = row[i * fl + f];
                        if wv != 0.0 {
                            axpy(wv, &phi[(f * n + i) * b..(f * n + i + 1) * b], o);
                        }
                    }
                }
            }
            out
        }
        ReadoutKind::PerNode => {
            let nb = n * b;
            let mut out = vec![0.0; r.out_dim * nb];
            for c in 0..r.out_dim {
                let o = &mut out[c * nb..(c + 1) * nb];
                o.fill(bias[c]);
                for f in 0..fl {
                    axpy(w[c * fl + f], &phi[f * nb..(f + 1) * nb], o);
                }
            }
            out
        }
    }
}

/// Upstream gradients for [`backward`]: with respect to the final output and/or `Phi`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Upstream<'a> {
    pub output: Option<&'a [f64]>,
    pub phi: Option<&'a [f64]>,
}

/// Reverse pass accumulating the parameter gradient into `grad`.
pub fn backward(
    params: &SgnnParams,
    seq: &dyn ShiftSeq,
    tape: &ForwardTape,
    upstream: Upstream<'_>,
    grad: &mut [f64],
) -> Result<()> {
    if tape.fingerprint != params.fingerprint() || tape.n != params.n() || seq.n() != tape.n {
        return Err(SgnnError::StaleTape);
    }
    check_len(params.len(), grad.len(), "gradient buffer")?;
    let arch = params.arch();
    let (n, b) = (tape.n, tape.b);
    let nb = n * b;
    let kk = arch.k;
    let layers = arch.layers();

    let mut dx = vec![0.0; arch.out_features() * nb];
    if let Some(dphi) = upstream.phi {
        check_len(dx.len(), dphi.len(), "upstream phi gradient")?;
        dx.copy_from_slice(dphi);
    }
    if let Some(dout) = upstream.output {
        check_len(tape.output().len(), dout.len(), "upstream output gradient")?;
        match arch.readout {
            None => axpy(1.0, dout, &mut dx),
            Some(r) => readout_backward(params, r, tape.phi(), dout, n, b, &mut dx, grad),
        }
    }

    let mut tmp = vec![0.0; nb];
    let mut acc = vec![0.0; nb];
    for l in (0..layers).rev() {
        let (fin, fout) = (arch.widths[l], arch.widths[l + 1]);
        let lt = &tape.layers[l];
        let prev: &[f64] = if l == 0 { &tape.input } else { &tape.layers[l - 1].post };
        let du: Vec<f64> = dx
            .iter()
            .zip(&lt.pre)
            .map(|(d, &u)| d * arch.activation.derivative(u))
            .collect();
        let need_dx = l > 0;
        let mut dprev = if need_dx { vec![0.0; fin * nb] } else { Vec::new() };
        for f in 0..fout {
            let duf = &du[f * nb..(f + 1) * nb];
            if duf.iter().all(|&v| v == 0.0) {
                continue;
            }
            for g in 0..fin {
                let off = arch.filter_offset(l, f, g);
                let base = (f * fin + g) * kk * nb;
                let xg = &prev[g * nb..(g + 1) * nb];
                grad[off] += dot(duf, xg);
                for k in 1..=kk {
                    let z = &lt.shifted[base + (k - 1) * nb..base + k * nb];
                    grad[off + k] += dot(duf, z);
                }
                if need_dx {
                    let taps = params.taps(l, f, g);
                    // Horner in reverse: r_K = h_K du, r_{k-1} = h_{k-1} du + S_k r_k.
                    for (a, d) in acc.iter_mut().zip(duf) {
                        *a = taps[kk] * d;
                    }
                    for k in (1..=kk).rev() {
                        seq.apply(arch.slot(l, f, g, k), &acc, &mut tmp, b);
                        for ((a, t), d) in acc.iter_mut().zip(&tmp).zip(duf) {
                            *a = t + taps[k - 1] * d;
                        }
                    }
                    axpy(1.0, &acc, &mut dprev[g * nb..(g + 1) * nb]);
                }
            }
        }
        dx = dprev;
    }
    Ok(())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[allow(clippy::too_many_arguments)]
fn readout_backward(
    params: &SgnnParams,
    r: Readout,
    phi: &[f64],
    dout: &[f64],
    n: usize,
    b: usize,
    dphi: &mut [f64],
    grad: &mut [f64],
) {
    let fl = params.arch().out_features();
    let w = params.readout_weights();
    let w0 = params.arch().num_coeffs();
    let wl = w.len();
    match r.kind {
        ReadoutKind::Dense => {
            let fan_in = n * fl;
            for c in 0..r.out_dim {
                let d = &dout[c * b..(c + 1) * b];
                grad[w0 + wl + c] += d.iter().sum::<f64>();
                for f in 0..fl {
                    for i in 0..n {
                        let idx = i * fl + f;
                        let src = &phi[(f * n + i) * b..(f * n + i + 1) * b];
                        grad[w0 + c * fan_in + idx] += dot(d, src);
                        axpy(w[c * fan_in + idx], d, &mut dphi[(f * n + i) * b..(f * n + i + 1) * b]);
                    }
                }
            }
        }
        ReadoutKind::PerNode => {
            let nb = n * b;
            for c in 0..r.out_dim {
                let d = &dout[c * nb..(c + 1) * nb];
                grad[w0 + wl + c] += d.iter().sum::<f64>();
                for f in 0..fl {
                    grad[w0 + c * fl + f] += dot(d, &phi[f * nb..(f + 1) * nb]);
                    axpy(w[c * fl + f], d, &mut dphi[f * nb..(f + 1) * nb]);
                }
            }
        }
    }
}

/// Packs single-feature signals into a node-major block.
pub fn pack_signals(signals: &[&[f64]], n: usize) -> Vec<f64> {
    let b = signals.len();
    let mut out = vec![0.0; n * b];
    for (c, s) in signals.iter().enumerate() {
        for (i, &v) in s.iter().enumerate() {
            out[i * b + c] = v;
        }
    }
    out
}

/// Column `c` of feature `f` from a node-major block.
pub fn unpack_column(block: &[f64], n: usize, b: usize, f: usize, c: usize) -> Vec<f64> {
    (0..n).map(|i| block[(f * n + i) * b + c]).collect()
}

/// Frequency response `h(lambda) = sum_k h_k prod_{j<=k} lambda_j`; only the first
/// `K` entries of `lambda` are read.
pub fn frequency_response(taps: &[f64], lambda: &[f64]) -> f64 {
    let mut prod = 1.0;
    let mut s = taps[0];
    for (h, l) in taps[1..].iter().zip(lambda) {
        prod *= l;
        s += h * prod;
    }
    s
}

/// Gradient of [`frequency_response`] with respect to `lambda_1..lambda_K`.
pub fn response_gradient(taps: &[f64], lambda: &[f64]) -> Vec<f64> {
    let kk = taps.len() - 1;
    (1..=kk)
        .map(|j| {
            let mut total = 0.0;
            let mut prod: f64 = lambda[..j - 1].iter().product();
            total += taps[j] * prod;
            for k in (j + 1)..=kk {
                prod *= lambda[k - 1];
                total += taps[k] * prod;
            }
            total
        })
        .collect()
}

/// `max |h(lambda)|` over the cube `[-r, r]^K`, attained at a vertex: `sum_k |h_k| r^k`.
pub fn max_abs_response(taps: &[f64], radius: f64) -> f64 {
    taps.iter()
        .enumerate()
        .map(|(k, h)| h.abs() * radius.powi(k as i32))
        .sum()
}

/// Closed-form output bound `C_sigma^L F^(L-1) ||x||` for normalized filters and a
/// single output feature; `F` is the widest hidden layer.
pub fn output_bound(arch: &Architecture, x_norm: f64) -> f64 {
    let l = arch.layers() as i32;
    arch.activation.lipschitz().powi(l) * (arch.hidden_width() as f64).powi(l - 1) * x_norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Edge, Graph, ShiftKind, ShiftOperator};
    use crate::rng::stream;
    use ndarray::Array2;

    fn arch(widths: &[usize], k: usize, act: Activation) -> Architecture {
        Architecture {
            widths: widths.to_vec(),
            k,
            activation: act,
            readout: None,
            realization_mode: RealizationMode::PerFilter,
        }
    }

    #[test]
    fn constant_and_identity_filters() {
        let s = ShiftOperator::from_graph(&Graph::empty(3), ShiftKind::Adjacency);
        let x = [1.0, -2.0, 3.0];
        assert_eq!(filter_apply::<ShiftOperator>(&[2.0], &[], &x).unwrap(), vec![2.0, -4.0, 6.0]);
        let eye = ShiftOperator::new(ShiftKind::Adjacency, Array2::eye(3)).unwrap();
        assert_eq!(filter_apply(&[0.0, 1.0], &[eye], &x).unwrap(), x.to_vec());
        assert!(filter_apply(&[0.0, 1.0], &[s.clone(), s], &x).is_err());
    }

    #[test]
    fn slots_cover_every_tap_once() {
        let a = arch(&[1, 3, 2], 4, Activation::Relu);
        let mut seen = vec![false; a.num_slots()];
        for l in 0..2 {
            for f in 0..a.widths[l + 1] {
                for g in 0..a.widths[l] {
                    for k in 1..=4 {
                        let s = a.slot(l, f, g, k);
                        assert!(!seen[s]);
                        seen[s] = true;
                    }
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
        assert_eq!(a.num_slots(), 4 * (3 + 6));
        assert_eq!(quoted_shift_count(4, 3, 2), 4 * (6 + 9));
    }

    #[test]
    fn linear_model_gradient() {
        let a = arch(&[1, 1], 0, Activation::Identity);
        let p = SgnnParams::from_values(a, 3, vec![0.5]).unwrap();
        let s = ShiftOperator::from_graph(&Graph::empty(3), ShiftKind::Adjacency);
        let seq = RepeatedShift(&s);
        let x = [1.0, 2.0, -1.0];
        let t = [0.0, 1.0, 1.0];
        let tape = forward(&p, &seq, &x, 1).unwrap();
        assert_eq!(tape.output(), &[0.5, 1.0, -0.5]);
        let r: Vec<f64> = tape.output().iter().zip(&t).map(|(y, t)| y - t).collect();
        let mut g = vec![0.0; 1];
        backward(&p, &seq, &tape, Upstream { output: Some(&r), phi: None }, &mut g).unwrap();
        let want: f64 = x.iter().zip(&r).map(|(a, b)| a * b).sum();
        assert!((g[0] - want).abs() < 1e-15);

        let mut g0 = vec![0.0; 1];
        backward(&p, &seq, &tape, Upstream { output: Some(&[0.0; 3]), phi: None }, &mut g0).unwrap();
        assert_eq!(g0, vec![0.0]);
    }

    #[test]
    fn stale_tape_rejected() {
        let a = arch(&[1, 1], 1, Activation::Relu);
        let g = Graph::new(2, [Edge::new(0, 1, 1.0)]).unwrap();
        let s = ShiftOperator::from_graph(&g, ShiftKind::Adjacency);
        let mut p = SgnnParams::init(a, 2, &mut stream(0)).unwrap();
        let tape = forward(&p, &RepeatedShift(&s), &[1.0, 1.0], 1).unwrap();
        p.values_mut()[0] += 1.0;
        let mut gr = vec![0.0; p.len()];
        let err = backward(&p, &RepeatedShift(&s), &tape, Upstream { output: Some(&[1.0, 1.0]), phi: None }, &mut gr);
        assert!(matches!(err, Err(SgnnError::StaleTape)));
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let a = arch(&[1, 2, 1], 2, Activation::Relu);
        let g = Graph::new(3, [Edge::new(0, 1, 1.0), Edge::new(1, 2, 1.0)]).unwrap();
        let s = ShiftOperator::from_graph(&g, ShiftKind::Laplacian);
        let p = SgnnParams::init(a, 3, &mut stream(5)).unwrap();
        let tape = forward(&p, &RepeatedShift(&s), &[0.0; 3], 1).unwrap();
        assert!(tape.output().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn response_and_gradient_basics() {
        assert_eq!(frequency_response(&[1.0, 2.0, 3.0], &[1.0, 1.0]), 6.0);
        assert_eq!(frequency_response(&[0.0, 1.0], &[0.3]), 0.3);
        let g = response_gradient(&[0.5, 1.0, -2.0], &[0.3, 0.7]);
        // d/dl1 = h1 + h2 l2, d/dl2 = h2 l1
        assert!((g[0] - (1.0 - 2.0 * 0.7)).abs() < 1e-15);
        assert!((g[1] - (-2.0 * 0.3)).abs() < 1e-15);
        assert_eq!(max_abs_response(&[1.0, -1.0, 0.5], 2.0), 1.0 + 2.0 + 2.0);
    }

    #[test]
    fn output_bound_formula() {
        let a = arch(&[1, 1], 3, Activation::Relu);
        assert_eq!(output_bound(&a, 2.5), 2.5);
        let b = arch(&[1, 32, 1], 3, Activation::Relu);
        assert_eq!(output_bound(&b, 1.0), 32.0);
    }

    #[test]
    fn nested_round_trip() {
        let mut a = arch(&[1, 2, 1], 2, Activation::Relu);
        a.readout = Some(Readout { kind: ReadoutKind::Dense, out_dim: 3 });
        let p = SgnnParams::init(a.clone(), 4, &mut stream(9)).unwrap();
        let coeffs = p.nested_coeffs();
        let ro = p.nested_readout().unwrap();
        let q = SgnnParams::from_nested(a, 4, &coeffs, Some(&ro)).unwrap();
        assert_eq!(p, q);
    }
}
