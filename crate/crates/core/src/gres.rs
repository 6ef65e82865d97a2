//! Random edge sampling: a nominal graph whose designated edges drop out with
//! probability `p` and whose designated non-edges appear with probability `q`.

use ndarray::Array2;
use rand::RngCore;

use crate::error::{Result, SgnnError};
use crate::graph::{spectral_radius_of, Edge, Graph, Shift, ShiftKind, ShiftOperator};
use crate::rng::{bernoulli_draw, bernoulli_threshold};

/// Random-edge model over a fixed node set.
#[derive(Debug, Clone)]
pub struct GresModel {
    graph: Graph,
    kind: ShiftKind,
    p: f64,
    q: f64,
    fixed: Vec<Edge>,
    drop: Vec<Edge>,
    add: Vec<Edge>,
    nominal: ShiftOperator,
}

/// Which variable edges are present in one draw. Bit `k < M_d` refers to the
/// `k`-th drop edge, bit `M_d + k` to the `k`-th add edge.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Realization {
    bits: Vec<u64>,
}

impl Realization {
    fn with_len(m: usize) -> Self {
        Realization {
            bits: vec![0; m.div_ceil(64)],
        }
    }

    #[inline]
    pub fn present(&self, k: usize) -> bool {
        self.bits[k / 64] >> (k % 64) & 1 == 1
    }

    fn set(&mut self, k: usize) {
        self.bits[k / 64] |= 1 << (k % 64);
    }
}

fn check_probability(name: &str, v: f64) -> Result<()> {
    if !(0.0..1.0).contains(&v) {
        return Err(SgnnError::InvalidModel(format!(
            "{name} must lie in [0, 1), got {v}"
        )));
    }
    Ok(())
}

impl GresModel {
    /// `drop_pairs` must be nominal edges; `add_edges` must be absent from the nominal graph.
    pub fn new(
        graph: Graph,
        kind: ShiftKind,
        drop_pairs: &[(usize, usize)],
        add_edges: Vec<Edge>,
        p: f64,
        q: f64,
    ) -> Result<Self> {
        check_probability("p", p)?;
        check_probability("q", q)?;
        let n = graph.n();

        let mut drop_keys: Vec<(usize, usize)> = drop_pairs
            .iter()
            .map(|&(a, b)| if a <= b { (a, b) } else { (b, a) })
            .collect();
        let mut sorted = drop_keys.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(SgnnError::InvalidModel("duplicate drop edge".into()));
        }
        let mut drop = Vec::with_capacity(drop_keys.len());
        for &(a, b) in &drop_keys {
            let w = graph.weight(a, b).ok_or_else(|| {
                SgnnError::InvalidModel(format!("drop edge ({a}, {b}) is not in the nominal graph"))
            })?;
            drop.push(Edge { i: a, j: b, w });
        }

        let add: Vec<Edge> = add_edges.into_iter().map(|e| Edge::new(e.i, e.j, e.w)).collect();
        // Validates the add set in isolation (range, self-loops, duplicates, finite weights).
        Graph::new(n, add.iter().copied())
            .map_err(|e| SgnnError::InvalidModel(format!("add edges: {e}")))?;
        if let Some(e) = add.iter().find(|e| graph.contains(e.i, e.j)) {
            return Err(SgnnError::InvalidModel(format!(
                "add edge ({}, {}) is already in the nominal graph",
                e.i, e.j
            )));
        }

        drop_keys.sort_unstable();
        let fixed = graph
            .edges()
            .iter()
            .filter(|e| drop_keys.binary_search(&e.key()).is_err())
            .copied()
            .collect();
        let nominal = ShiftOperator::from_graph(&graph, kind);
        Ok(GresModel {
            graph,
            kind,
            p,
            q,
            fixed,
            drop,
            add,
            nominal,
        })
    }

    /// Every nominal edge droppable with probability `p`, nothing added.
    pub fn all_droppable(graph: Graph, kind: ShiftKind, p: f64) -> Result<Self> {
        let pairs: Vec<(usize, usize)> = graph.edges().iter().map(Edge::key).collect();
        Self::new(graph, kind, &pairs, Vec::new(), p, 0.0)
    }

    /// Same edge sets with different probabilities.
    pub fn with_probabilities(&self, p: f64, q: f64) -> Result<Self> {
        check_probability("p", p)?;
        check_probability("q", q)?;
        Ok(GresModel {
            p,
            q,
            ..self.clone()
        })
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }
    pub fn kind(&self) -> ShiftKind {
        self.kind
    }
    pub fn p(&self) -> f64 {
        self.p
    }
    pub fn q(&self) -> f64 {
        self.q
    }
    pub fn nominal_graph(&self) -> &Graph {
        &self.graph
    }
    pub fn nominal(&self) -> &ShiftOperator {
        &self.nominal
    }
    pub fn drop_edges(&self) -> &[Edge] {
        &self.drop
    }
    pub fn add_edges(&self) -> &[Edge] {
        &self.add
    }
    pub fn m_d(&self) -> usize {
        self.drop.len()
    }
    pub fn m_a(&self) -> usize {
        self.add.len()
    }
    fn num_variable(&self) -> usize {
        self.drop.len() + self.add.len()
    }

    /// Draws one realization. One `u32` is consumed per variable edge, drop edges first.
    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> Realization {
        self.sample_with(rng, false)
    }

    /// Like [`sample`](Self::sample), optionally using the complement of every draw;
    /// a stream replayed with `complement = true` gives the antithetic partner.
    pub fn sample_with<R: RngCore + ?Sized>(&self, rng: &mut R, complement: bool) -> Realization {
        let mut r = Realization::with_len(self.num_variable());
        let tp = bernoulli_threshold(self.p);
        let tq = bernoulli_threshold(self.q);
        let md = self.drop.len();
        for k in 0..md {
            let d = rng.next_u32();
            let d = if complement { !d } else { d };
            if !bernoulli_draw(d, tp) {
                r.set(k);
            }
        }
        for k in 0..self.add.len() {
            let d = rng.next_u32();
            let d = if complement { !d } else { d };
            if bernoulli_draw(d, tq) {
                r.set(md + k);
            }
        }
        r
    }

    /// Realization from an explicit presence pattern, drop edges then add edges.
    pub fn realization_from_pattern(&self, present: &[bool]) -> Result<Realization> {
        if present.len() != self.num_variable() {
            return Err(SgnnError::Dimension {
                expected: self.num_variable(),
                actual: present.len(),
                context: "realization pattern",
            });
        }
        let mut r = Realization::with_len(present.len());
        for (k, _) in present.iter().enumerate().filter(|(_, &b)| b) {
            r.set(k);
        }
        Ok(r)
    }

    /// Every realization with its probability, in pattern order. Only sensible for small edge sets.
    pub fn enumerate(&self) -> Result<Vec<(f64, Realization)>> {
        let m = self.num_variable();
        if m > 24 {
            return Err(SgnnError::InvalidModel(format!(
                "{m} variable edges are too many to enumerate"
            )));
        }
        let md = self.drop.len();
        let mut out = Vec::with_capacity(1 << m);
        for mask in 0u32..(1u32 << m) {
            let mut prob = 1.0;
            let mut r = Realization::with_len(m);
            for k in 0..m {
                let on = mask >> k & 1 == 1;
                if on {
                    r.set(k);
                }
                prob *= match (k < md, on) {
                    (true, true) => 1.0 - self.p,
                    (true, false) => self.p,
                    (false, true) => self.q,
                    (false, false) => 1.0 - self.q,
                };
            }
            out.push((prob, r));
        }
        Ok(out)
    }

    fn present_edges<'a>(&'a self, r: &'a Realization) -> impl Iterator<Item = &'a Edge> + 'a {
        let md = self.drop.len();
        self.fixed
            .iter()
            .chain(self.drop.iter().enumerate().filter(move |(k, _)| r.present(*k)).map(|(_, e)| e))
            .chain(
                self.add
                    .iter()
                    .enumerate()
                    .filter(move |(k, _)| r.present(md + k))
                    .map(|(_, e)| e),
            )
    }

    /// Edge set of a realization.
    pub fn realized_graph(&self, r: &Realization) -> Graph {
        Graph::new(self.n(), self.present_edges(r).copied())
            .expect("realized edges come from a validated model")
    }

    /// Dense shift of a realization, rebuilt from its edge set.
    pub fn to_shift(&self, r: &Realization) -> ShiftOperator {
        ShiftOperator::from_graph(&self.realized_graph(r), self.kind)
    }

    /// Draws a realization and returns it as a dense shift.
    pub fn sample_shift<R: RngCore + ?Sized>(&self, rng: &mut R) -> ShiftOperator {
        let r = self.sample(rng);
        self.to_shift(&r)
    }

    /// `out = S_r x` for a node-major block of `b` signals, without forming `S_r`.
    pub fn apply(&self, r: &Realization, x: &[f64], out: &mut [f64], b: usize) {
        debug_assert_eq!(x.len(), self.n() * b);
        out.fill(0.0);
        match self.kind {
            ShiftKind::Adjacency => {
                for e in self.present_edges(r) {
                    let (lo, hi) = out.split_at_mut(e.j * b);
                    let oi = &mut lo[e.i * b..(e.i + 1) * b];
                    let oj = &mut hi[..b];
                    let xi = &x[e.i * b..(e.i + 1) * b];
                    let xj = &x[e.j * b..(e.j + 1) * b];
                    for c in 0..b {
                        oi[c] += e.w * xj[c];
                        oj[c] += e.w * xi[c];
                    }
                }
            }
            ShiftKind::Laplacian => {
                for e in self.present_edges(r) {
                    let (lo, hi) = out.split_at_mut(e.j * b);
                    let oi = &mut lo[e.i * b..(e.i + 1) * b];
                    let oj = &mut hi[..b];
                    let xi = &x[e.i * b..(e.i + 1) * b];
                    let xj = &x[e.j * b..(e.j + 1) * b];
                    for c in 0..b {
                        let d = e.w * (xi[c] - xj[c]);
                        oi[c] += d;
                        oj[c] -= d;
                    }
                }
            }
        }
    }

    /// Expected shift: drop-edge weights scaled by `1 - p`, add-edge weights by `q`.
    pub fn expected_shift(&self) -> ShiftOperator {
        let edges = self
            .fixed
            .iter()
            .copied()
            .chain(self.drop.iter().map(|e| Edge { w: e.w * (1.0 - self.p), ..*e }))
            .chain(self.add.iter().map(|e| Edge { w: e.w * self.q, ..*e }));
        let g = Graph::new(self.n(), edges).expect("edge sets are disjoint");
        ShiftOperator::from_graph(&g, self.kind)
    }

    /// Closed-form second moment `E[S^2]` of a realization.
    ///
    /// Each variable edge contributes `Var(b_e) w_e^2 A_e^2`, with `A_e^2` the two
    /// endpoint indicators for adjacency and `2 L_e` for Laplacians, so the degree and
    /// Laplacian matrices of the drop/add subgraphs are taken over squared weights.
    pub fn expected_square(&self) -> Array2<f64> {
        let sbar = self.expected_shift();
        let m = sbar.matrix();
        let mut out = m.dot(m);
        let vd = self.p * (1.0 - self.p);
        let va = self.q * (1.0 - self.q);
        let terms = self
            .drop
            .iter()
            .map(|e| (e, vd))
            .chain(self.add.iter().map(|e| (e, va)));
        for (e, v) in terms {
            let c = v * e.w * e.w;
            match self.kind {
                ShiftKind::Adjacency => {
                    out[[e.i, e.i]] += c;
                    out[[e.j, e.j]] += c;
                }
                ShiftKind::Laplacian => {
                    out[[e.i, e.i]] += 2.0 * c;
                    out[[e.j, e.j]] += 2.0 * c;
                    out[[e.i, e.j]] -= 2.0 * c;
                    out[[e.j, e.i]] -= 2.0 * c;
                }
            }
        }
        out
    }

    /// Upper bound on the spectral norm of every realization: the spectral radius of
    /// the entrywise absolute value of the operator over all nominal and add edges.
    pub fn spectral_envelope(&self) -> Result<f64> {
        let n = self.n();
        let mut m = Array2::zeros((n, n));
        for e in self.graph.edges().iter().chain(&self.add) {
            let w = e.w.abs();
            m[[e.i, e.j]] += w;
            m[[e.j, e.i]] += w;
            if self.kind == ShiftKind::Laplacian {
                m[[e.i, e.i]] += w;
                m[[e.j, e.j]] += w;
            }
        }
        spectral_radius_of(&m)
    }
}

/// A realization bound to its model, usable wherever a [`Shift`] is expected.
#[derive(Clone, Copy)]
pub struct RealizedShift<'a> {
    pub model: &'a GresModel,
    pub realization: &'a Realization,
}

impl Shift for RealizedShift<'_> {
    fn dim(&self) -> usize {
        self.model.n()
    }
    fn apply(&self, x: &[f64], out: &mut [f64], b: usize) {
        self.model.apply(self.realization, x, out, b);
    }
}
