//! Undirected weighted graphs and dense shift operators.

use std::sync::OnceLock;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result, SgnnError};
use crate::linalg::{self, SpectralDecomposition};

/// Undirected weighted edge, stored with `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub w: f64,
}

impl Edge {
    /// Edge with endpoints reordered so that `i < j`.
    pub fn new(a: usize, b: usize, w: f64) -> Self {
        if a <= b {
            Edge { i: a, j: b, w }
        } else {
            Edge { i: b, j: a, w }
        }
    }

    pub fn key(&self) -> (usize, usize) {
        (self.i, self.j)
    }
}

/// Simple undirected graph with edges sorted by endpoint pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    n: usize,
    edges: Vec<Edge>,
}

impl Graph {
    pub fn new(n: usize, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        let mut edges: Vec<Edge> = edges
            .into_iter()
            .map(|e| Edge::new(e.i, e.j, e.w))
            .collect();
        for e in &edges {
            if e.i == e.j {
                return Err(SgnnError::InvalidGraph(format!("self-loop at node {}", e.i)));
            }
            if e.j >= n {
                return Err(SgnnError::InvalidGraph(format!(
                    "edge ({}, {}) out of range for {n} nodes",
                    e.i, e.j
                )));
            }
            if !e.w.is_finite() {
                return Err(SgnnError::InvalidGraph(format!(
                    "edge ({}, {}) has non-finite weight",
                    e.i, e.j
                )));
            }
        }
        edges.sort_by_key(Edge::key);
        if let Some(w) = edges.windows(2).find(|w| w[0].key() == w[1].key()) {
            return Err(SgnnError::InvalidGraph(format!(
                "duplicate edge ({}, {})",
                w[0].i, w[0].j
            )));
        }
        Ok(Graph { n, edges })
    }

    pub fn empty(n: usize) -> Self {
        Graph {
            n,
            edges: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn weight(&self, a: usize, b: usize) -> Option<f64> {
        let key = if a <= b { (a, b) } else { (b, a) };
        self.edges
            .binary_search_by_key(&key, Edge::key)
            .ok()
            .map(|k| self.edges[k].w)
    }

    pub fn contains(&self, a: usize, b: usize) -> bool {
        self.weight(a, b).is_some()
    }

    /// Weighted degree of every node.
    pub fn degrees(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for e in &self.edges {
            d[e.i] += e.w;
            d[e.j] += e.w;
        }
        d
    }

    /// Copy with every weight multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Graph {
        Graph {
            n: self.n,
            edges: self
                .edges
                .iter()
                .map(|e| Edge { w: e.w * factor, ..*e })
                .collect(),
        }
    }
}

/// Which matrix represents the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    Adjacency,
    Laplacian,
}

/// Linear operator applied to node-major signal blocks.
///
/// A block holds `b` signals laid out as `x[node * b + column]`.
pub trait Shift: Sync {
    fn dim(&self) -> usize;

    /// Writes `S x` into `out`, both `dim() * b` long.
    fn apply(&self, x: &[f64], out: &mut [f64], b: usize);
}

/// Dense symmetric graph shift operator.
#[derive(Debug, Clone)]
pub struct ShiftOperator {
    kind: ShiftKind,
    matrix: Array2<f64>,
    radius: OnceLock<f64>,
}

const SYMMETRY_TOL: f64 = 1e-12;
const ROW_SUM_TOL: f64 = 1e-10;

impl ShiftOperator {
    /// Wraps a matrix after checking symmetry, finiteness, and (for Laplacians) zero row sums.
    pub fn new(kind: ShiftKind, matrix: Array2<f64>) -> Result<Self> {
        let n = matrix.nrows();
        if matrix.ncols() != n {
            return Err(SgnnError::InvalidShift(format!(
                "matrix is {}x{}, not square",
                n,
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(SgnnError::InvalidShift("non-finite entry".into()));
        }
        for r in 0..n {
            for c in (r + 1)..n {
                if (matrix[[r, c]] - matrix[[c, r]]).abs() > SYMMETRY_TOL {
                    return Err(SgnnError::InvalidShift(format!(
                        "asymmetric at ({r}, {c})"
                    )));
                }
            }
        }
        if kind == ShiftKind::Laplacian {
            for r in 0..n {
                let s: f64 = matrix.row(r).sum();
                if s.abs() > ROW_SUM_TOL {
                    return Err(SgnnError::InvalidShift(format!(
                        "Laplacian row {r} sums to {s:e}"
                    )));
                }
            }
        }
        Ok(ShiftOperator {
            kind,
            matrix,
            radius: OnceLock::new(),
        })
    }

    /// Adjacency `A` or Laplacian `D - A` of a graph.
    pub fn from_graph(graph: &Graph, kind: ShiftKind) -> Self {
        let n = graph.n();
        let mut m = Array2::zeros((n, n));
        for e in graph.edges() {
            match kind {
                ShiftKind::Adjacency => {
                    m[[e.i, e.j]] += e.w;
                    m[[e.j, e.i]] += e.w;
                }
                ShiftKind::Laplacian => {
                    m[[e.i, e.j]] -= e.w;
                    m[[e.j, e.i]] -= e.w;
                    m[[e.i, e.i]] += e.w;
                    m[[e.j, e.j]] += e.w;
                }
            }
        }
        ShiftOperator {
            kind,
            matrix: m,
            radius: OnceLock::new(),
        }
    }

    pub fn kind(&self) -> ShiftKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Array2<f64> {
        self.matrix
    }

    pub fn eigendecompose(&self) -> Result<SpectralDecomposition> {
        let d = linalg::eigh(&self.matrix)?;
        let _ = self.radius.set(d.spectral_radius());
        Ok(d)
    }

    /// Largest eigenvalue magnitude, computed once and cached.
    pub fn spectral_radius(&self) -> Result<f64> {
        if let Some(&r) = self.radius.get() {
            return Ok(r);
        }
        let r = spectral_radius_of(&self.matrix)?;
        let _ = self.radius.set(r);
        Ok(r)
    }

    /// `S / rho(S)`.
    pub fn normalized(&self) -> Result<ShiftOperator> {
        let rho = self.spectral_radius()?;
        if rho == 0.0 {
            return Err(SgnnError::InvalidShift(
                "cannot normalize an operator with zero spectral radius".into(),
            ));
        }
        let out = ShiftOperator {
            kind: self.kind,
            matrix: &self.matrix / rho,
            radius: OnceLock::new(),
        };
        Ok(out)
    }

    /// Single-signal product `S x`.
    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n(), x.len(), "shift operand")?;
        let mut out = vec![0.0; x.len()];
        self.apply(x, &mut out, 1);
        Ok(out)
    }
}

impl Shift for ShiftOperator {
    fn dim(&self) -> usize {
        self.n()
    }

    fn apply(&self, x: &[f64], out: &mut [f64], b: usize) {
        let n = self.n();
        debug_assert_eq!(x.len(), n * b);
        debug_assert_eq!(out.len(), n * b);
        for r in 0..n {
            let dst = &mut out[r * b..(r + 1) * b];
            dst.fill(0.0);
            for (c, &s) in self.matrix.row(r).iter().enumerate() {
                if s != 0.0 {
                    let src = &x[c * b..(c + 1) * b];
                    for (d, v) in dst.iter_mut().zip(src) {
                        *d += s * v;
                    }
                }
            }
        }
    }
}

/// Builds the adjacency or Laplacian shift of `graph`.
pub fn build_shift(graph: &Graph, kind: ShiftKind) -> ShiftOperator {
    ShiftOperator::from_graph(graph, kind)
}

/// Scales `s` to unit spectral radius.
pub fn normalize_shift(s: &ShiftOperator) -> Result<ShiftOperator> {
    s.normalized()
}

/// Spectral radius of a symmetric matrix, skipping rows and columns that are identically zero.
pub fn spectral_radius_of(m: &Array2<f64>) -> Result<f64> {
    let n = m.nrows();
    let active: Vec<usize> = (0..n)
        .filter(|&r| m.row(r).iter().any(|&x| x != 0.0))
        .collect();
    if active.is_empty() {
        return Ok(0.0);
    }
    let k = active.len();
    let mut sub = Array2::zeros((k, k));
    for (a, &r) in active.iter().enumerate() {
        for (b, &c) in active.iter().enumerate() {
            sub[[a, b]] = m[[r, c]];
        }
    }
    Ok(linalg::eigh(&sub)?.spectral_radius())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn triangle() -> Graph {
        Graph::new(
            3,
            [Edge::new(0, 1, 1.0), Edge::new(1, 2, 1.0), Edge::new(0, 2, 1.0)],
        )
        .unwrap()
    }

    #[test]
    fn two_node_shifts() {
        let g = Graph::new(2, [Edge::new(0, 1, 1.0)]).unwrap();
        let a = build_shift(&g, ShiftKind::Adjacency);
        assert_eq!(a.matrix(), &array![[0.0, 1.0], [1.0, 0.0]]);
        let l = build_shift(&g, ShiftKind::Laplacian);
        assert_eq!(l.matrix(), &array![[1.0, -1.0], [-1.0, 1.0]]);
    }

    #[test]
    fn triangle_laplacian_spectrum() {
        let l = build_shift(&triangle(), ShiftKind::Laplacian);
        let d = l.eigendecompose().unwrap();
        let want = [0.0, 3.0, 3.0];
        for (a, b) in d.eigenvalues.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn graph_validation() {
        assert!(Graph::new(3, [Edge::new(1, 1, 1.0)]).is_err());
        assert!(Graph::new(3, [Edge::new(0, 3, 1.0)]).is_err());
        assert!(Graph::new(3, [Edge::new(0, 1, 1.0), Edge::new(1, 0, 2.0)]).is_err());
        assert!(Graph::new(3, [Edge::new(0, 1, f64::NAN)]).is_err());
        let g = Graph::new(3, [Edge::new(2, 0, 0.5)]).unwrap();
        assert_eq!(g.edges()[0].key(), (0, 2));
        assert_eq!(g.weight(2, 0), Some(0.5));
    }

    #[test]
    fn empty_graph_gives_zero_matrix() {
        let s = build_shift(&Graph::empty(4), ShiftKind::Laplacian);
        assert!(s.matrix().iter().all(|&x| x == 0.0));
        assert!(s.normalized().is_err());
    }

    #[test]
    fn operator_validation() {
        assert!(ShiftOperator::new(ShiftKind::Adjacency, array![[0.0, 1.0], [0.5, 0.0]]).is_err());
        assert!(ShiftOperator::new(ShiftKind::Laplacian, array![[1.0, -0.5], [-0.5, 1.0]]).is_err());
        assert!(ShiftOperator::new(ShiftKind::Adjacency, array![[0.0, 1.0], [1.0, 0.0]]).is_ok());
    }

    #[test]
    fn normalization() {
        let a = build_shift(&triangle(), ShiftKind::Laplacian);
        assert!((a.spectral_radius().unwrap() - 3.0).abs() < 1e-12);
        let n = a.normalized().unwrap();
        let d = n.eigendecompose().unwrap();
        assert!(d.eigenvalues.iter().all(|l| l.abs() <= 1.0 + 1e-12));
        assert!((n.spectral_radius().unwrap() - 1.0).abs() < 1e-8);
        let again = n.normalized().unwrap();
        assert!(linalg::max_abs_diff(again.matrix(), n.matrix()) < 1e-12);
    }

    #[test]
    fn block_apply_matches_columnwise() {
        let s = build_shift(&triangle(), ShiftKind::Adjacency);
        let x = [1.0, 10.0, 2.0, 20.0, 3.0, 30.0];
        let mut out = [0.0; 6];
        s.apply(&x, &mut out, 2);
        assert_eq!(out, [5.0, 50.0, 4.0, 40.0, 3.0, 30.0]);
    }
}
