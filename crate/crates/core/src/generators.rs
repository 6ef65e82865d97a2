//! Random and data-driven graph constructors.

use ndarray::Array2;
use rand::Rng;

use crate::error::{Result, SgnnError};
use crate::graph::{Edge, Graph};

/// Community of every node: sizes `n / c`, the first `n % c` communities one larger.
pub fn communities(n: usize, c: usize) -> Vec<usize> {
    assert!(c >= 1, "need at least one community");
    let base = n / c;
    let extra = n % c;
    let mut out = Vec::with_capacity(n);
    for k in 0..c {
        let size = base + usize::from(k < extra);
        out.extend(std::iter::repeat_n(k, size));
    }
    out
}

/// Stochastic block model with unit weights.
pub fn sbm<R: Rng + ?Sized>(
    n: usize,
    c: usize,
    p_intra: f64,
    p_inter: f64,
    rng: &mut R,
) -> Result<Graph> {
    if c == 0 || c > n.max(1) {
        return Err(SgnnError::InvalidGraph(format!(
            "cannot split {n} nodes into {c} communities"
        )));
    }
    for (name, v) in [("p_intra", p_intra), ("p_inter", p_inter)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(SgnnError::InvalidGraph(format!("{name} = {v} outside [0, 1]")));
        }
    }
    let comm = communities(n, c);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let prob = if comm[i] == comm[j] { p_intra } else { p_inter };
            // One draw per pair keeps the stream layout independent of the probabilities.
            let u: f64 = rng.random();
            if u < prob {
                edges.push(Edge { i, j, w: 1.0 });
            }
        }
    }
    Graph::new(n, edges)
}

/// Pearson correlation of two item columns over users who rated both (`0` = unrated).
/// `None` when fewer than two users co-rated.
pub fn pearson_pair(a: &[f64], b: &[f64]) -> Option<f64> {
    let mut k = 0usize;
    let (mut sa, mut sb) = (0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        if x != 0.0 && y != 0.0 {
            k += 1;
            sa += x;
            sb += y;
        }
    }
    if k < 2 {
        return None;
    }
    let (ma, mb) = (sa / k as f64, sb / k as f64);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        if x != 0.0 && y != 0.0 {
            let (dx, dy) = (x - ma, y - mb);
            sxy += dx * dy;
            sxx += dx * dx;
            syy += dy * dy;
        }
    }
    if sxx == 0.0 || syy == 0.0 {
        return Some(0.0);
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// All item pairs with a nonzero correlation, sorted by descending signed value,
/// ties by `(i, j)`. `ratings` is users x items with `0` for missing.
pub fn ranked_correlations(ratings: &Array2<f64>) -> Vec<Edge> {
    let items = ratings.ncols();
    let cols: Vec<Vec<f64>> = (0..items).map(|j| ratings.column(j).to_vec()).collect();
    // Sparse per-item user lists cut the pairwise work to co-rating candidates.
    let raters: Vec<Vec<usize>> = cols
        .iter()
        .map(|c| c.iter().enumerate().filter(|(_, &r)| r != 0.0).map(|(u, _)| u).collect())
        .collect();
    let mut out = Vec::new();
    for i in 0..items {
        if raters[i].len() < 2 {
            continue;
        }
        let ci = &cols[i];
        for j in (i + 1)..items {
            if raters[j].len() < 2 {
                continue;
            }
            let cj = &cols[j];
            let (mut k, mut sa, mut sb) = (0usize, 0.0, 0.0);
            for &u in &raters[j] {
                if ci[u] != 0.0 {
                    k += 1;
                    sa += ci[u];
                    sb += cj[u];
                }
            }
            if k < 2 {
                continue;
            }
            let (ma, mb) = (sa / k as f64, sb / k as f64);
            let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
            for &u in &raters[j] {
                if ci[u] != 0.0 {
                    let (dx, dy) = (ci[u] - ma, cj[u] - mb);
                    sxy += dx * dy;
                    sxx += dx * dx;
                    syy += dy * dy;
                }
            }
            if sxx == 0.0 || syy == 0.0 {
                continue;
            }
            let r = sxy / (sxx * syy).sqrt();
            if r != 0.0 {
                out.push(Edge { i, j, w: r });
            }
        }
    }
    out.sort_by(|a, b| b.w.total_cmp(&a.w).then(a.key().cmp(&b.key())));
    out
}

/// Item graph keeping the `keep_top` most correlated pairs overall, weighted by correlation.
pub fn pearson_graph(ratings: &Array2<f64>, keep_top: usize) -> Graph {
    let ranked = ranked_correlations(ratings);
    Graph::new(ratings.ncols(), ranked.into_iter().take(keep_top))
        .expect("pairs are distinct and in range")
}
