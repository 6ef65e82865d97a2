//! Dense symmetric eigensolver and graph Fourier transforms.

use ndarray::{Array1, Array2};

use crate::error::{check_len, Result, SgnnError};

/// Sweep cap for the cyclic Jacobi iteration.
pub const MAX_SWEEPS: usize = 100;
/// Off-diagonal Frobenius norm, relative to the input's, at which a sweep loop stops.
pub const OFF_DIAGONAL_TOL: f64 = 1e-12;

/// Eigenpairs of a symmetric matrix, eigenvalues ascending, eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: Array1<f64>,
    pub eigenvectors: Array2<f64>,
}

impl SpectralDecomposition {
    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Graph Fourier transform `V^T x`.
    pub fn gft(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        check_len(n, x.len(), "gft input")?;
        let v = &self.eigenvectors;
        Ok((0..n)
            .map(|c| (0..n).map(|r| v[[r, c]] * x[r]).sum())
            .collect())
    }

    /// Inverse transform `V x_hat`.
    pub fn igft(&self, x_hat: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        check_len(n, x_hat.len(), "igft input")?;
        let v = &self.eigenvectors;
        Ok((0..n)
            .map(|r| (0..n).map(|c| v[[r, c]] * x_hat[c]).sum())
            .collect())
    }

    /// `V diag(lambda) V^T`.
    pub fn reconstruct(&self) -> Array2<f64> {
        let n = self.n();
        let v = &self.eigenvectors;
        let mut out = Array2::zeros((n, n));
        for r in 0..n {
            for c in r..n {
                let s: f64 = (0..n)
                    .map(|k| v[[r, k]] * self.eigenvalues[k] * v[[c, k]])
                    .sum();
                out[[r, c]] = s;
                out[[c, r]] = s;
            }
        }
        out
    }

    /// Largest eigenvalue magnitude.
    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0_f64, |m, l| m.max(l.abs()))
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Only the upper triangle's symmetry is assumed, not checked; callers validate
/// symmetry when constructing shift operators.
pub fn eigh(a: &Array2<f64>) -> Result<SpectralDecomposition> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(SgnnError::Dimension {
            expected: n,
            actual: a.ncols(),
            context: "eigh requires a square matrix",
        });
    }
    let mut m: Vec<f64> = a.iter().copied().collect();
    if m.iter().any(|x| !x.is_finite()) {
        return Err(SgnnError::Numerical("eigh input has non-finite entries".into()));
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let scale = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = OFF_DIAGONAL_TOL * scale;
    let mut converged = scale == 0.0;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        if off_diagonal_norm(&m, n) <= tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut m, &mut v, n, p, q);
            }
        }
    }
    if !converged {
        let off = off_diagonal_norm(&m, n);
        if off > tol {
            return Err(SgnnError::NoConvergence {
                sweeps: MAX_SWEEPS,
                off_norm: off,
            });
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| m[x * n + x].total_cmp(&m[y * n + y]).then(x.cmp(&y)));
    let eigenvalues = Array1::from_iter(order.iter().map(|&k| m[k * n + k]));
    let mut eigenvectors = Array2::zeros((n, n));
    for (c, &k) in order.iter().enumerate() {
        for r in 0..n {
            eigenvectors[[r, c]] = v[r * n + k];
        }
    }
    Ok(SpectralDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

fn off_diagonal_norm(m: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for r in 0..n {
        for c in 0..n {
            if r != c {
                s += m[r * n + c] * m[r * n + c];
            }
        }
    }
    s.sqrt()
}

/// One Jacobi rotation zeroing `m[p][q]`, accumulated into `v`.
fn rotate(m: &mut [f64], v: &mut [f64], n: usize, p: usize, q: usize) {
    let apq = m[p * n + q];
    if apq == 0.0 {
        return;
    }
    let app = m[p * n + p];
    let aqq = m[q * n + q];
    let theta = (aqq - app) / (2.0 * apq);
    let t = if theta.abs() > 1e150 {
        0.5 / theta
    } else {
        let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
        sign / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    for r in 0..n {
        let arp = m[r * n + p];
        let arq = m[r * n + q];
        m[r * n + p] = c * arp - s * arq;
        m[r * n + q] = s * arp + c * arq;
    }
    for r in 0..n {
        let apr = m[p * n + r];
        let aqr = m[q * n + r];
        m[p * n + r] = c * apr - s * aqr;
        m[q * n + r] = s * apr + c * aqr;
    }
    m[p * n + q] = 0.0;
    m[q * n + p] = 0.0;
    for r in 0..n {
        let vrp = v[r * n + p];
        let vrq = v[r * n + q];
        v[r * n + p] = c * vrp - s * vrq;
        v[r * n + q] = s * vrp + c * vrq;
    }
}

/// Max absolute entrywise difference.
pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

pub fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}
