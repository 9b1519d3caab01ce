//! Small dense square matrices.
//!
//! Portfolio dimensions are tiny (at most a handful of assets), so the
//! matrices here are row-major `Vec<f64>` with hand-rolled Cholesky solves on
//! principal submatrices. Eigenvalues are delegated to `nalgebra`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return invalid("matrix rows must form a square");
        }
        Ok(Self { n, data: rows.iter().flatten().copied().collect() })
    }

    pub fn scalar(v: f64) -> Self {
        Self { n: 1, data: vec![v] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n.max(1)).map(<[f64]>::to_vec).collect()
    }

    /// `self * x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }

    /// `self' * x`
    pub fn transpose_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|j| (0..self.n).map(|i| self.get(i, j) * x[i]).sum())
            .collect()
    }

    /// `self * self'`
    pub fn gram(&self) -> Matrix {
        let n = self.n;
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let v: f64 = (0..n).map(|k| self.get(i, k) * self.get(j, k)).sum();
                out.set(i, j, v);
                out.set(j, i, v);
            }
        }
        out
    }

    pub fn scaled(&self, alpha: f64) -> Matrix {
        Matrix { n: self.n, data: self.data.iter().map(|v| v * alpha).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Smallest eigenvalue of the symmetric part.
    pub fn min_eigenvalue_symmetric(&self) -> f64 {
        let n = self.n;
        if n == 0 {
            return f64::INFINITY;
        }
        let m = nalgebra::DMatrix::from_fn(n, n, |i, j| 0.5 * (self.get(i, j) + self.get(j, i)));
        m.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Solves `A[idx, idx] x = rhs` for a symmetric positive definite `A`,
/// writing `x` into `out[..idx.len()]`. `work` must hold `idx.len()^2` values.
///
/// Returns `false` when a pivot is not positive relative to its diagonal.
pub(crate) fn cholesky_solve_sub(
    a: &Matrix,
    idx: &[usize],
    rhs: &[f64],
    out: &mut [f64],
    work: &mut [f64],
) -> bool {
    let m = idx.len();
    let l = &mut work[..m * m];
    for i in 0..m {
        for j in 0..=i {
            let diag = a.get(idx[i], idx[j]);
            let mut s = diag;
            for k in 0..j {
                s -= l[i * m + k] * l[j * m + k];
            }
            if i == j {
                if s <= 1e-14 * diag.abs() || !s.is_finite() {
                    return false;
                }
                l[i * m + i] = s.sqrt();
            } else {
                l[i * m + j] = s / l[j * m + j];
            }
        }
    }
    // forward
    for i in 0..m {
        let mut s = rhs[i];
        for k in 0..i {
            s -= l[i * m + k] * out[k];
        }
        out[i] = s / l[i * m + i];
    }
    // backward
    for i in (0..m).rev() {
        let mut s = out[i];
        for k in i + 1..m {
            s -= l[k * m + i] * out[k];
        }
        out[i] = s / l[i * m + i];
    }
    true
}

/// Solves `A x = rhs` for symmetric positive definite `A`.
pub(crate) fn cholesky_solve(a: &Matrix, rhs: &[f64]) -> Option<Vec<f64>> {
    let n = a.dim();
    let idx: Vec<usize> = (0..n).collect();
    let mut out = vec![0.0; n];
    let mut work = vec![0.0; n * n];
    cholesky_solve_sub(a, &idx, rhs, &mut out, &mut work).then_some(out)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
