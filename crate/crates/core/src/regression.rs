//! Least-squares polynomial regression on the scalar factor state.
//!
//! States are standardized before building a probabilists' Hermite basis,
//! which keeps the normal equations well conditioned for the low degrees
//! used by the backward solvers. Normal equations are accumulated per path
//! block and merged in block order, so fits do not depend on worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_solve, Matrix};
use crate::paths::block_ranges;

/// A fitted polynomial `Σ c_n He_n((y − center) / scale)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyFit {
    pub center: f64,
    pub scale: f64,
    pub coeffs: Vec<f64>,
}

fn hermite_basis(z: f64, out: &mut [f64]) {
    let n = out.len();
    if n == 0 {
        return;
    }
    out[0] = 1.0;
    if n > 1 {
        out[1] = z;
    }
    for k in 2..n {
        out[k] = z * out[k - 1] - (k - 1) as f64 * out[k - 2];
    }
}

impl PolyFit {
    pub fn constant(v: f64) -> Self {
        Self { center: 0.0, scale: 1.0, coeffs: vec![v] }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn eval(&self, y: f64) -> f64 {
        if self.coeffs.len() == 1 {
            return self.coeffs[0];
        }
        let z = (y - self.center) / self.scale;
        let mut basis = [0.0; 16];
        let b = &mut basis[..self.coeffs.len()];
        hermite_basis(z, b);
        b.iter().zip(&self.coeffs).map(|(x, c)| x * c).sum()
    }
}

/// Fits `targets` on `states`. A cross-section with no spread (the initial
/// node, or a deterministic factor) gets the sample mean.
pub(crate) fn fit(states: &[f64], targets: &[f64], degree: usize, node: usize) -> Result<PolyFit> {
    assert_eq!(states.len(), targets.len());
    assert!(degree < 16);
    let n = states.len() as f64;
    let center = states.iter().sum::<f64>() / n;
    let spread = (states.iter().map(|y| (y - center).powi(2)).sum::<f64>() / n).sqrt();
    if degree == 0 || !(spread > 1e-12 * (1.0 + center.abs())) {
        return Ok(PolyFit::constant(targets.iter().sum::<f64>() / n));
    }
    let m = degree + 1;
    let partial: Vec<(Vec<f64>, Vec<f64>)> = block_ranges(states.len())
        .into_par_iter()
        .map(|(start, len)| {
            let mut xtx = vec![0.0; m * m];
            let mut xty = vec![0.0; m];
            let mut basis = vec![0.0; m];
            for i in start..start + len {
                hermite_basis((states[i] - center) / spread, &mut basis);
                for a in 0..m {
                    xty[a] += basis[a] * targets[i];
                    for b in 0..=a {
                        xtx[a * m + b] += basis[a] * basis[b];
                    }
                }
            }
            (xtx, xty)
        })
        .collect();
    let mut xtx = Matrix::zeros(m);
    let mut xty = vec![0.0; m];
    for (a_part, b_part) in partial {
        for a in 0..m {
            xty[a] += b_part[a];
            for b in 0..=a {
                let v = xtx.get(a, b) + a_part[a * m + b];
                xtx.set(a, b, v);
                xtx.set(b, a, v);
            }
        }
    }
    // reject near-singular designs rather than extrapolating noise
    let max_diag = (0..m).map(|a| xtx.get(a, a)).fold(0.0, f64::max);
    let coeffs = cholesky_solve(&xtx, &xty).ok_or(Error::RankDeficient { node })?;
    let min_pivot = min_cholesky_pivot(&xtx);
    if !(min_pivot > 1e-12 * max_diag) || coeffs.iter().any(|c| !c.is_finite()) {
        return Err(Error::RankDeficient { node });
    }
    Ok(PolyFit { center, scale: spread, coeffs })
}

fn min_cholesky_pivot(a: &Matrix) -> f64 {
    let m = a.dim();
    let mut l = vec![0.0; m * m];
    let mut min = f64::INFINITY;
    for i in 0..m {
        for j in 0..=i {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l[i * m + k] * l[j * m + k];
            }
            if i == j {
                min = min.min(s);
                if s <= 0.0 {
                    return s;
                }
                l[i * m + i] = s.sqrt();
            } else {
                l[i * m + j] = s / l[j * m + j];
            }
        }
    }
    min
}
