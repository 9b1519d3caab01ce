//! Reproducible block-parallel random streams.
//!
//! Paths are split into fixed-size blocks. Block `b` draws from a ChaCha8
//! generator keyed by `(seed, purpose)` on stream `b`, so the draws of a path
//! never depend on how many workers run or in which order blocks finish.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::model::{FactorProcess, TimeGrid};

pub(crate) const BLOCK_SIZE: usize = 1024;

/// Separates the random streams of independent tasks sharing one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Purpose {
    Regression = 1,
    Simulation = 2,
    Feasibility = 3,
}

pub(crate) fn block_rng(seed: u64, purpose: Purpose, block: usize) -> ChaCha8Rng {
    let key = seed ^ (purpose as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(block as u64);
    rng
}

/// `(first path, path count)` for every block.
pub(crate) fn block_ranges(paths: usize) -> Vec<(usize, usize)> {
    (0..paths.div_ceil(BLOCK_SIZE))
        .map(|b| {
            let start = b * BLOCK_SIZE;
            (start, BLOCK_SIZE.min(paths - start))
        })
        .collect()
}

#[inline]
pub(crate) fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Factor states and the driving Brownian increments, stored node-major.
#[derive(Debug, Clone)]
pub(crate) struct FactorPaths {
    pub paths: usize,
    pub steps: usize,
    states: Vec<f64>,
    increments: Vec<f64>,
}

impl FactorPaths {
    #[inline]
    pub fn state(&self, node: usize, path: usize) -> f64 {
        self.states[node * self.paths + path]
    }

    pub fn states_at(&self, node: usize) -> &[f64] {
        &self.states[node * self.paths..(node + 1) * self.paths]
    }

    /// Increment of the factor's Brownian component over `[t_k, t_{k+1}]`.
    pub fn increments_at(&self, step: usize) -> &[f64] {
        &self.increments[step * self.paths..(step + 1) * self.paths]
    }
}

pub(crate) fn simulate_factor_paths(
    factor: &FactorProcess,
    grid: &TimeGrid,
    paths: usize,
    seed: u64,
    purpose: Purpose,
) -> FactorPaths {
    let steps = grid.steps();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let blocks: Vec<(Vec<f64>, Vec<f64>)> = block_ranges(paths)
        .into_par_iter()
        .enumerate()
        .map(|(b, (_, len))| {
            let mut rng = block_rng(seed, purpose, b);
            let mut ys = vec![0.0; len * (steps + 1)];
            let mut dws = vec![0.0; len * steps];
            for p in 0..len {
                let mut y = factor.initial;
                ys[p * (steps + 1)] = y;
                for k in 0..steps {
                    let dw = sqrt_dt * normal(&mut rng);
                    dws[p * steps + k] = dw;
                    y = factor.step(y, dt, dw);
                    ys[p * (steps + 1) + k + 1] = y;
                }
            }
            (ys, dws)
        })
        .collect();

    let mut states = vec![0.0; paths * (steps + 1)];
    let mut increments = vec![0.0; paths * steps];
    for ((start, len), (ys, dws)) in block_ranges(paths).into_iter().zip(blocks) {
        for p in 0..len {
            for k in 0..=steps {
                states[k * paths + start + p] = ys[p * (steps + 1) + k];
            }
            for k in 0..steps {
                increments[k * paths + start + p] = dws[p * steps + k];
            }
        }
    }
    FactorPaths { paths, steps, states, increments }
}
