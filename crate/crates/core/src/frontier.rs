//! Lagrangian two-step scheme for the mean–variance problem
//!
//! For a target mean `K ≥ x₀e^{∫r}` the inner problem `min E(X_T − d)²` is
//! solved for every `d`, then `d` is chosen to maximize
//! `optimal_cost(d) − (d − K)²`. With `ρ = e^{−∫₀ᵀr}` and `a = P₂(0)ρ²` the
//! maximizer and the frontier are
//!
//! ```text
//! d* = (x₀P₂(0)ρ − K)/(a − 1),    Var X_T = a/(1 − a) · (K − x₀/ρ)².
//! ```

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::hamiltonian::Which;
use crate::model::{check_feasibility, discount_factor, premium_parts, MarketModel, TimeGrid};
use crate::paths::{simulate_factor_paths, Purpose};
use crate::policy::{FeedbackPolicy, PortfolioRule};
use crate::riccati::{solve_riccati, LsmcConfig, RiccatiSolution};
use crate::stats::mean_and_se;

/// Margin keeping `P₂(0)ρ²` away from 1.
pub const DEGENERACY_MARGIN: f64 = 1e-12;

fn check_target(x0: f64, k: f64, rho: f64) -> Result<()> {
    let riskless = x0 / rho;
    if !(x0.is_finite() && k.is_finite()) {
        return invalid("initial wealth and target must be finite");
    }
    if k < riskless - 1e-12 * riskless.abs().max(1.0) {
        return invalid(format!("target {k} is below the riskless terminal wealth {riskless}"));
    }
    Ok(())
}

/// `d* = (x₀P₂(0)ρ − K)/(P₂(0)ρ² − 1)`.
pub fn lagrange_multiplier(p2_0: f64, x0: f64, k: f64, rho: f64) -> Result<f64> {
    let a = p2_0 * rho * rho;
    if !(a < 1.0 - DEGENERACY_MARGIN) {
        return Err(Error::DegenerateDual(format!("P2(0)e^(-2∫r) = {a} is not below 1")));
    }
    check_target(x0, k, rho)?;
    let d = (x0 * p2_0 * rho - k) / (a - 1.0);
    let riskless = x0 / rho;
    if d < riskless - 1e-9 * riskless.abs().max(1.0) {
        return Err(Error::Numerical(format!("multiplier {d} below riskless level {riskless}")));
    }
    Ok(d)
}

/// `a/(1 − a) · (K − x₀/ρ)²` with `a = P₂(0)ρ²`.
pub fn frontier_variance(p2_0: f64, rho: f64, x0: f64, k: f64) -> Result<f64> {
    let a = p2_0 * rho * rho;
    if !(a < 1.0 - DEGENERACY_MARGIN) {
        return Err(Error::DegenerateDual(format!("P2(0)e^(-2∫r) = {a} is not below 1")));
    }
    check_target(x0, k, rho)?;
    let excess = (k - x0 / rho).max(0.0);
    Ok(a / (1.0 - a) * excess * excess)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontierSpec {
    pub x0: f64,
    pub target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub target: f64,
    pub d_star: f64,
    pub variance: f64,
    pub std_dev: f64,
}

type CacheKey = (String, u8, u64, usize, LsmcConfig);

/// Riccati solutions keyed by model fingerprint, equation, grid and solver
/// settings.
#[derive(Debug, Default)]
pub struct RiccatiCache {
    entries: Mutex<HashMap<String, Arc<RiccatiSolution>>>,
}

impl RiccatiCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn key(model: &MarketModel, which: Which, grid: &TimeGrid, cfg: &LsmcConfig) -> String {
        let k: CacheKey = (model.fingerprint(), which.index(), grid.horizon().to_bits(), grid.steps(), *cfg);
        format!("{k:?}")
    }

    pub fn get_or_solve(&self, model: &MarketModel, which: Which, grid: &TimeGrid, cfg: &LsmcConfig) -> Result<Arc<RiccatiSolution>> {
        let key = Self::key(model, which, grid, cfg);
        if let Some(s) = self.entries.lock().expect("cache lock").get(&key) {
            return Ok(Arc::clone(s));
        }
        let sol = Arc::new(solve_riccati(model, which, grid, cfg)?);
        self.entries.lock().expect("cache lock").insert(key, Arc::clone(&sol));
        Ok(sol)
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn ensure_feasible(model: &MarketModel, grid: &TimeGrid, cfg: &LsmcConfig) -> Result<()> {
    let f = check_feasibility(model, grid, cfg.paths, cfg.seed)?;
    if !f.feasible {
        return Err(Error::Infeasible(format!(
            "premium integrals {:?} do not exceed thresholds {:?}",
            f.lhs_values, f.thresholds
        )));
    }
    Ok(())
}

/// Efficient policy for target mean `K`: both Riccati solutions with
/// reference level `d*`.
pub fn efficient_policy(
    model: &MarketModel,
    grid: &TimeGrid,
    spec: FrontierSpec,
    cfg: &LsmcConfig,
    cache: &RiccatiCache,
) -> Result<FeedbackPolicy> {
    ensure_feasible(model, grid, cfg)?;
    let rho = discount_factor(model, grid, 0.0)?;
    check_target(spec.x0, spec.target, rho)?;
    let sol2 = cache.get_or_solve(model, Which::H2, grid, cfg)?;
    let sol1 = cache.get_or_solve(model, Which::H1, grid, cfg)?;
    let d = lagrange_multiplier(sol2.p0(), spec.x0, spec.target, rho)?;
    FeedbackPolicy::new(model, grid, d, sol1, sol2)
}

/// Frontier points for every target, sharing one second-equation solve.
pub fn frontier_curve(
    model: &MarketModel,
    grid: &TimeGrid,
    x0: f64,
    targets: &[f64],
    cfg: &LsmcConfig,
    cache: &RiccatiCache,
) -> Result<Vec<FrontierPoint>> {
    if targets.is_empty() {
        return invalid("need at least one target");
    }
    let rho = discount_factor(model, grid, 0.0)?;
    for &k in targets {
        check_target(x0, k, rho)?;
    }
    ensure_feasible(model, grid, cfg)?;
    let p2_0 = cache.get_or_solve(model, Which::H2, grid, cfg)?.p0();
    targets
        .par_iter()
        .map(|&k| {
            let d_star = lagrange_multiplier(p2_0, x0, k, rho)?;
            let variance = frontier_variance(p2_0, rho, x0, k)?;
            Ok(FrontierPoint { target: k, d_star, variance, std_dev: variance.sqrt() })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Long,
    Short,
}

/// `β` times a single-coordinate strategy holding `(μ̲^i)⁺` (long side) or
/// `−(μ̄^i)⁻` (short side) in asset `i`, scaled so that `E X_T = K`.
#[derive(Debug, Clone)]
pub struct FeasibleStrategy {
    pub beta: f64,
    pub coordinate: usize,
    pub side: Side,
    /// `E Σ_k e^{∫_{t_{k+1}}^T r} (premium part)² Δt`.
    pub expected_gain: f64,
    pub gain_standard_error: f64,
    model: MarketModel,
    grid: TimeGrid,
    fixed_amounts: Option<Vec<f64>>,
}

impl FeasibleStrategy {
    fn unit_amount(&self, node: usize, y: f64) -> Result<f64> {
        if let Some(v) = &self.fixed_amounts {
            return Ok(v[node]);
        }
        let snap = self.model.snapshot(self.grid.node(node), y)?;
        let (long, short) = premium_parts(&snap);
        Ok(match self.side {
            Side::Long => long[self.coordinate],
            Side::Short => -short[self.coordinate],
        })
    }
}

impl PortfolioRule for FeasibleStrategy {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn amounts(&self, node: usize, _wealth: f64, factor_state: f64, out: &mut [f64]) -> Result<bool> {
        out.fill(0.0);
        out[self.coordinate] = self.beta * self.unit_amount(node, factor_state)?;
        Ok(false)
    }

    fn check_grid(&self, grid: &TimeGrid) -> Result<()> {
        if *grid != self.grid {
            return Err(Error::GridMismatch("strategy built on another grid".into()));
        }
        Ok(())
    }
}

/// Builds a strategy attaining mean `K` whenever the feasibility condition
/// holds. The coordinate and side with the largest expected gain are used.
///
/// The gain is summed exactly as the simulation scheme accrues it: the drift
/// added over step `k` grows at the riskless rate from `t_{k+1}` to `T`.
pub fn feasible_strategy(
    model: &MarketModel,
    grid: &TimeGrid,
    x0: f64,
    target: f64,
    mc_paths: usize,
    seed: u64,
) -> Result<FeasibleStrategy> {
    let rho = discount_factor(model, grid, 0.0)?;
    check_target(x0, target, rho)?;
    let n = grid.steps();
    let d = model.dim();
    let dt = grid.dt();
    let growth: Vec<f64> = (0..n).map(|k| model.rate_integral(grid.node(k + 1), grid.horizon()).exp()).collect();

    // gains[side][i] as per-path samples
    let (samples, fixed_parts): (Vec<[Vec<f64>; 2]>, Option<Vec<(Vec<f64>, Vec<f64>)>>) = match model.factor() {
        None => {
            let parts: Vec<(Vec<f64>, Vec<f64>)> =
                (0..n).map(|k| model.snapshot(grid.node(k), 0.0).map(|s| premium_parts(&s))).collect::<Result<_>>()?;
            let mut acc = [vec![0.0; d], vec![0.0; d]];
            for (k, (long, short)) in parts.iter().enumerate() {
                for i in 0..d {
                    acc[0][i] += growth[k] * long[i] * long[i] * dt;
                    acc[1][i] += growth[k] * short[i] * short[i] * dt;
                }
            }
            (vec![acc], Some(parts))
        }
        Some(factor) => {
            if mc_paths == 0 {
                return invalid("factor-driven strategy needs Monte Carlo paths");
            }
            let fp = simulate_factor_paths(factor, grid, mc_paths, seed, Purpose::Feasibility);
            let mut out = vec![[vec![0.0; d], vec![0.0; d]]; mc_paths];
            for k in 0..n {
                for (p, acc) in out.iter_mut().enumerate() {
                    let (long, short) = premium_parts(&model.snapshot(grid.node(k), fp.state(k, p))?);
                    for i in 0..d {
                        acc[0][i] += growth[k] * long[i] * long[i] * dt;
                        acc[1][i] += growth[k] * short[i] * short[i] * dt;
                    }
                }
            }
            (out, None)
        }
    };

    let mut best: Option<(f64, f64, usize, Side)> = None;
    for (s, side) in [Side::Long, Side::Short].into_iter().enumerate() {
        for i in 0..d {
            let xs: Vec<f64> = samples.iter().map(|a| a[s][i]).collect();
            let (m, se) = mean_and_se(&xs);
            let threshold = crate::model::FEASIBILITY_TOLERANCE.max(3.0 * se);
            if m > threshold && best.is_none_or(|b| m > b.0) {
                best = Some((m, se, i, side));
            }
        }
    }
    let Some((gain, se, coordinate, side)) = best else {
        return Err(Error::Infeasible("no asset offers a positive premium on either side".into()));
    };
    let excess = (target - x0 / rho).max(0.0);
    let fixed_amounts = fixed_parts.map(|parts| {
        parts
            .iter()
            .map(|(long, short)| match side {
                Side::Long => long[coordinate],
                Side::Short => -short[coordinate],
            })
            .chain(std::iter::once(0.0))
            .collect()
    });
    Ok(FeasibleStrategy {
        beta: excess / gain,
        coordinate,
        side,
        expected_gain: gain,
        gain_standard_error: se,
        model: model.clone(),
        grid: *grid,
        fixed_amounts,
    })
}
