//! Optimal feedback policy and forward simulation of the wealth equation
//!
//! ```text
//! dX = (rX + (π⁺)'σθ̲ − (π⁻)'σθ̄) dt + π'σ dW.
//! ```
//!
//! With `Y = X − d e^{−∫_t^T r}` the optimal amounts are
//! `π* = π₁ Y⁺ + π₂ Y⁻`, where `πᵢ` minimizes `Hᵢ(Pᵢ, Λᵢ)`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::hamiltonian::{Hamiltonian, Which};
use crate::model::{discount_factor, MarketModel, MarketSnapshot, TimeGrid};
use crate::paths::{block_ranges, block_rng, normal, Purpose};
use crate::riccati::{evaluate_solution, RiccatiSolution};
use crate::stats::{mean_and_se, moments, Moments};

/// A rule mapping `(node, wealth, factor state)` to dollar amounts held in
/// the risky assets over the following step.
pub trait PortfolioRule: Sync {
    fn dim(&self) -> usize;

    /// Writes the amounts into `out` and reports whether any solver
    /// evaluation extrapolated beyond its fitted range.
    fn amounts(&self, node: usize, wealth: f64, factor_state: f64, out: &mut [f64]) -> Result<bool>;

    /// `d` such that `Y = X − d e^{−∫_t^T r}` is the tracked deviation.
    fn reference_level(&self) -> Option<f64> {
        None
    }

    fn check_grid(&self, _grid: &TimeGrid) -> Result<()> {
        Ok(())
    }
}

/// Unit-deviation portfolios `(π₁, π₂)` at each node, precomputed for
/// deterministic coefficients.
#[derive(Debug, Clone)]
struct NodeGains {
    long_deviation: Vec<Vec<f64>>,
    short_deviation: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct FeedbackPolicy {
    pub d_value: f64,
    pub sol1: Arc<RiccatiSolution>,
    pub sol2: Arc<RiccatiSolution>,
    model: MarketModel,
    grid: TimeGrid,
    /// `e^{−∫_{t_k}^T r}` per node.
    discount: Vec<f64>,
    gains: Option<NodeGains>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Portfolio {
    pub amounts: Vec<f64>,
    /// `X − d e^{−∫_t^T r}`.
    pub deviation: f64,
    pub extrapolated: bool,
}

fn argmin_at(which: Which, snap: &MarketSnapshot, p: f64, lambda: &[f64]) -> Result<Vec<f64>> {
    Ok(Hamiltonian::from_snapshot(snap)?.eval(which, p, lambda)?.argmin)
}

impl FeedbackPolicy {
    pub fn new(
        model: &MarketModel,
        grid: &TimeGrid,
        d_value: f64,
        sol1: Arc<RiccatiSolution>,
        sol2: Arc<RiccatiSolution>,
    ) -> Result<Self> {
        if sol1.which != Which::H1 || sol2.which != Which::H2 {
            return invalid("policy needs the first and second Riccati solutions in order");
        }
        if !d_value.is_finite() {
            return invalid("reference level must be finite");
        }
        let fp = model.fingerprint();
        for s in [&sol1, &sol2] {
            if s.grid != *grid {
                return Err(Error::GridMismatch("Riccati solution built on another grid".into()));
            }
            if s.model_fingerprint != fp {
                return invalid("Riccati solution built for another model");
            }
        }
        let discount = grid.nodes().map(|t| discount_factor(model, grid, t)).collect::<Result<Vec<_>>>()?;
        let gains = if model.is_factor_driven() {
            None
        } else {
            let mut long_deviation = Vec::with_capacity(grid.steps() + 1);
            let mut short_deviation = Vec::with_capacity(grid.steps() + 1);
            let zeros = vec![0.0; model.dim()];
            for (k, t) in grid.nodes().enumerate() {
                let snap = model.snapshot(t, 0.0)?;
                long_deviation.push(argmin_at(Which::H1, &snap, sol1.at_node(k, 0.0).p, &zeros)?);
                short_deviation.push(argmin_at(Which::H2, &snap, sol2.at_node(k, 0.0).p, &zeros)?);
            }
            Some(NodeGains { long_deviation, short_deviation })
        };
        Ok(Self { d_value, sol1, sol2, model: model.clone(), grid: *grid, discount, gains })
    }

    pub fn model(&self) -> &MarketModel {
        &self.model
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn discount_at_node(&self, k: usize) -> f64 {
        self.discount[k]
    }
}

impl PortfolioRule for FeedbackPolicy {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn amounts(&self, node: usize, wealth: f64, factor_state: f64, out: &mut [f64]) -> Result<bool> {
        let y = wealth - self.d_value * self.discount[node];
        if y == 0.0 {
            out.fill(0.0);
            return Ok(false);
        }
        let (which, sol) = if y > 0.0 { (Which::H1, &self.sol1) } else { (Which::H2, &self.sol2) };
        let scale = y.abs();
        if let Some(g) = &self.gains {
            let unit = if y > 0.0 { &g.long_deviation[node] } else { &g.short_deviation[node] };
            for (o, u) in out.iter_mut().zip(unit) {
                *o = u * scale;
            }
            return Ok(false);
        }
        let point = sol.at_node(node, factor_state);
        let snap = self.model.snapshot(self.grid.node(node), factor_state)?;
        let unit = argmin_at(which, &snap, point.p, &point.lambda)?;
        for (o, u) in out.iter_mut().zip(&unit) {
            *o = u * scale;
        }
        Ok(point.extrapolated)
    }

    fn reference_level(&self) -> Option<f64> {
        Some(self.d_value)
    }

    fn check_grid(&self, grid: &TimeGrid) -> Result<()> {
        if *grid != self.grid {
            return Err(Error::GridMismatch(format!(
                "policy grid {:?} differs from simulation grid {:?}",
                self.grid, grid
            )));
        }
        Ok(())
    }
}

/// `π₁(t) Y⁺ + π₂(t) Y⁻` at an arbitrary time in `[0, T]`.
pub fn optimal_portfolio(policy: &FeedbackPolicy, t: f64, wealth: f64, factor_state: f64) -> Result<Portfolio> {
    let discount = discount_factor(&policy.model, &policy.grid, t)?;
    let deviation = wealth - policy.d_value * discount;
    let d = policy.model.dim();
    if deviation == 0.0 {
        return Ok(Portfolio { amounts: vec![0.0; d], deviation, extrapolated: false });
    }
    let (which, sol) = if deviation > 0.0 { (Which::H1, &policy.sol1) } else { (Which::H2, &policy.sol2) };
    let point = evaluate_solution(sol, t, factor_state)?;
    let snap = policy.model.snapshot(t.clamp(0.0, policy.grid.horizon()), factor_state)?;
    let unit = argmin_at(which, &snap, point.p, &point.lambda)?;
    Ok(Portfolio {
        amounts: unit.iter().map(|u| u * deviation.abs()).collect(),
        deviation,
        extrapolated: point.extrapolated,
    })
}

/// `P₁(0)(x₀ − d ρ)²` when `x₀ ≥ dρ`, otherwise `P₂(0)(x₀ − dρ)²`.
pub fn optimal_cost(p1_0: f64, p2_0: f64, x0: f64, d: f64, discount0: f64) -> Result<f64> {
    if !(p1_0 > 0.0 && p2_0 > 0.0) {
        return invalid("Riccati values must be positive");
    }
    let y = x0 - d * discount0;
    Ok(if y >= 0.0 { p1_0 } else { p2_0 } * y * y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub paths: usize,
    pub seed: u64,
    /// Keep per-path terminal wealth in the report.
    pub keep_terminal: bool,
}

impl SimulationConfig {
    pub fn new(paths: usize, seed: u64) -> Self {
        Self { paths, seed, keep_terminal: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub paths: usize,
    pub steps: usize,
    pub dt: f64,
    pub seed: u64,
    pub x0: f64,
    pub terminal: Moments,
    pub reference_level: Option<f64>,
    /// `E(X_T − d)²` and its standard error.
    pub squared_deviation: Option<[f64; 2]>,
    /// Largest `Y⁺` and `Y⁻` over all paths and nodes.
    pub max_y_plus: Option<f64>,
    pub max_y_minus: Option<f64>,
    pub extrapolated_evaluations: usize,
    #[serde(skip)]
    pub terminal_samples: Option<Vec<f64>>,
}

/// Per-path scalar accumulated alongside the wealth, fed the factor state
/// and the Brownian increment of each step.
pub(crate) type Companion<'a> = &'a (dyn Fn(usize, f64, &[f64]) -> f64 + Sync);

pub(crate) struct PathRun {
    pub terminal: Vec<f64>,
    pub companion: Vec<f64>,
    pub max_y_plus: f64,
    pub max_y_minus: f64,
    pub extrapolated: usize,
}

/// Coefficients `(σ, μ̲, μ̄)` used over one step.
struct StepCoefficients {
    sigma: Vec<f64>,
    mu_lower: Vec<f64>,
    mu_upper: Vec<f64>,
}

impl StepCoefficients {
    fn from_snapshot(s: &MarketSnapshot) -> Self {
        let d = s.dim();
        let mut sigma = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                sigma[i * d + j] = s.sigma.get(i, j);
            }
        }
        Self { sigma, mu_lower: s.mu_lower(), mu_upper: s.mu_upper() }
    }
}

/// Euler scheme with the riskless part integrated exactly:
/// `X_{k+1} = X_k e^{∫r} + ((π⁺)'μ̲ − (π⁻)'μ̄)Δt + π'σΔW`.
pub(crate) fn run_paths(
    model: &MarketModel,
    grid: &TimeGrid,
    rule: &dyn PortfolioRule,
    x0: f64,
    paths: usize,
    seed: u64,
    companion: Option<Companion<'_>>,
) -> Result<PathRun> {
    if rule.dim() != model.dim() {
        return invalid("policy dimension differs from the model");
    }
    rule.check_grid(grid)?;
    let d = model.dim();
    let n = grid.steps();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let growth: Vec<f64> = (0..n).map(|k| model.rate_integral(grid.node(k), grid.node(k + 1)).exp()).collect();
    let discount = grid.nodes().map(|t| discount_factor(model, grid, t)).collect::<Result<Vec<_>>>()?;
    let fixed: Option<Vec<StepCoefficients>> = if model.is_factor_driven() {
        None
    } else {
        Some((0..n).map(|k| model.snapshot(grid.node(k), 0.0).map(|s| StepCoefficients::from_snapshot(&s))).collect::<Result<_>>()?)
    };
    let factor = model.factor();
    let reference = rule.reference_level();

    struct BlockOut {
        terminal: Vec<f64>,
        companion: Vec<f64>,
        max_plus: f64,
        max_minus: f64,
        extrapolated: usize,
    }

    let blocks: Vec<Result<BlockOut>> = block_ranges(paths)
        .into_par_iter()
        .enumerate()
        .map(|(b, (start, len))| {
            let mut rng = block_rng(seed, Purpose::Simulation, b);
            let mut out = BlockOut {
                terminal: Vec::with_capacity(len),
                companion: Vec::with_capacity(if companion.is_some() { len } else { 0 }),
                max_plus: 0.0,
                max_minus: 0.0,
                extrapolated: 0,
            };
            let mut pi = vec![0.0; d];
            let mut dw = vec![0.0; d];
            let track = |k: usize, x: f64, out: &mut BlockOut| {
                if let Some(dv) = reference {
                    let y = x - dv * discount[k];
                    out.max_plus = out.max_plus.max(y);
                    out.max_minus = out.max_minus.max(-y);
                }
            };
            for path in start..start + len {
                let mut x = x0;
                let mut y = factor.map_or(0.0, |f| f.initial);
                let mut acc = 0.0;
                track(0, x, &mut out);
                for k in 0..n {
                    for w in dw.iter_mut() {
                        *w = sqrt_dt * normal(&mut rng);
                    }
                    if rule.amounts(k, x, y, &mut pi)? {
                        out.extrapolated += 1;
                    }
                    let owned;
                    let c = match &fixed {
                        Some(v) => &v[k],
                        None => {
                            owned = StepCoefficients::from_snapshot(&model.snapshot(grid.node(k), y)?);
                            &owned
                        }
                    };
                    let mut drift = 0.0;
                    let mut noise = 0.0;
                    for i in 0..d {
                        let a = pi[i];
                        drift += if a >= 0.0 { a * c.mu_lower[i] } else { a * c.mu_upper[i] };
                        let sdw: f64 = (0..d).map(|j| c.sigma[i * d + j] * dw[j]).sum();
                        noise += a * sdw;
                    }
                    if let Some(f) = companion {
                        acc += f(k, y, &dw);
                    }
                    x = x * growth[k] + drift * dt + noise;
                    if !x.is_finite() {
                        return Err(Error::Explosion { path, node: k + 1 });
                    }
                    if let Some(f) = factor {
                        y = f.step(y, dt, dw[f.brownian_index]);
                    }
                    track(k + 1, x, &mut out);
                }
                out.terminal.push(x);
                if companion.is_some() {
                    out.companion.push(acc);
                }
            }
            Ok(out)
        })
        .collect();

    let mut run = PathRun {
        terminal: Vec::with_capacity(paths),
        companion: Vec::new(),
        max_y_plus: 0.0,
        max_y_minus: 0.0,
        extrapolated: 0,
    };
    for b in blocks {
        let b = b?;
        run.terminal.extend(b.terminal);
        run.companion.extend(b.companion);
        run.max_y_plus = run.max_y_plus.max(b.max_plus);
        run.max_y_minus = run.max_y_minus.max(b.max_minus);
        run.extrapolated += b.extrapolated;
    }
    Ok(run)
}

/// Simulates the controlled wealth on `paths` independent paths.
///
/// Results depend only on `(seed, paths)`, not on the number of threads.
pub fn simulate_wealth(
    model: &MarketModel,
    rule: &dyn PortfolioRule,
    x0: f64,
    grid: &TimeGrid,
    cfg: &SimulationConfig,
) -> Result<SimulationReport> {
    if cfg.paths == 0 {
        return invalid("need at least one path");
    }
    if !x0.is_finite() {
        return invalid("initial wealth must be finite");
    }
    let run = run_paths(model, grid, rule, x0, cfg.paths, cfg.seed, None)?;
    let reference = rule.reference_level();
    let squared_deviation = reference.map(|dv| {
        let sq: Vec<f64> = run.terminal.iter().map(|x| (x - dv).powi(2)).collect();
        let (m, se) = mean_and_se(&sq);
        [m, se]
    });
    Ok(SimulationReport {
        paths: cfg.paths,
        steps: grid.steps(),
        dt: grid.dt(),
        seed: cfg.seed,
        x0,
        terminal: moments(&run.terminal),
        reference_level: reference,
        squared_deviation,
        max_y_plus: reference.map(|_| run.max_y_plus),
        max_y_minus: reference.map(|_| run.max_y_minus),
        extrapolated_evaluations: run.extrapolated,
        terminal_samples: cfg.keep_terminal.then_some(run.terminal),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::riccati::solve_riccati_ode;

    fn policy(model: &MarketModel, grid: &TimeGrid, d: f64) -> FeedbackPolicy {
        let s1 = Arc::new(solve_riccati_ode(model, Which::H1, grid).unwrap());
        let s2 = Arc::new(solve_riccati_ode(model, Which::H2, grid).unwrap());
        FeedbackPolicy::new(model, grid, d, s1, s2).unwrap()
    }

    #[test]
    fn zero_deviation_holds_nothing() {
        let m = MarketModel::constant_1d(0.03, 0.2, 0.2, 0.4).unwrap();
        let g = TimeGrid::new(1.0, 10).unwrap();
        let p = policy(&m, &g, 2.0);
        let x = 2.0 * (-0.03f64 * 0.5).exp();
        let out = optimal_portfolio(&p, 0.5, x, 0.0).unwrap();
        assert!(out.amounts[0].abs() < 1e-12);
    }

    #[test]
    fn model_a_initial_amount() {
        let m = MarketModel::constant_1d(0.03, 0.2, 0.2, 0.4).unwrap();
        let g = TimeGrid::new(1.0, 100).unwrap();
        let d = 2.804_07;
        let p = policy(&m, &g, d);
        let out = optimal_portfolio(&p, 0.0, 1.0, 0.0).unwrap();
        let want = d * (-0.03f64).exp() - 1.0;
        assert!((out.amounts[0] - want).abs() < 1e-12);
        let mut buf = [0.0];
        p.amounts(0, 1.0, 0.0, &mut buf).unwrap();
        assert!((buf[0] - want).abs() < 1e-12);
    }

    #[test]
    fn cost_branches() {
        assert_eq!(optimal_cost(0.9, 1.1, 2.0, 2.0, 1.0).unwrap(), 0.0);
        assert!((optimal_cost(0.9, 1.1, 1.0, 0.0, 0.97).unwrap() - 0.9).abs() < 1e-15);
        assert!((optimal_cost(0.9, 1.1, 1.0, 2.0, 1.0).unwrap() - 1.1).abs() < 1e-15);
        assert!(optimal_cost(0.0, 1.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn zero_premium_grows_at_the_riskless_rate() {
        let m = MarketModel::constant_1d(0.03, 0.2, 0.0, 0.0).unwrap();
        let g = TimeGrid::new(1.0, 20).unwrap();
        let p = policy(&m, &g, 5.0);
        let rep = simulate_wealth(&m, &p, 1.0, &g, &SimulationConfig::new(100, 3)).unwrap();
        assert!((rep.terminal.mean - 0.03f64.exp()).abs() < 1e-12);
        assert!(rep.terminal.variance < 1e-24);
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let m = MarketModel::constant_1d(0.03, 0.2, 0.2, 0.4).unwrap();
        let g = TimeGrid::new(1.0, 20).unwrap();
        let p = policy(&m, &g, 2.0);
        let other = TimeGrid::new(1.0, 10).unwrap();
        let err = simulate_wealth(&m, &p, 1.0, &other, &SimulationConfig::new(10, 0)).unwrap_err();
        assert!(matches!(err, Error::GridMismatch(_)));
    }

    #[test]
    fn simulation_is_reproducible() {
        let m = MarketModel::constant_1d(0.03, 0.2, 0.2, 0.4).unwrap();
        let g = TimeGrid::new(1.0, 20).unwrap();
        let p = policy(&m, &g, 2.8);
        let cfg = SimulationConfig { paths: 3000, seed: 9, keep_terminal: true };
        let a = simulate_wealth(&m, &p, 1.0, &g, &cfg).unwrap();
        let b = simulate_wealth(&m, &p, 1.0, &g, &cfg).unwrap();
        assert_eq!(a.terminal_samples, b.terminal_samples);
        assert_eq!(a.max_y_plus, Some(0.0));
    }
}
