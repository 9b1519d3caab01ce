//! Backward solvers for the two Riccati equations
//!
//! ```text
//! dP_i = −[2 r P_i + H_i(P_i, Λ_i)] dt + Λ_i' dW,   P_i(T) = 1,   P_i > 0.
//! ```
//!
//! With deterministic coefficients the martingale part vanishes (`Λ ≡ 0`) and
//! the equation is a scalar terminal-value ODE, integrated backward with
//! classical RK4. With factor-driven coefficients `P` and `Λ` become functions
//! of the factor state and are estimated by least-squares Monte Carlo.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::hamiltonian::{Hamiltonian, Orthant, Which};
use crate::linalg::{cholesky_solve, dot};
use crate::model::{MarketModel, TimeGrid};
use crate::paths::{block_ranges, simulate_factor_paths, FactorPaths, Purpose};
use crate::regression::{fit, PolyFit};

/// Relative slack of the clamping band `[c₁(1−τ), e^{2∫r}(1+τ)]`.
pub const CLAMP_TAU: f64 = 0.05;
/// Largest tolerated share of clamped regression values.
pub const MAX_CLAMP_FRACTION: f64 = 0.05;
/// Relative slack when certifying ODE values against their analytic bounds.
const BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LsmcConfig {
    pub paths: usize,
    pub basis_degree: usize,
    pub seed: u64,
}

impl Default for LsmcConfig {
    fn default() -> Self {
        Self { paths: 20_000, basis_degree: 3, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSolution {
    pub brownian_index: usize,
    /// `P_k(y)` per node.
    pub p_fits: Vec<PolyFit>,
    /// Component `brownian_index` of `Λ_k(y)`; the others vanish because the
    /// factor is independent of the remaining Brownian components.
    pub lambda_fits: Vec<PolyFit>,
    /// Range of simulated factor states per node.
    pub hulls: Vec<[f64; 2]>,
    /// 1% and 99% quantiles of the simulated factor states per node.
    pub supports: Vec<[f64; 2]>,
    pub paths: usize,
    pub basis_degree: usize,
    pub seed: u64,
    pub clamp_events: usize,
    pub clamp_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Representation {
    Deterministic { values: Vec<f64> },
    Regression(RegressionSolution),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiccatiSolution {
    pub which: Which,
    pub grid: TimeGrid,
    pub dim: usize,
    pub initial_state: f64,
    pub representation: Representation,
    /// `c₁ = e^{∫(2r − c)}`.
    pub floor: f64,
    /// Certified `m ≤ P ≤ M` on the representation.
    pub lower_bound: f64,
    pub upper_bound: f64,
    /// `e^{2∫_{t_k}^T r}` per node.
    pub upper_envelope: Vec<f64>,
    pub model_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiccatiPoint {
    pub p: f64,
    pub lambda: Vec<f64>,
    /// The factor state lies outside the simulated range at that node.
    pub extrapolated: bool,
}

impl RiccatiSolution {
    pub fn is_deterministic(&self) -> bool {
        matches!(self.representation, Representation::Deterministic { .. })
    }

    /// `P` at `t = 0` and the model's initial factor state.
    pub fn p0(&self) -> f64 {
        match &self.representation {
            Representation::Deterministic { values } => values[0],
            Representation::Regression(r) => self.clamp(0, r.p_fits[0].eval(self.initial_state)),
        }
    }

    fn clamp(&self, node: usize, p: f64) -> f64 {
        p.clamp(self.floor * (1.0 - CLAMP_TAU), self.upper_envelope[node] * (1.0 + CLAMP_TAU))
    }

    /// `(P, Λ)` at grid node `k` and factor state `y`.
    pub fn at_node(&self, k: usize, y: f64) -> RiccatiPoint {
        match &self.representation {
            Representation::Deterministic { values } => {
                RiccatiPoint { p: values[k], lambda: vec![0.0; self.dim], extrapolated: false }
            }
            Representation::Regression(r) => {
                let mut lambda = vec![0.0; self.dim];
                lambda[r.brownian_index] = r.lambda_fits[k].eval(y);
                let [lo, hi] = r.hulls[k];
                let slack = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
                RiccatiPoint {
                    p: self.clamp(k, r.p_fits[k].eval(y)),
                    lambda,
                    extrapolated: y < lo - slack || y > hi + slack,
                }
            }
        }
    }
}

/// `e^{2∫_{t_k}^T r}` for every node.
fn upper_envelope(model: &MarketModel, grid: &TimeGrid) -> Vec<f64> {
    grid.nodes().map(|t| (2.0 * model.rate_integral(t, grid.horizon())).exp()).collect()
}

/// Lower comparison bound `c₁ = e^{∫₀ᵀ(2r − c)}` where `c ≥ 0` dominates both
/// `2r` and every `μ^I'(σσ')⁻¹μ^I`.
///
/// The supremum over the premia is taken on grid nodes, interval midpoints
/// and the supplied factor states (the factor's initial state when empty).
pub fn positivity_floor(model: &MarketModel, grid: &TimeGrid, probe_states: &[f64]) -> Result<f64> {
    let rate_sup = sup_rate(model, grid);
    let states: Vec<f64> = if probe_states.is_empty() { vec![model.initial_state()] } else { probe_states.to_vec() };
    let mut c = (2.0 * rate_sup).max(0.0);
    let times = grid.nodes().chain((0..grid.steps()).map(|k| grid.midpoint(k)));
    for t in times {
        for &y in &states {
            let snap = model.snapshot(t, y)?;
            let cov = snap.sigma.gram();
            let (lo, hi) = (snap.mu_lower(), snap.mu_upper());
            let d = snap.dim();
            for bits in 0..(1u32 << d) {
                let o = Orthant(bits);
                let mu: Vec<f64> = (0..d).map(|i| if o.is_long(i) { lo[i] } else { hi[i] }).collect();
                let w = cholesky_solve(&cov, &mu)
                    .ok_or_else(|| Error::Numerical("σσ' is not positive definite".into()))?;
                let q = dot(&mu, &w);
                if !q.is_finite() {
                    return Err(Error::MalformedCoefficient(format!("unbounded premium at t={t}, y={y}")));
                }
                c = c.max(q);
            }
        }
    }
    Ok((2.0 * model.rate_integral(0.0, grid.horizon()) - c * grid.horizon()).exp())
}

fn sup_rate(model: &MarketModel, grid: &TimeGrid) -> f64 {
    (0..grid.steps())
        .map(|k| model.rate().eval(grid.midpoint(k), 0.0))
        .chain(grid.nodes().map(|t| model.rate().eval(t, 0.0)))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Deterministic coefficients: RK4 backward from `P(T) = 1` on
/// `dP/dt = −[2rP + H(P, 0)]`, coefficients frozen at each interval midpoint.
pub fn solve_riccati_ode(model: &MarketModel, which: Which, grid: &TimeGrid) -> Result<RiccatiSolution> {
    if model.is_factor_driven() {
        return invalid("the ODE solver needs deterministic coefficients");
    }
    let n = grid.steps();
    let h = grid.dt();
    let zeros = vec![0.0; model.dim()];
    let mut values = vec![0.0; n + 1];
    values[n] = 1.0;
    for k in (0..n).rev() {
        let snap = model.snapshot(grid.midpoint(k), 0.0)?;
        let ham = Hamiltonian::from_snapshot(&snap)?;
        let rate = snap.rate;
        let rhs = |p: f64| -> Result<f64> {
            if !(p > 0.0) {
                return Err(Error::NonPositive { node: k, value: p });
            }
            Ok(2.0 * rate * p + ham.eval(which, p, &zeros)?.value)
        };
        // s = T − t runs forward
        let p = values[k + 1];
        let k1 = rhs(p)?;
        let k2 = rhs(p + 0.5 * h * k1)?;
        let k3 = rhs(p + 0.5 * h * k2)?;
        let k4 = rhs(p + h * k3)?;
        let next = p + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if !(next > 0.0) {
            return Err(Error::NonPositive { node: k, value: next });
        }
        values[k] = next;
    }

    let floor = positivity_floor(model, grid, &[])?;
    let envelope = upper_envelope(model, grid);
    for (k, (&p, &u)) in values.iter().zip(&envelope).enumerate() {
        if p < floor * (1.0 - BOUND_SLACK) || p > u * (1.0 + BOUND_SLACK) {
            return Err(Error::Numerical(format!(
                "P={p} at node {k} escapes the certified band [{floor}, {u}]"
            )));
        }
    }
    let lower_bound = values.iter().copied().fold(f64::INFINITY, f64::min);
    let upper_bound = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(RiccatiSolution {
        which,
        grid: *grid,
        dim: model.dim(),
        initial_state: model.initial_state(),
        representation: Representation::Deterministic { values },
        floor,
        lower_bound,
        upper_bound,
        upper_envelope: envelope,
        model_fingerprint: model.fingerprint(),
    })
}

/// Probe states spanning the simulated factor range, plus the initial state.
pub(crate) fn probe_grid(fp: &FactorPaths, initial: f64) -> Vec<f64> {
    let (mut lo, mut hi) = (initial, initial);
    for k in 0..=fp.steps {
        for &y in fp.states_at(k) {
            lo = lo.min(y);
            hi = hi.max(y);
        }
    }
    let mut out: Vec<f64> = (0..=32).map(|i| lo + (hi - lo) * i as f64 / 32.0).collect();
    out.push(initial);
    out
}

pub(crate) fn hull_and_support(ys: &[f64]) -> ([f64; 2], [f64; 2]) {
    let mut sorted = ys.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let q = |f: f64| sorted[((f * (n - 1) as f64).round() as usize).min(n - 1)];
    ([sorted[0], sorted[n - 1]], [q(0.01), q(0.99)])
}

/// Evaluates `f(path)` for every path, in parallel over fixed blocks.
pub(crate) fn per_path<F>(paths: usize, f: F) -> Result<Vec<f64>>
where
    F: Fn(usize) -> Result<f64> + Sync,
{
    let blocks: Vec<Result<Vec<f64>>> = block_ranges(paths)
        .into_par_iter()
        .map(|(start, len)| (start..start + len).map(&f).collect())
        .collect();
    let mut out = Vec::with_capacity(paths);
    for b in blocks {
        out.extend(b?);
    }
    Ok(out)
}

/// Factor-driven coefficients: least-squares Monte Carlo backward induction.
///
/// At node `k` the conditional expectation of `P_{k+1}` and the loading
/// `Λ_k ≈ E[(P_{k+1} − E[P_{k+1}|y_k]) ΔW_k | y_k] / Δt` are regressed on a
/// polynomial basis of `y_k`. The driver is applied explicitly at `P_{k+1}`,
/// then one fixed-point pass re-evaluates the Hamiltonian at the fitted
/// `P_k(y_k)` before the final projection. Fitted values are clamped into
/// `[c₁(1−τ), e^{2∫r}(1+τ)]` and clamping events are counted.
pub fn solve_riccati_lsmc(model: &MarketModel, which: Which, grid: &TimeGrid, cfg: &LsmcConfig) -> Result<RiccatiSolution> {
    let Some(factor) = model.factor() else {
        return invalid("regression solver needs a factor process");
    };
    let min_paths = 10 * (cfg.basis_degree + 1).pow(2);
    if cfg.paths < min_paths {
        return invalid(format!("need at least {min_paths} paths for degree {}", cfg.basis_degree));
    }
    let fp = simulate_factor_paths(factor, grid, cfg.paths, cfg.seed, Purpose::Regression);
    let floor = positivity_floor(model, grid, &probe_grid(&fp, factor.initial))?;
    let envelope = upper_envelope(model, grid);
    let n = grid.steps();
    let dt = grid.dt();
    let d = model.dim();
    let j = factor.brownian_index;
    let paths = cfg.paths;

    let mut p_fits = vec![PolyFit::constant(1.0); n + 1];
    let mut lambda_fits = vec![PolyFit::constant(0.0); n + 1];
    let mut hulls = vec![[factor.initial; 2]; n + 1];
    let mut supports = vec![[factor.initial; 2]; n + 1];
    (hulls[n], supports[n]) = hull_and_support(fp.states_at(n));
    let mut p_next = vec![1.0; paths];
    let mut clamp_events = 0usize;
    let (mut lo_seen, mut hi_seen) = (1.0f64, 1.0f64);

    for k in (0..n).rev() {
        let ys = fp.states_at(k);
        let dws = fp.increments_at(k);
        let t_mid = grid.midpoint(k);
        let rate = model.rate().eval(t_mid, 0.0);
        let band = (floor * (1.0 - CLAMP_TAU), envelope[k] * (1.0 + CLAMP_TAU));

        let cond = fit(ys, &p_next, cfg.basis_degree, k)?;
        let weighted: Vec<f64> = (0..paths).map(|i| (p_next[i] - cond.eval(ys[i])) * dws[i] / dt).collect();
        let lam_fit = fit(ys, &weighted, cfg.basis_degree, k)?;

        let hamiltonian_at = |i: usize, p: f64| -> Result<f64> {
            let snap = model.snapshot(t_mid, ys[i])?;
            let mut lambda = vec![0.0; d];
            lambda[j] = lam_fit.eval(ys[i]);
            Ok(Hamiltonian::from_snapshot(&snap)?.eval(which, p, &lambda)?.value)
        };

        let explicit = per_path(paths, |i| {
            let p = p_next[i];
            Ok(p + dt * (2.0 * rate * p + hamiltonian_at(i, p)?))
        })?;
        let first = fit(ys, &explicit, cfg.basis_degree, k)?;
        let refined = per_path(paths, |i| {
            let p_guess = first.eval(ys[i]).clamp(band.0, band.1);
            Ok((1.0 + 2.0 * rate * dt) * cond.eval(ys[i]) + dt * hamiltonian_at(i, p_guess)?)
        })?;
        let p_fit = fit(ys, &refined, cfg.basis_degree, k)?;

        for i in 0..paths {
            let raw = p_fit.eval(ys[i]);
            if !raw.is_finite() {
                return Err(Error::Numerical(format!("non-finite regression value at node {k}")));
            }
            let v = raw.clamp(band.0, band.1);
            if v != raw {
                clamp_events += 1;
            }
            lo_seen = lo_seen.min(v);
            hi_seen = hi_seen.max(v);
            p_next[i] = v;
        }
        (hulls[k], supports[k]) = hull_and_support(ys);
        p_fits[k] = p_fit;
        lambda_fits[k] = lam_fit;
    }

    let clamp_fraction = clamp_events as f64 / (paths * n) as f64;
    if clamp_fraction > MAX_CLAMP_FRACTION {
        return Err(Error::ClampingOverflow { fraction: clamp_fraction, limit: MAX_CLAMP_FRACTION });
    }
    Ok(RiccatiSolution {
        which,
        grid: *grid,
        dim: d,
        initial_state: factor.initial,
        representation: Representation::Regression(RegressionSolution {
            brownian_index: j,
            p_fits,
            lambda_fits,
            hulls,
            supports,
            paths,
            basis_degree: cfg.basis_degree,
            seed: cfg.seed,
            clamp_events,
            clamp_fraction,
        }),
        floor,
        lower_bound: lo_seen,
        upper_bound: hi_seen,
        upper_envelope: envelope,
        model_fingerprint: model.fingerprint(),
    })
}

/// Picks the ODE solver for deterministic models and LSMC otherwise.
pub fn solve_riccati(model: &MarketModel, which: Which, grid: &TimeGrid, cfg: &LsmcConfig) -> Result<RiccatiSolution> {
    if model.is_factor_driven() {
        solve_riccati_lsmc(model, which, grid, cfg)
    } else {
        solve_riccati_ode(model, which, grid)
    }
}

/// `(P, Λ)` at time `t` and factor state `y`: linear interpolation in time
/// for ODE solutions, nearest node for regression solutions.
pub fn evaluate_solution(sol: &RiccatiSolution, t: f64, factor_state: f64) -> Result<RiccatiPoint> {
    sol.grid.check_time(t)?;
    let grid = &sol.grid;
    match &sol.representation {
        Representation::Deterministic { values } => {
            let t = t.clamp(0.0, grid.horizon());
            let x = t / grid.dt();
            let k = (x.floor() as usize).min(grid.steps() - 1);
            let w = (x - k as f64).clamp(0.0, 1.0);
            let p = if w == 0.0 { values[k] } else if w == 1.0 { values[k + 1] } else { values[k] + w * (values[k + 1] - values[k]) };
            Ok(RiccatiPoint { p, lambda: vec![0.0; sol.dim], extrapolated: false })
        }
        Representation::Regression(_) => Ok(sol.at_node(grid.nearest_node(t), factor_state)),
    }
}
