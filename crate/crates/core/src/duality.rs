//! Convex-duality route for one risky asset.
//!
//! The dual value `inf_v E(N^{r,v}_{0,T})²` over controls `θ̲ ≤ v ≤ θ̄` equals
//! `e^{Ỹ₀}` where `(Ỹ, Z̃)` solves the quadratic BSDE
//! `Ỹ_t = ∫_t^T g(s, Z̃) ds − ∫_t^T Z̃ dW`. The second Riccati solution is
//! related by `1/P₂ = e^{Ỹ}` and `Λ₂/P₂ = −Z̃`, which gives an independent
//! check of the primal solver.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::frontier::{efficient_policy, FrontierSpec, RiccatiCache};
use crate::model::{discount_factor, MarketModel, TimeGrid};
use crate::paths::{simulate_factor_paths, Purpose};
use crate::policy::run_paths;
use crate::regression::{fit, PolyFit};
use crate::riccati::{hull_and_support, per_path, LsmcConfig, Representation, RiccatiSolution};
use crate::stats::mean_and_se;

/// `inf_{θ̲ ≤ v ≤ θ̄} (v² − 2Zv + Z²/2 − 2r)`.
pub fn dual_generator(z: f64, theta_lower: f64, theta_upper: f64, rate: f64) -> f64 {
    let v = optimal_dual_control(z, theta_lower, theta_upper);
    (v - z) * (v - z) - 0.5 * z * z - 2.0 * rate
}

/// Projection of `Z̃` onto `[θ̲, θ̄]`.
pub fn optimal_dual_control(z: f64, theta_lower: f64, theta_upper: f64) -> f64 {
    if z > theta_upper {
        theta_upper
    } else if z < theta_lower {
        theta_lower
    } else {
        z
    }
}

/// `ζ̂ = −2e^{−Ỹ₀}(x₀ − d*ρ)`, requiring `x₀ < d*ρ`.
pub fn dual_multiplier(ytilde0: f64, x0: f64, d_star: f64, rho: f64) -> Result<f64> {
    let zeta = -2.0 * (-ytilde0).exp() * (x0 - d_star * rho);
    if !(zeta > 0.0 && zeta.is_finite()) {
        return invalid(format!("dual multiplier {zeta} is not positive; need x0 < d*·e^(-∫r)"));
    }
    Ok(zeta)
}

/// Dual utility `ũ(ζ) = dζ − ζ²/4`.
pub fn utility_conjugate(d: f64, zeta: f64) -> f64 {
    d * zeta - 0.25 * zeta * zeta
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DualRepresentation {
    Deterministic {
        ytilde: Vec<f64>,
    },
    Regression {
        y_fits: Vec<PolyFit>,
        z_fits: Vec<PolyFit>,
        hulls: Vec<[f64; 2]>,
        paths: usize,
        basis_degree: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualMultiplier {
    pub x0: f64,
    pub d_star: f64,
    pub zeta_hat: f64,
    /// `e^{−∫₀ᵀr}`.
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub grid: TimeGrid,
    pub initial_state: f64,
    pub representation: DualRepresentation,
    pub multiplier: Option<DualMultiplier>,
    pub model_fingerprint: String,
    /// `θ̲, θ̄` per node for deterministic models.
    theta_nodes: Option<Vec<[f64; 2]>>,
}

impl DualSolution {
    pub fn ytilde0(&self) -> f64 {
        self.ytilde_at_node(0, self.initial_state)
    }

    pub fn ytilde_at_node(&self, k: usize, y: f64) -> f64 {
        match &self.representation {
            DualRepresentation::Deterministic { ytilde } => ytilde[k],
            DualRepresentation::Regression { y_fits, .. } => y_fits[k].eval(y),
        }
    }

    pub fn ztilde_at_node(&self, k: usize, y: f64) -> f64 {
        match &self.representation {
            DualRepresentation::Deterministic { .. } => 0.0,
            DualRepresentation::Regression { z_fits, .. } => z_fits[k].eval(y),
        }
    }

    /// `v̂` at node `k` and factor state `y`.
    pub fn v_hat_at_node(&self, model: &MarketModel, k: usize, y: f64) -> Result<f64> {
        let z = self.ztilde_at_node(k, y);
        if let Some(th) = &self.theta_nodes {
            return Ok(optimal_dual_control(z, th[k][0], th[k][1]));
        }
        let s = model.snapshot(self.grid.node(k), y)?;
        Ok(optimal_dual_control(z, s.theta_lower[0], s.theta_upper[0]))
    }

    /// `ξ̂ = d* − (ζ̂/2) N`.
    pub fn xi_hat(&self, n: f64) -> Option<f64> {
        self.multiplier.map(|m| m.d_star - 0.5 * m.zeta_hat * n)
    }

    /// Attaches `ζ̂` for the problem with initial wealth `x0` and multiplier `d*`.
    pub fn with_multiplier(mut self, model: &MarketModel, x0: f64, d_star: f64) -> Result<Self> {
        let rho = discount_factor(model, &self.grid, 0.0)?;
        let zeta_hat = dual_multiplier(self.ytilde0(), x0, d_star, rho)?;
        self.multiplier = Some(DualMultiplier { x0, d_star, zeta_hat, rho });
        Ok(self)
    }
}

fn check_scalar_market(model: &MarketModel, grid: &TimeGrid) -> Result<()> {
    if model.dim() != 1 {
        return invalid(format!("the dual solver handles one risky asset, got {}", model.dim()));
    }
    for t in grid.nodes() {
        let s = model.snapshot(t, model.initial_state())?;
        if !(s.sigma.get(0, 0) > 0.0) {
            return invalid(format!("dual solver needs σ > 0, got {} at t={t}", s.sigma.get(0, 0)));
        }
    }
    Ok(())
}

/// Solves the quadratic BSDE: by quadrature with `Z̃ ≡ 0` for deterministic
/// coefficients, otherwise by the same regression scheme as the Riccati
/// solver on the same factor paths.
pub fn solve_dual_bsde(model: &MarketModel, grid: &TimeGrid, cfg: &LsmcConfig) -> Result<DualSolution> {
    check_scalar_market(model, grid)?;
    let n = grid.steps();
    let dt = grid.dt();
    let Some(factor) = model.factor() else {
        let mut ytilde = vec![0.0; n + 1];
        for k in (0..n).rev() {
            let s = model.snapshot(grid.midpoint(k), 0.0)?;
            ytilde[k] = ytilde[k + 1] + dt * dual_generator(0.0, s.theta_lower[0], s.theta_upper[0], s.rate);
        }
        let theta_nodes = grid
            .nodes()
            .map(|t| model.snapshot(t, 0.0).map(|s| [s.theta_lower[0], s.theta_upper[0]]))
            .collect::<Result<Vec<_>>>()?;
        return Ok(DualSolution {
            grid: *grid,
            initial_state: 0.0,
            representation: DualRepresentation::Deterministic { ytilde },
            multiplier: None,
            model_fingerprint: model.fingerprint(),
            theta_nodes: Some(theta_nodes),
        });
    };

    let min_paths = 10 * (cfg.basis_degree + 1).pow(2);
    if cfg.paths < min_paths {
        return invalid(format!("need at least {min_paths} paths for degree {}", cfg.basis_degree));
    }
    let fp = simulate_factor_paths(factor, grid, cfg.paths, cfg.seed, Purpose::Regression);
    let paths = cfg.paths;
    let mut y_fits = vec![PolyFit::constant(0.0); n + 1];
    let mut z_fits = vec![PolyFit::constant(0.0); n + 1];
    let mut hulls = vec![[factor.initial; 2]; n + 1];
    hulls[n] = hull_and_support(fp.states_at(n)).0;
    let mut next = vec![0.0; paths];
    for k in (0..n).rev() {
        let ys = fp.states_at(k);
        let dws = fp.increments_at(k);
        let t_mid = grid.midpoint(k);
        let cond = fit(ys, &next, cfg.basis_degree, k)?;
        let weighted: Vec<f64> = (0..paths).map(|i| (next[i] - cond.eval(ys[i])) * dws[i] / dt).collect();
        let z_fit = fit(ys, &weighted, cfg.basis_degree, k)?;
        let target = per_path(paths, |i| {
            let s = model.snapshot(t_mid, ys[i])?;
            let g = dual_generator(z_fit.eval(ys[i]), s.theta_lower[0], s.theta_upper[0], s.rate);
            Ok(cond.eval(ys[i]) + dt * g)
        })?;
        let y_fit = fit(ys, &target, cfg.basis_degree, k)?;
        for i in 0..paths {
            next[i] = y_fit.eval(ys[i]);
            if !next[i].is_finite() {
                return Err(Error::Numerical(format!("non-finite dual value at node {k}")));
            }
        }
        hulls[k] = hull_and_support(ys).0;
        y_fits[k] = y_fit;
        z_fits[k] = z_fit;
    }
    Ok(DualSolution {
        grid: *grid,
        initial_state: factor.initial,
        representation: DualRepresentation::Regression {
            y_fits,
            z_fits,
            hulls,
            paths,
            basis_degree: cfg.basis_degree,
            seed: cfg.seed,
        },
        multiplier: None,
        model_fingerprint: model.fingerprint(),
        theta_nodes: None,
    })
}

/// Residual threshold for deterministic solutions.
pub const CONSISTENCY_TOL_EXACT: f64 = 1e-6;
/// Residual threshold for regression solutions.
pub const CONSISTENCY_TOL_REGRESSION: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub t: f64,
    /// `P₂ e^{Ỹ} − 1`, largest in absolute value over the probed states.
    pub p2_times_exp_y_minus_1: f64,
    /// `Λ₂/P₂ + Z̃`, largest in absolute value over the probed states.
    pub lambda_ratio_plus_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub rows: Vec<ResidualRow>,
    pub max_p_residual: f64,
    pub max_lambda_residual: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Compares the second Riccati solution against the dual BSDE at every node,
/// over nine states spanning the central 98% of the simulated factor law.
pub fn duality_consistency_check(sol2: &RiccatiSolution, dual: &DualSolution) -> Result<ConsistencyReport> {
    if sol2.grid != dual.grid {
        return Err(Error::GridMismatch("Riccati and dual solutions use different grids".into()));
    }
    if sol2.model_fingerprint != dual.model_fingerprint {
        return invalid("Riccati and dual solutions belong to different models");
    }
    if sol2.which != crate::hamiltonian::Which::H2 {
        return invalid("consistency check needs the second Riccati solution");
    }
    let threshold = if sol2.is_deterministic() { CONSISTENCY_TOL_EXACT } else { CONSISTENCY_TOL_REGRESSION };
    let mut rows = Vec::with_capacity(sol2.grid.steps() + 1);
    for (k, t) in sol2.grid.nodes().enumerate() {
        let states: Vec<f64> = match &sol2.representation {
            Representation::Deterministic { .. } => vec![sol2.initial_state],
            Representation::Regression(r) => {
                let [lo, hi] = r.supports[k];
                (0..9).map(|i| lo + (hi - lo) * i as f64 / 8.0).collect()
            }
        };
        let mut row = ResidualRow { t, p2_times_exp_y_minus_1: 0.0, lambda_ratio_plus_z: 0.0 };
        for y in states {
            let pt = sol2.at_node(k, y);
            let a = pt.p * dual.ytilde_at_node(k, y).exp() - 1.0;
            let b = pt.lambda[0] / pt.p + dual.ztilde_at_node(k, y);
            if a.abs() > row.p2_times_exp_y_minus_1.abs() {
                row.p2_times_exp_y_minus_1 = a;
            }
            if b.abs() > row.lambda_ratio_plus_z.abs() {
                row.lambda_ratio_plus_z = b;
            }
        }
        rows.push(row);
    }
    let max_p_residual = rows.iter().map(|r| r.p2_times_exp_y_minus_1.abs()).fold(0.0, f64::max);
    let max_lambda_residual = rows.iter().map(|r| r.lambda_ratio_plus_z.abs()).fold(0.0, f64::max);
    Ok(ConsistencyReport {
        pass: max_p_residual < threshold && max_lambda_residual < threshold,
        rows,
        max_p_residual,
        max_lambda_residual,
        threshold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub standard_error: f64,
}

impl Estimate {
    fn of(xs: &[f64]) -> Self {
        let (value, standard_error) = mean_and_se(xs);
        Self { value, standard_error }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalWealthReport {
    pub paths: usize,
    pub steps: usize,
    pub dt: f64,
    pub seed: u64,
    pub d_star: f64,
    pub zeta_hat: f64,
    /// `E[ξ̂ N]`, to be compared with `x0`.
    pub budget: Estimate,
    pub budget_residual: f64,
    /// `E|X*_T − ξ̂|` on common paths.
    pub mean_abs_gap: Estimate,
    /// `E[((ξ̂ − d*)⁻)²]`.
    pub shortfall_square: Estimate,
    /// `P₂(0)(x0 − d*ρ)²`.
    pub predicted_cost: f64,
    /// `predicted_cost − (d* − K)²`.
    pub predicted_variance: f64,
    pub x0: f64,
    pub target: f64,
}

/// Simulates the efficient primal wealth and the dual density `N^{r,v̂}` on
/// the same Brownian increments and compares `X*_T` with `ξ̂` path by path.
pub fn dual_terminal_wealth_check(
    model: &MarketModel,
    grid: &TimeGrid,
    spec: FrontierSpec,
    cfg: &LsmcConfig,
    paths: usize,
    seed: u64,
    cache: &RiccatiCache,
) -> Result<TerminalWealthReport> {
    if paths == 0 {
        return invalid("need at least one path");
    }
    check_scalar_market(model, grid)?;
    let policy = efficient_policy(model, grid, spec, cfg, cache)?;
    let dual = solve_dual_bsde(model, grid, cfg)?.with_multiplier(model, spec.x0, policy.d_value)?;
    let mult = dual.multiplier.expect("multiplier attached");
    let rate_steps: Vec<f64> = (0..grid.steps()).map(|k| model.rate_integral(grid.node(k), grid.node(k + 1))).collect();
    let dt = grid.dt();
    let log_n_step = |k: usize, y: f64, dw: &[f64]| -> f64 {
        match dual.v_hat_at_node(model, k, y) {
            Ok(v) => -rate_steps[k] - 0.5 * v * v * dt - v * dw[0],
            Err(_) => f64::NAN,
        }
    };
    let run = run_paths(model, grid, &policy, spec.x0, paths, seed, Some(&log_n_step))?;
    let mut weighted = Vec::with_capacity(paths);
    let mut gaps = Vec::with_capacity(paths);
    let mut shortfall = Vec::with_capacity(paths);
    for (x, log_n) in run.terminal.iter().zip(&run.companion) {
        let n = log_n.exp();
        if !n.is_finite() {
            return Err(Error::Numerical("non-finite dual density".into()));
        }
        let xi = mult.d_star - 0.5 * mult.zeta_hat * n;
        weighted.push(xi * n);
        gaps.push((x - xi).abs());
        shortfall.push((mult.d_star - xi).max(0.0).powi(2));
    }
    let budget = Estimate::of(&weighted);
    let predicted_cost = crate::policy::optimal_cost(policy.sol1.p0(), policy.sol2.p0(), spec.x0, mult.d_star, mult.rho)?;
    Ok(TerminalWealthReport {
        paths,
        steps: grid.steps(),
        dt,
        seed,
        d_star: mult.d_star,
        zeta_hat: mult.zeta_hat,
        budget_residual: (budget.value - spec.x0).abs(),
        budget,
        mean_abs_gap: Estimate::of(&gaps),
        shortfall_square: Estimate::of(&shortfall),
        predicted_cost,
        predicted_variance: predicted_cost - (mult.d_star - spec.target).powi(2),
        x0: spec.x0,
        target: spec.target,
    })
}
