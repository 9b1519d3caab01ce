//! Market coefficients, the time grid, and admissibility checks.
//!
//! The wealth dynamics are
//!
//! ```text
//! dX = (r X + (π⁺)'σ θ_lo − (π⁻)'σ θ_hi) dt + π'σ dW
//! ```
//!
//! where long positions earn the premium `θ_lo` and short positions pay
//! `θ_hi ≥ θ_lo`. The interest rate is deterministic; the premia and the
//! volatility may depend on a scalar mean-reverting factor.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;
use crate::paths::{simulate_factor_paths, Purpose};

/// Uniform grid `t_k = k T / N`, `k = 0..=N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr", into = "GridRepr")]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

#[derive(Serialize, Deserialize)]
struct GridRepr {
    horizon: f64,
    steps: usize,
}

impl TryFrom<GridRepr> for TimeGrid {
    type Error = Error;
    fn try_from(r: GridRepr) -> Result<Self> {
        TimeGrid::new(r.horizon, r.steps)
    }
}

impl From<TimeGrid> for GridRepr {
    fn from(g: TimeGrid) -> Self {
        GridRepr { horizon: g.horizon, steps: g.steps }
    }
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return invalid(format!("horizon must be positive and finite, got {horizon}"));
        }
        if steps == 0 {
            return invalid("grid needs at least one step");
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            self.horizon * k as f64 / self.steps as f64
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(|k| self.node(k))
    }

    /// Midpoint of `[t_k, t_{k+1}]`.
    pub fn midpoint(&self, k: usize) -> f64 {
        0.5 * (self.node(k) + self.node(k + 1))
    }

    pub(crate) fn check_time(&self, t: f64) -> Result<()> {
        let slack = 1e-12 * self.horizon;
        if !(t >= -slack && t <= self.horizon + slack) {
            return invalid(format!("time {t} outside [0, {}]", self.horizon));
        }
        Ok(())
    }

    /// Index of the node nearest to `t`.
    pub fn nearest_node(&self, t: f64) -> usize {
        let k = (t / self.dt()).round();
        (k.max(0.0) as usize).min(self.steps)
    }
}

/// A scalar coefficient: constant, a step function of time, or a function of
/// the factor state.
///
/// Serialized either as a bare number (constant) or as an object tagged by
/// `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CoefficientRepr", into = "CoefficientRepr")]
pub enum CoefficientSpec {
    Constant(f64),
    /// Right-continuous step function: `values[i]` on `[breaks[i], breaks[i+1])`.
    Piecewise { breaks: Vec<f64>, values: Vec<f64> },
    /// Polynomial in the factor state, optionally clipped to `[lo, hi]`.
    Polynomial { coeffs: Vec<f64>, bounds: Option<[f64; 2]> },
    /// `offset + amplitude * tanh(rate * y)`.
    Tanh { offset: f64, amplitude: f64, rate: f64 },
    /// Linear interpolation through `(states[i], values[i])`, flat outside.
    Table { states: Vec<f64>, values: Vec<f64> },
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum CoefficientRepr {
    Constant(f64),
    Tagged(TaggedCoefficient),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum TaggedCoefficient {
    Constant { value: f64 },
    Piecewise { breaks: Vec<f64>, values: Vec<f64> },
    Polynomial {
        coeffs: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bounds: Option<[f64; 2]>,
    },
    Tanh { offset: f64, amplitude: f64, rate: f64 },
    Table { states: Vec<f64>, values: Vec<f64> },
}

impl TryFrom<CoefficientRepr> for CoefficientSpec {
    type Error = Error;
    fn try_from(r: CoefficientRepr) -> Result<Self> {
        let spec = match r {
            CoefficientRepr::Constant(v) | CoefficientRepr::Tagged(TaggedCoefficient::Constant { value: v }) => {
                CoefficientSpec::Constant(v)
            }
            CoefficientRepr::Tagged(TaggedCoefficient::Piecewise { breaks, values }) => {
                CoefficientSpec::Piecewise { breaks, values }
            }
            CoefficientRepr::Tagged(TaggedCoefficient::Polynomial { coeffs, bounds }) => {
                CoefficientSpec::Polynomial { coeffs, bounds }
            }
            CoefficientRepr::Tagged(TaggedCoefficient::Tanh { offset, amplitude, rate }) => {
                CoefficientSpec::Tanh { offset, amplitude, rate }
            }
            CoefficientRepr::Tagged(TaggedCoefficient::Table { states, values }) => {
                CoefficientSpec::Table { states, values }
            }
        };
        spec.check()?;
        Ok(spec)
    }
}

impl From<CoefficientSpec> for CoefficientRepr {
    fn from(c: CoefficientSpec) -> Self {
        match c {
            CoefficientSpec::Constant(v) => CoefficientRepr::Constant(v),
            CoefficientSpec::Piecewise { breaks, values } => {
                CoefficientRepr::Tagged(TaggedCoefficient::Piecewise { breaks, values })
            }
            CoefficientSpec::Polynomial { coeffs, bounds } => {
                CoefficientRepr::Tagged(TaggedCoefficient::Polynomial { coeffs, bounds })
            }
            CoefficientSpec::Tanh { offset, amplitude, rate } => {
                CoefficientRepr::Tagged(TaggedCoefficient::Tanh { offset, amplitude, rate })
            }
            CoefficientSpec::Table { states, values } => {
                CoefficientRepr::Tagged(TaggedCoefficient::Table { states, values })
            }
        }
    }
}

impl From<f64> for CoefficientSpec {
    fn from(v: f64) -> Self {
        CoefficientSpec::Constant(v)
    }
}

fn strictly_increasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[0] < w[1])
}

impl CoefficientSpec {
    fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::MalformedCoefficient(m.to_string()));
        match self {
            CoefficientSpec::Constant(v) if !v.is_finite() => bad("constant is not finite"),
            CoefficientSpec::Piecewise { breaks, values } => {
                if breaks.is_empty() || breaks.len() != values.len() {
                    bad("piecewise needs one value per break")
                } else if !strictly_increasing(breaks) {
                    bad("piecewise breaks must be strictly increasing")
                } else if values.iter().chain(breaks).any(|v| !v.is_finite()) {
                    bad("piecewise entries must be finite")
                } else {
                    Ok(())
                }
            }
            CoefficientSpec::Polynomial { coeffs, bounds } => {
                if coeffs.is_empty() {
                    bad("polynomial needs at least one coefficient")
                } else if let Some([lo, hi]) = bounds {
                    if lo <= hi { Ok(()) } else { bad("polynomial bounds are reversed") }
                } else {
                    Ok(())
                }
            }
            CoefficientSpec::Table { states, values } => {
                if states.is_empty() || states.len() != values.len() {
                    bad("table needs one value per state")
                } else if !strictly_increasing(states) {
                    bad("table states must be strictly increasing")
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    pub fn depends_on_factor(&self) -> bool {
        matches!(
            self,
            CoefficientSpec::Polynomial { .. } | CoefficientSpec::Tanh { .. } | CoefficientSpec::Table { .. }
        )
    }

    /// Value at time `t` and factor state `y`.
    pub fn eval(&self, t: f64, y: f64) -> f64 {
        match self {
            CoefficientSpec::Constant(v) => *v,
            CoefficientSpec::Piecewise { breaks, values } => {
                let i = breaks.partition_point(|b| *b <= t);
                values[i.saturating_sub(1)]
            }
            CoefficientSpec::Polynomial { coeffs, bounds } => {
                let v = coeffs.iter().rev().fold(0.0, |acc, c| acc * y + c);
                match bounds {
                    Some([lo, hi]) => v.clamp(*lo, *hi),
                    None => v,
                }
            }
            CoefficientSpec::Tanh { offset, amplitude, rate } => offset + amplitude * (rate * y).tanh(),
            CoefficientSpec::Table { states, values } => {
                let i = states.partition_point(|s| *s <= y);
                if i == 0 {
                    values[0]
                } else if i == states.len() {
                    values[i - 1]
                } else {
                    let w = (y - states[i - 1]) / (states[i] - states[i - 1]);
                    values[i - 1] + w * (values[i] - values[i - 1])
                }
            }
        }
    }

    /// `∫_a^b c(t) dt` for time-only coefficients, exact for step functions.
    pub fn integrate(&self, a: f64, b: f64) -> Option<f64> {
        match self {
            CoefficientSpec::Constant(v) => Some(v * (b - a)),
            CoefficientSpec::Piecewise { breaks, values } => {
                let mut total = 0.0;
                for (i, v) in values.iter().enumerate() {
                    let lo = if i == 0 { f64::NEG_INFINITY } else { breaks[i] };
                    let hi = breaks.get(i + 1).copied().unwrap_or(f64::INFINITY);
                    let overlap = b.min(hi) - a.max(lo);
                    if overlap > 0.0 {
                        total += v * overlap;
                    }
                }
                Some(total)
            }
            _ => None,
        }
    }
}

/// Scalar Ornstein–Uhlenbeck factor `dy = κ(m − y) dt + ν dW^j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorProcess {
    pub kappa: f64,
    pub mean: f64,
    pub vol: f64,
    pub initial: f64,
    /// Zero-based index of the Brownian component driving the factor.
    #[serde(default)]
    pub brownian_index: usize,
}

impl FactorProcess {
    pub fn is_deterministic(&self) -> bool {
        self.vol == 0.0
    }

    /// One Euler step.
    #[inline]
    pub fn step(&self, y: f64, dt: f64, dw: f64) -> f64 {
        y + self.kappa * (self.mean - y) * dt + self.vol * dw
    }
}

/// Market coefficients at a single `(t, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketSnapshot {
    pub rate: f64,
    pub sigma: Matrix,
    pub theta_lower: Vec<f64>,
    pub theta_upper: Vec<f64>,
}

impl MarketSnapshot {
    pub fn dim(&self) -> usize {
        self.theta_lower.len()
    }

    /// `σ θ_lo`
    pub fn mu_lower(&self) -> Vec<f64> {
        self.sigma.mul_vec(&self.theta_lower)
    }

    /// `σ θ_hi`
    pub fn mu_upper(&self) -> Vec<f64> {
        self.sigma.mul_vec(&self.theta_upper)
    }
}

fn default_nondegeneracy() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRepr", into = "ModelRepr")]
pub struct MarketModel {
    dim: usize,
    rate: CoefficientSpec,
    theta_lower: Vec<CoefficientSpec>,
    theta_upper: Vec<CoefficientSpec>,
    sigma: Vec<Vec<CoefficientSpec>>,
    factor: Option<FactorProcess>,
    nondegeneracy: f64,
    coefficient_bound: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelRepr {
    dim: usize,
    rate: CoefficientSpec,
    theta_lower: Vec<CoefficientSpec>,
    theta_upper: Vec<CoefficientSpec>,
    sigma: Vec<Vec<CoefficientSpec>>,
    #[serde(default)]
    factor: Option<FactorProcess>,
    #[serde(default = "default_nondegeneracy")]
    nondegeneracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    coefficient_bound: Option<f64>,
}

impl TryFrom<ModelRepr> for MarketModel {
    type Error = Error;
    fn try_from(r: ModelRepr) -> Result<Self> {
        let mut m = MarketModel::new(r.dim, r.rate, r.theta_lower, r.theta_upper, r.sigma, r.factor)?;
        m = m.with_nondegeneracy(r.nondegeneracy)?;
        m.coefficient_bound = r.coefficient_bound;
        Ok(m)
    }
}

impl From<MarketModel> for ModelRepr {
    fn from(m: MarketModel) -> Self {
        ModelRepr {
            dim: m.dim,
            rate: m.rate,
            theta_lower: m.theta_lower,
            theta_upper: m.theta_upper,
            sigma: m.sigma,
            factor: m.factor,
            nondegeneracy: m.nondegeneracy,
            coefficient_bound: m.coefficient_bound,
        }
    }
}

impl MarketModel {
    pub fn new(
        dim: usize,
        rate: CoefficientSpec,
        theta_lower: Vec<CoefficientSpec>,
        theta_upper: Vec<CoefficientSpec>,
        sigma: Vec<Vec<CoefficientSpec>>,
        factor: Option<FactorProcess>,
    ) -> Result<Self> {
        if dim == 0 {
            return invalid("market needs at least one risky asset");
        }
        if theta_lower.len() != dim || theta_upper.len() != dim {
            return invalid(format!("premium vectors must have length {dim}"));
        }
        if sigma.len() != dim || sigma.iter().any(|row| row.len() != dim) {
            return invalid(format!("volatility must be {dim}x{dim}"));
        }
        if rate.depends_on_factor() {
            return invalid("the interest rate must be deterministic");
        }
        let all = theta_lower.iter().chain(&theta_upper).chain(sigma.iter().flatten());
        for c in all.clone().chain(std::iter::once(&rate)) {
            c.check()?;
        }
        if let Some(f) = &factor {
            if f.brownian_index >= dim {
                return invalid(format!("factor Brownian index {} out of range", f.brownian_index));
            }
            if !(f.kappa >= 0.0 && f.vol >= 0.0) || ![f.kappa, f.mean, f.vol, f.initial].iter().all(|v| v.is_finite()) {
                return invalid("factor needs finite kappa >= 0 and vol >= 0");
            }
        } else if all.into_iter().any(CoefficientSpec::depends_on_factor) {
            return invalid("factor-dependent coefficients require a factor process");
        }
        Ok(Self {
            dim,
            rate,
            theta_lower,
            theta_upper,
            sigma,
            factor,
            nondegeneracy: default_nondegeneracy(),
            coefficient_bound: None,
        })
    }

    /// One-asset model with constant coefficients.
    pub fn constant_1d(rate: f64, sigma: f64, theta_lower: f64, theta_upper: f64) -> Result<Self> {
        Self::new(
            1,
            rate.into(),
            vec![theta_lower.into()],
            vec![theta_upper.into()],
            vec![vec![sigma.into()]],
            None,
        )
    }

    /// Model with constant coefficients in any dimension.
    pub fn constant(rate: f64, sigma: &Matrix, theta_lower: &[f64], theta_upper: &[f64]) -> Result<Self> {
        let d = sigma.dim();
        Self::new(
            d,
            rate.into(),
            theta_lower.iter().map(|&v| v.into()).collect(),
            theta_upper.iter().map(|&v| v.into()).collect(),
            sigma.rows().into_iter().map(|r| r.into_iter().map(Into::into).collect()).collect(),
            None,
        )
    }

    pub fn with_nondegeneracy(mut self, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return invalid("nondegeneracy constant must be positive");
        }
        self.nondegeneracy = eps;
        Ok(self)
    }

    pub fn with_coefficient_bound(mut self, bound: f64) -> Self {
        self.coefficient_bound = Some(bound);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn factor(&self) -> Option<&FactorProcess> {
        self.factor.as_ref()
    }

    pub fn nondegeneracy(&self) -> f64 {
        self.nondegeneracy
    }

    pub fn rate(&self) -> &CoefficientSpec {
        &self.rate
    }

    /// Solvers switch to regression Monte Carlo whenever a factor is attached.
    pub fn is_factor_driven(&self) -> bool {
        self.factor.is_some()
    }

    /// Initial factor state, or 0 for deterministic models.
    pub fn initial_state(&self) -> f64 {
        self.factor.as_ref().map_or(0.0, |f| f.initial)
    }

    pub fn snapshot(&self, t: f64, y: f64) -> Result<MarketSnapshot> {
        let d = self.dim;
        let mut sigma = Matrix::zeros(d);
        for i in 0..d {
            for j in 0..d {
                sigma.set(i, j, self.sigma[i][j].eval(t, y));
            }
        }
        let snap = MarketSnapshot {
            rate: self.rate.eval(t, y),
            sigma,
            theta_lower: self.theta_lower.iter().map(|c| c.eval(t, y)).collect(),
            theta_upper: self.theta_upper.iter().map(|c| c.eval(t, y)).collect(),
        };
        let finite = snap.rate.is_finite()
            && snap.sigma.is_finite()
            && snap.theta_lower.iter().chain(&snap.theta_upper).all(|v| v.is_finite());
        if !finite {
            return Err(Error::MalformedCoefficient(format!("non-finite coefficient at t={t}, y={y}")));
        }
        Ok(snap)
    }

    /// `∫_a^b r_s ds`.
    pub fn rate_integral(&self, a: f64, b: f64) -> f64 {
        self.rate.integrate(a, b).expect("rate is time-only by construction")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("model serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

/// `e^{-∫_t^T r_s ds}`.
pub fn discount_factor(model: &MarketModel, grid: &TimeGrid, t: f64) -> Result<f64> {
    grid.check_time(t)?;
    let t = t.clamp(0.0, grid.horizon());
    if t == grid.horizon() {
        return Ok(1.0);
    }
    Ok((-model.rate_integral(t, grid.horizon())).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    ThetaOrdering,
    Nondegeneracy,
    Bound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub t: f64,
    pub state: Option<f64>,
    pub index: Option<usize>,
    /// Offending quantity: `θ_lo − θ_hi`, the smallest eigenvalue of `σσ'`,
    /// or the out-of-bound coefficient value.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub points_checked: usize,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks premium ordering, uniform nondegeneracy and declared bounds at
/// every grid node and probe state.
///
/// Bounds on factor-dependent coefficients are only certified on the probe
/// states supplied; with no probes the factor's initial state is used.
pub fn validate_model(model: &MarketModel, grid: &TimeGrid, probe_states: &[f64]) -> Result<ValidationReport> {
    let states: Vec<Option<f64>> = match model.factor() {
        Some(f) if probe_states.is_empty() => vec![Some(f.initial)],
        Some(_) => probe_states.iter().map(|&y| Some(y)).collect(),
        None => vec![None],
    };
    let mut violations = Vec::new();
    let mut points = 0;
    for t in grid.nodes() {
        for &state in &states {
            points += 1;
            let snap = model.snapshot(t, state.unwrap_or(0.0))?;
            for i in 0..model.dim {
                let gap = snap.theta_lower[i] - snap.theta_upper[i];
                if gap > 0.0 {
                    violations.push(Violation { kind: ViolationKind::ThetaOrdering, t, state, index: Some(i), value: gap });
                }
            }
            let min_eig = snap.sigma.gram().min_eigenvalue_symmetric();
            if min_eig < model.nondegeneracy {
                violations.push(Violation { kind: ViolationKind::Nondegeneracy, t, state, index: None, value: min_eig });
            }
            if let Some(bound) = model.coefficient_bound {
                let values = std::iter::once(snap.rate)
                    .chain(snap.theta_lower.iter().copied())
                    .chain(snap.theta_upper.iter().copied());
                for (i, v) in values.enumerate() {
                    if v.abs() > bound {
                        violations.push(Violation { kind: ViolationKind::Bound, t, state, index: Some(i), value: v });
                    }
                }
                for i in 0..model.dim {
                    for j in 0..model.dim {
                        let v = snap.sigma.get(i, j);
                        if v.abs() > bound {
                            let index = Some(1 + 2 * model.dim + i * model.dim + j);
                            violations.push(Violation { kind: ViolationKind::Bound, t, state, index, value: v });
                        }
                    }
                }
            }
        }
    }
    Ok(ValidationReport { violations, points_checked: points })
}

/// Threshold separating an exact zero from a positive quadrature value.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityResult {
    pub feasible: bool,
    /// `Σ_i E∫(μ_lo^i)⁺ dt` and `Σ_i E∫(μ_hi^i)⁻ dt`.
    pub lhs_values: [f64; 2],
    pub standard_errors: [f64; 2],
    /// Per-side threshold actually applied.
    pub thresholds: [f64; 2],
}

/// Per-coordinate integrands `(μ_lo^i)⁺` and `(μ_hi^i)⁻` at one point.
pub(crate) fn premium_parts(snap: &MarketSnapshot) -> (Vec<f64>, Vec<f64>) {
    let long = snap.mu_lower().into_iter().map(|v| v.max(0.0)).collect();
    let short = snap.mu_upper().into_iter().map(|v| (-v).max(0.0)).collect();
    (long, short)
}

/// Evaluates the feasibility condition for the mean constraint.
///
/// Deterministic models integrate by midpoint quadrature on the grid (exact
/// for step coefficients aligned with the grid); factor-driven models average
/// over `mc_paths` simulated factor paths and compare against three standard
/// errors.
pub fn check_feasibility(model: &MarketModel, grid: &TimeGrid, mc_paths: usize, seed: u64) -> Result<FeasibilityResult> {
    let dt = grid.dt();
    let Some(factor) = model.factor() else {
        let mut lhs = [0.0; 2];
        for k in 0..grid.steps() {
            let snap = model.snapshot(grid.midpoint(k), 0.0)?;
            let (long, short) = premium_parts(&snap);
            lhs[0] += dt * long.iter().sum::<f64>();
            lhs[1] += dt * short.iter().sum::<f64>();
        }
        let thresholds = [FEASIBILITY_TOLERANCE; 2];
        return Ok(FeasibilityResult {
            feasible: lhs[0] > thresholds[0] || lhs[1] > thresholds[1],
            lhs_values: lhs,
            standard_errors: [0.0; 2],
            thresholds,
        });
    };
    if mc_paths == 0 {
        return invalid("factor-driven feasibility needs at least one Monte Carlo path");
    }
    let fp = simulate_factor_paths(factor, grid, mc_paths, seed, Purpose::Feasibility);
    let mut per_path = vec![[0.0f64; 2]; mc_paths];
    for k in 0..grid.steps() {
        let t = grid.midpoint(k);
        for (p, acc) in per_path.iter_mut().enumerate() {
            let snap = model.snapshot(t, fp.state(k, p))?;
            let (long, short) = premium_parts(&snap);
            acc[0] += dt * long.iter().sum::<f64>();
            acc[1] += dt * short.iter().sum::<f64>();
        }
    }
    let mut lhs = [0.0; 2];
    let mut se = [0.0; 2];
    for side in 0..2 {
        let samples: Vec<f64> = per_path.iter().map(|a| a[side]).collect();
        let (m, s) = crate::stats::mean_and_se(&samples);
        lhs[side] = m;
        se[side] = s;
    }
    let thresholds = [FEASIBILITY_TOLERANCE.max(3.0 * se[0]), FEASIBILITY_TOLERANCE.max(3.0 * se[1])];
    Ok(FeasibilityResult {
        feasible: lhs[0] > thresholds[0] || lhs[1] > thresholds[1],
        lhs_values: lhs,
        standard_errors: se,
        thresholds,
    })
}
