//! Exact minimization of the kinked quadratic Hamiltonians.
//!
//! For `P > 0`, a loading vector `Λ` and market coefficients, the two
//! Hamiltonians are
//!
//! ```text
//! H1(P, Λ) = inf_π  P π'σσ'π + 2 [ P((π⁺)'μ_lo − (π⁻)'μ_hi) + π'σΛ ]
//! H2(P, Λ) = inf_π  P π'σσ'π − 2 [ P((π⁺)'μ_lo − (π⁻)'μ_hi) + π'σΛ ]
//! ```
//!
//! with `μ_lo = σθ_lo`, `μ_hi = σθ_hi`. On the closed orthant where the
//! coordinates in `I` are nonnegative and the others nonpositive, the kinked
//! term is linear with slope `μ^I` (`μ_lo` on `I`, `μ_hi` off `I`), so each
//! Hamiltonian is the smallest of `2^d` sign-constrained strictly convex
//! quadratic programs. Each of those is solved exactly by enumerating the
//! faces of the orthant and checking the KKT conditions.
//!
//! `H2` reuses the `H1` kernel with `(μ_lo, μ_hi, Λ)` negated.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{cholesky_solve, cholesky_solve_sub, dot, Matrix};
use crate::model::MarketSnapshot;

/// Largest dimension accepted by default; the enumeration costs `4^d` solves.
pub const DEFAULT_MAX_DIM: usize = 10;

const TIE_REL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Which {
    /// Governs the branch where wealth exceeds the discounted target.
    #[serde(rename = "1")]
    H1,
    /// Governs the branch where wealth falls short of the discounted target.
    #[serde(rename = "2")]
    H2,
}

impl Which {
    pub fn index(self) -> u8 {
        match self {
            Which::H1 => 1,
            Which::H2 => 2,
        }
    }
}

/// Closed orthant `{π_i ≥ 0 for i ∈ I, π_i ≤ 0 otherwise}` as a bit set of `I`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Orthant(pub(crate) u32);

impl Orthant {
    pub fn from_long(indices: &[usize]) -> Self {
        Orthant(indices.iter().fold(0, |m, &i| m | (1 << i)))
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn is_long(self, i: usize) -> bool {
        self.0 & (1 << i) != 0
    }

    /// Sorted zero-based indices of the long coordinates.
    pub fn long_indices(self, dim: usize) -> Vec<usize> {
        (0..dim).filter(|&i| self.is_long(i)).collect()
    }

    /// Lexicographic order of the sorted index lists.
    fn lex_cmp(self, other: Orthant, dim: usize) -> std::cmp::Ordering {
        self.long_indices(dim).cmp(&other.long_indices(dim))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianInput {
    pub p: f64,
    pub lambda: Vec<f64>,
    pub sigma: Matrix,
    pub theta_lower: Vec<f64>,
    pub theta_upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianResult {
    pub value: f64,
    pub argmin: Vec<f64>,
    /// Long coordinates of the selected orthant.
    pub orthant: Vec<usize>,
    /// Other orthants attaining the same value within `1e-12` relative.
    pub ties: Vec<Vec<usize>>,
}

/// Market data prepared for repeated Hamiltonian evaluations.
#[derive(Debug, Clone)]
pub struct Hamiltonian {
    sigma: Matrix,
    cov: Matrix,
    mu_lower: Vec<f64>,
    mu_upper: Vec<f64>,
    max_dim: usize,
}

impl Hamiltonian {
    pub fn new(sigma: &Matrix, theta_lower: &[f64], theta_upper: &[f64]) -> Result<Self> {
        Self::with_cap(sigma, theta_lower, theta_upper, DEFAULT_MAX_DIM)
    }

    pub fn with_cap(sigma: &Matrix, theta_lower: &[f64], theta_upper: &[f64], max_dim: usize) -> Result<Self> {
        let d = sigma.dim();
        if d > max_dim || d > 31 {
            return Err(Error::DimensionCap { dim: d, cap: max_dim.min(31) });
        }
        if theta_lower.len() != d || theta_upper.len() != d {
            return invalid("premium vectors do not match the volatility dimension");
        }
        Ok(Self {
            sigma: sigma.clone(),
            cov: sigma.gram(),
            mu_lower: sigma.mul_vec(theta_lower),
            mu_upper: sigma.mul_vec(theta_upper),
            max_dim,
        })
    }

    pub fn from_snapshot(s: &MarketSnapshot) -> Result<Self> {
        Self::new(&s.sigma, &s.theta_lower, &s.theta_upper)
    }

    pub fn dim(&self) -> usize {
        self.sigma.dim()
    }

    pub fn max_dim(&self) -> usize {
        self.max_dim
    }

    fn slopes(&self, which: Which, orthant: Orthant) -> Vec<f64> {
        let sign = match which {
            Which::H1 => 1.0,
            Which::H2 => -1.0,
        };
        (0..self.dim())
            .map(|i| sign * if orthant.is_long(i) { self.mu_lower[i] } else { self.mu_upper[i] })
            .collect()
    }

    pub fn eval(&self, which: Which, p: f64, lambda: &[f64]) -> Result<HamiltonianResult> {
        let d = self.dim();
        check_p_lambda(p, lambda, d)?;
        let lam: Vec<f64> = match which {
            Which::H1 => lambda.to_vec(),
            Which::H2 => lambda.iter().map(|v| -v).collect(),
        };
        let mut ws = Workspace::new(d);
        let mut per_orthant = Vec::with_capacity(1 << d);
        for bits in 0..(1u32 << d) {
            let o = Orthant(bits);
            let mu = self.slopes(which, o);
            let (v, pi) = solve_orthant(&self.cov, &self.sigma, p, &lam, &mu, o, &mut ws)?;
            per_orthant.push((o, v, pi));
        }
        let best = per_orthant.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
        let tied = |v: f64| v - best <= TIE_REL * best.abs();
        let mut winners: Vec<&(Orthant, f64, Vec<f64>)> = per_orthant.iter().filter(|e| tied(e.1)).collect();
        winners.sort_by(|a, b| a.0.lex_cmp(b.0, d));
        let (sel, value, argmin) = winners[0].clone();
        Ok(HamiltonianResult {
            value,
            argmin,
            orthant: sel.long_indices(d),
            ties: winners[1..].iter().map(|e| e.0.long_indices(d)).collect(),
        })
    }

    /// Orthant-free lower bound
    /// `min_I {−P μ^I'(σσ')⁻¹μ^I − 2 μ^I'(σ')⁻¹Λ} − Λ'Λ/P`
    /// obtained by dropping the sign constraints. It bounds both `H1` and `H2`
    /// from below since the expression is even in `(μ^I, Λ)`.
    pub fn lower_bound(&self, p: f64, lambda: &[f64]) -> Result<f64> {
        let d = self.dim();
        check_p_lambda(p, lambda, d)?;
        let mut best = f64::INFINITY;
        for bits in 0..(1u32 << d) {
            let mu = self.slopes(Which::H1, Orthant(bits));
            let w = cholesky_solve(&self.cov, &mu).ok_or_else(singular)?;
            // (σ')⁻¹ = σ⁻¹' and σ⁻¹ = σ'(σσ')⁻¹, so μ'(σ')⁻¹Λ = (σ'w)'Λ
            let cross = dot(&self.sigma.transpose_mul_vec(&w), lambda);
            best = best.min(-p * dot(&mu, &w) - 2.0 * cross);
        }
        Ok(best - dot(lambda, lambda) / p)
    }
}

fn singular() -> Error {
    Error::Numerical("σσ' is not positive definite".into())
}

fn check_p_lambda(p: f64, lambda: &[f64], d: usize) -> Result<()> {
    if !(p > 0.0 && p.is_finite()) {
        return invalid(format!("P must be positive and finite, got {p}"));
    }
    if lambda.len() != d {
        return invalid(format!("Λ has length {}, expected {d}", lambda.len()));
    }
    Ok(())
}

struct Workspace {
    idx: Vec<usize>,
    rhs: Vec<f64>,
    sol: Vec<f64>,
    chol: Vec<f64>,
    pi: Vec<f64>,
}

impl Workspace {
    fn new(d: usize) -> Self {
        Self { idx: Vec::with_capacity(d), rhs: vec![0.0; d], sol: vec![0.0; d], chol: vec![0.0; d * d], pi: vec![0.0; d] }
    }
}

fn objective(cov: &Matrix, p: f64, b: &[f64], pi: &[f64]) -> f64 {
    let q = cov.mul_vec(pi);
    p * dot(pi, &q) + 2.0 * dot(b, pi)
}

/// Minimizes `P π'Σπ + 2 b'π` with `b = Pμ + σΛ` over the closed orthant.
fn solve_orthant(
    cov: &Matrix,
    sigma: &Matrix,
    p: f64,
    lambda: &[f64],
    mu: &[f64],
    orthant: Orthant,
    ws: &mut Workspace,
) -> Result<(f64, Vec<f64>)> {
    let d = cov.dim();
    let sl = sigma.mul_vec(lambda);
    let b: Vec<f64> = (0..d).map(|i| p * mu[i] + sl[i]).collect();
    let sign = |i: usize| if orthant.is_long(i) { 1.0 } else { -1.0 };
    let scale = 1.0 + b.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let mut kkt_best: Option<(f64, Vec<f64>)> = None;
    let mut feasible_best: Option<(f64, Vec<f64>)> = None;
    for free in 0..(1u32 << d) {
        ws.idx.clear();
        ws.idx.extend((0..d).filter(|i| free & (1 << i) != 0));
        let m = ws.idx.len();
        for (r, &i) in ws.idx.iter().enumerate() {
            ws.rhs[r] = -b[i] / p;
        }
        if m > 0 && !cholesky_solve_sub(cov, &ws.idx, &ws.rhs[..m], &mut ws.sol[..m], &mut ws.chol) {
            return Err(singular());
        }
        ws.pi.iter_mut().for_each(|v| *v = 0.0);
        for (r, &i) in ws.idx.iter().enumerate() {
            ws.pi[i] = ws.sol[r];
        }
        let tol_pi = 1e-12 * (1.0 + ws.pi.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        if ws.idx.iter().any(|&i| sign(i) * ws.pi[i] < -tol_pi) {
            continue;
        }
        // snap roundoff onto the closed orthant
        for &i in &ws.idx {
            if sign(i) * ws.pi[i] < 0.0 {
                ws.pi[i] = 0.0;
            }
        }
        let value = objective(cov, p, &b, &ws.pi);
        let q = cov.mul_vec(&ws.pi);
        let kkt = (0..d)
            .filter(|i| free & (1 << i) == 0)
            .all(|i| sign(i) * (p * q[i] + b[i]) >= -1e-12 * scale);
        let slot = if kkt { &mut kkt_best } else { &mut feasible_best };
        if slot.as_ref().is_none_or(|(v, _)| value < *v) {
            *slot = Some((value, ws.pi.clone()));
        }
    }
    // Strict convexity leaves exactly one KKT point; every candidate is
    // feasible, so the feasible minimum is a safe fallback under roundoff.
    kkt_best
        .or(feasible_best)
        .ok_or_else(|| Error::Numerical("no feasible face in orthant".into()))
}

/// Minimizes `P π'σσ'π + 2[P π'μ^I + π'σΛ]` over the closed orthant `I`.
pub fn orthant_qp_min(p: f64, lambda: &[f64], sigma: &Matrix, mu: &[f64], orthant: Orthant) -> Result<(f64, Vec<f64>)> {
    let d = sigma.dim();
    check_p_lambda(p, lambda, d)?;
    if mu.len() != d {
        return invalid("μ^I has the wrong length");
    }
    if d > 31 {
        return Err(Error::DimensionCap { dim: d, cap: 31 });
    }
    let cov = sigma.gram();
    solve_orthant(&cov, sigma, p, lambda, mu, orthant, &mut Workspace::new(d))
}

fn check_input(input: &HamiltonianInput) -> Result<()> {
    let d = input.sigma.dim();
    if input.theta_lower.iter().zip(&input.theta_upper).any(|(lo, hi)| lo > hi) {
        return invalid("premia must satisfy θ_lo ≤ θ_hi");
    }
    check_p_lambda(input.p, &input.lambda, d)
}

pub fn eval_hamiltonian(which: Which, input: &HamiltonianInput) -> Result<HamiltonianResult> {
    eval_hamiltonian_capped(which, input, DEFAULT_MAX_DIM)
}

pub fn eval_hamiltonian_capped(which: Which, input: &HamiltonianInput, max_dim: usize) -> Result<HamiltonianResult> {
    check_input(input)?;
    Hamiltonian::with_cap(&input.sigma, &input.theta_lower, &input.theta_upper, max_dim)?.eval(
        which,
        input.p,
        &input.lambda,
    )
}

pub fn lower_bound_f(input: &HamiltonianInput) -> Result<f64> {
    check_input(input)?;
    Hamiltonian::new(&input.sigma, &input.theta_lower, &input.theta_upper)?.lower_bound(input.p, &input.lambda)
}

/// Three-branch closed form of `H2` and its minimizer for one asset with
/// `σ > 0`, branching on `Λ/P` against `−θ_lo` and `−θ_hi`.
pub fn closed_form_1d(p: f64, lambda: f64, theta_lower: f64, theta_upper: f64, sigma: f64) -> Result<(f64, f64)> {
    if !(sigma > 0.0) {
        return invalid("closed form requires σ > 0");
    }
    if !(p > 0.0) {
        return invalid("closed form requires P > 0");
    }
    let ratio = lambda / p;
    let branch = |theta: f64| {
        let a = p * theta + lambda;
        (-a * a / p, a / (p * sigma))
    };
    Ok(if ratio >= -theta_lower {
        branch(theta_lower)
    } else if ratio <= -theta_upper {
        branch(theta_upper)
    } else {
        (0.0, 0.0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id2() -> Matrix {
        Matrix::identity(2)
    }

    fn input_1d(p: f64, lambda: f64, sigma: f64, lo: f64, hi: f64) -> HamiltonianInput {
        HamiltonianInput { p, lambda: vec![lambda], sigma: Matrix::scalar(sigma), theta_lower: vec![lo], theta_upper: vec![hi] }
    }

    #[test]
    fn orthant_unconstrained_minimizer_inside() {
        let (v, pi) = orthant_qp_min(1.0, &[0.0, 0.0], &id2(), &[-1.0, 1.0], Orthant::from_long(&[0])).unwrap();
        assert!((v + 2.0).abs() < 1e-15);
        assert_eq!(pi, vec![1.0, -1.0]);
    }

    #[test]
    fn orthant_origin_is_kkt_point() {
        let (v, pi) = orthant_qp_min(1.0, &[0.0, 0.0], &id2(), &[1.0, 1.0], Orthant::from_long(&[0, 1])).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(pi, vec![0.0, 0.0]);
    }

    #[test]
    fn orthant_one_coordinate_clamped() {
        let (v, pi) = orthant_qp_min(1.0, &[0.0, 0.0], &id2(), &[1.0, -1.0], Orthant::from_long(&[0, 1])).unwrap();
        assert!((v + 1.0).abs() < 1e-15);
        assert_eq!(pi, vec![0.0, 1.0]);
    }

    #[test]
    fn h1_single_asset() {
        let r = eval_hamiltonian(Which::H1, &input_1d(1.0, 0.0, 0.2, 0.2, 0.4)).unwrap();
        assert!((r.value + 0.16).abs() < 1e-14);
        assert!((r.argmin[0] + 2.0).abs() < 1e-12);
        assert!(r.orthant.is_empty());
    }

    #[test]
    fn zero_premium_gives_zero() {
        for which in [Which::H1, Which::H2] {
            let r = eval_hamiltonian(which, &input_1d(1.0, 0.0, 0.7, 0.0, 0.0)).unwrap();
            assert_eq!(r.value, 0.0);
            assert_eq!(r.argmin, vec![0.0]);
            // the origin sits on every orthant
            assert_eq!(r.ties.len(), 1);
        }
    }

    #[test]
    fn h2_short_branch() {
        let r = eval_hamiltonian(Which::H2, &input_1d(2.0, -1.0, 0.2, 0.2, 0.4)).unwrap();
        assert!((r.value + 0.02).abs() < 1e-14);
        assert!((r.argmin[0] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn h2_matches_direct_objective() {
        // guards the sign-flip reduction against the raw H2 objective
        let inp = input_1d(1.3, 0.05, 0.3, -0.1, 0.35);
        let r = eval_hamiltonian(Which::H2, &inp).unwrap();
        let raw = |pi: f64| {
            let (pp, pm) = (pi.max(0.0), (-pi).max(0.0));
            1.3 * 0.09 * pi * pi - 2.0 * (1.3 * (pp * 0.3 * -0.1 - pm * 0.3 * 0.35) + pi * 0.3 * 0.05)
        };
        let brute = (-40000..=40000).map(|k| raw(k as f64 * 1e-4)).fold(f64::INFINITY, f64::min);
        assert!((r.value - brute).abs() < 1e-7);
        assert!((raw(r.argmin[0]) - r.value).abs() < 1e-15);
    }

    #[test]
    fn closed_form_branches() {
        let (v, pi) = closed_form_1d(1.0, 0.0, 0.2, 0.4, 0.2).unwrap();
        assert!((v + 0.04).abs() < 1e-15 && (pi - 1.0).abs() < 1e-14);
        assert_eq!(closed_form_1d(1.0, -0.3, 0.2, 0.4, 0.2).unwrap(), (0.0, 0.0));
        let (v, pi) = closed_form_1d(1.0, 0.0, 0.3, 0.3, 0.2).unwrap();
        assert!((v + 0.09).abs() < 1e-15 && (pi - 1.5).abs() < 1e-14);
        assert!(closed_form_1d(1.0, 0.0, 0.3, 0.3, 0.0).is_err());
    }

    #[test]
    fn lower_bound_examples() {
        let f = lower_bound_f(&input_1d(1.0, 0.0, 0.2, 0.2, 0.4)).unwrap();
        assert!((f + 0.16).abs() < 1e-14);
        assert_eq!(lower_bound_f(&input_1d(1.0, 0.0, 0.2, 0.0, 0.0)).unwrap(), 0.0);
    }

    #[test]
    fn dimension_cap_enforced() {
        let n = 4;
        let inp = HamiltonianInput {
            p: 1.0,
            lambda: vec![0.0; n],
            sigma: Matrix::identity(n),
            theta_lower: vec![0.1; n],
            theta_upper: vec![0.2; n],
        };
        assert!(matches!(eval_hamiltonian_capped(Which::H1, &inp, 3), Err(Error::DimensionCap { dim: 4, cap: 3 })));
        assert!(eval_hamiltonian_capped(Which::H1, &inp, 4).is_ok());
    }

    #[test]
    fn tie_break_is_lexicographic() {
        // |θ_lo| = θ_hi makes both one-asset orthants optimal for H1
        let r = eval_hamiltonian(Which::H1, &input_1d(1.0, 0.0, 0.5, -0.3, 0.3)).unwrap();
        assert!((r.value + 0.09).abs() < 1e-14);
        assert!(r.orthant.is_empty());
        assert_eq!(r.ties, vec![vec![0]]);
        assert!(r.argmin[0] < 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(eval_hamiltonian(Which::H1, &input_1d(0.0, 0.0, 0.2, 0.1, 0.2)).is_err());
        assert!(eval_hamiltonian(Which::H1, &input_1d(1.0, 0.0, 0.2, 0.3, 0.2)).is_err());
    }
}
