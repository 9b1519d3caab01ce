//! Mean–variance portfolio selection under ambiguous drift.
//!
//! The market premium of each asset is only known to lie in an interval
//! `[θ̲, θ̄]`, and short positions earn the upper bound while long positions
//! earn the lower one. Optimal policies come from two stochastic Riccati
//! equations whose generators are the piecewise-quadratic Hamiltonians
//! `H₁, H₂`.

pub mod duality;
pub mod error;
pub mod frontier;
pub mod hamiltonian;
pub mod linalg;
pub mod model;
pub(crate) mod paths;
pub mod policy;
pub mod regression;
pub mod riccati;
pub mod stats;

pub use duality::{
    dual_generator, dual_multiplier, dual_terminal_wealth_check, duality_consistency_check, optimal_dual_control,
    solve_dual_bsde, utility_conjugate, ConsistencyReport, DualSolution, TerminalWealthReport,
};
pub use error::{Error, Result};
pub use frontier::{
    efficient_policy, feasible_strategy, frontier_curve, frontier_variance, lagrange_multiplier, FeasibleStrategy,
    FrontierPoint, FrontierSpec, RiccatiCache, Side,
};
pub use hamiltonian::{
    closed_form_1d, eval_hamiltonian, eval_hamiltonian_capped, lower_bound_f, orthant_qp_min, Hamiltonian,
    HamiltonianInput, HamiltonianResult, Orthant, Which, DEFAULT_MAX_DIM,
};
pub use linalg::Matrix;
pub use model::{
    check_feasibility, discount_factor, validate_model, CoefficientSpec, FactorProcess, FeasibilityResult,
    MarketModel, MarketSnapshot, TimeGrid, ValidationReport, Violation, ViolationKind, FEASIBILITY_TOLERANCE,
};
pub use policy::{
    optimal_cost, optimal_portfolio, simulate_wealth, FeedbackPolicy, Portfolio, PortfolioRule, SimulationConfig,
    SimulationReport,
};
pub use regression::PolyFit;
pub use riccati::{
    evaluate_solution, positivity_floor, solve_riccati, solve_riccati_lsmc, solve_riccati_ode, LsmcConfig,
    Representation, RiccatiPoint, RiccatiSolution,
};
pub use stats::Moments;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
