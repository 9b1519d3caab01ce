use thiserror::Error;

/// Failure modes of the solvers.
///
/// Every variant maps onto a stable machine-readable reason via
/// [`Error::reason`], which the command-line front end embeds in its reports.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("malformed coefficient: {0}")]
    MalformedCoefficient(String),

    #[error("model is infeasible: {0}")]
    Infeasible(String),

    #[error("degenerate dual: {0}")]
    DegenerateDual(String),

    #[error("dimension {dim} exceeds the configured cap {cap}")]
    DimensionCap { dim: usize, cap: usize },

    #[error("rank-deficient regression at node {node}")]
    RankDeficient { node: usize },

    #[error("clamping fraction {fraction:.4} exceeds the allowed {limit:.4}")]
    ClampingOverflow { fraction: f64, limit: f64 },

    #[error("non-positive Riccati value {value} at node {node}; refine the grid")]
    NonPositive { node: usize, value: f64 },

    #[error("non-finite state on path {path} at node {node}")]
    Explosion { path: usize, node: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),
}

impl Error {
    pub fn reason(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::MalformedCoefficient(_) => "malformed_coefficient",
            Error::Infeasible(_) => "infeasible",
            Error::DegenerateDual(_) => "degenerate_dual",
            Error::DimensionCap { .. } => "dimension_cap",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::ClampingOverflow { .. } => "clamping_overflow",
            Error::NonPositive { .. } => "non_positive",
            Error::Explosion { .. } => "explosion",
            Error::Numerical(_) => "numerical_failure",
            Error::GridMismatch(_) => "grid_mismatch",
        }
    }

    /// True for failures of the numerical machinery, as opposed to bad input
    /// or an infeasible market.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient { .. }
                | Error::ClampingOverflow { .. }
                | Error::NonPositive { .. }
                | Error::Explosion { .. }
                | Error::Numerical(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
