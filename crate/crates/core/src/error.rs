use thiserror::Error;

/// Errors raised by the numerical layers (series algebra, cohomology
/// solver, model evaluation, quasi-Newton iteration, certifier).
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("series is not Hermitian-symmetric (defect {defect:e})")]
    SymmetryViolation { defect: f64 },

    #[error("grid with {points} points per axis cannot resolve the requested cutoff {cutoff}")]
    GridTooCoarse { points: usize, cutoff: usize },

    #[error("aliasing budget exceeded: discarded tail mass {tail:e} above tolerance {tolerance:e}")]
    AliasingBudgetExceeded { tail: f64, tolerance: f64 },

    #[error("pointwise inverse is near-singular: min |f| = {min_abs:e} below floor {floor:e}")]
    NearSingular { min_abs: f64, floor: f64 },

    #[error("frequency is resonant at k = {k:?}: ω α·k lies in 2πℤ to machine precision")]
    DegenerateFrequency { k: Vec<i64> },

    #[error("right-hand side must have zero average, found {average:e}")]
    NonzeroAverage { average: f64 },

    #[error("small divisor {divisor:e} at k = {k:?} is below the floor {floor:e}")]
    ResonantMode { k: Vec<i64>, divisor: f64, floor: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("composition domain exceeded: accumulated correction {used:e} beyond ι/4 = {budget:e}")]
    CompositionDomainExceeded { used: f64, budget: f64 },

    #[error("Neumann series diverged after {terms} terms (last term norm {last_norm:e})")]
    NeumannDivergence { terms: usize, last_norm: f64 },

    #[error("non-degeneracy lost: {0}")]
    NondegeneracyLost(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("need at least 3 residuals above the floor, have {available}")]
    InsufficientHistory { available: usize },

    #[error("{quantity}: recomputed value {recomputed:e} exceeds predicted bound {predicted:e}")]
    BoundViolated {
        quantity: String,
        recomputed: f64,
        predicted: f64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Short machine-friendly tag, used in CSV and report output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::SymmetryViolation { .. } => "SymmetryViolation",
            Error::GridTooCoarse { .. } => "GridTooCoarse",
            Error::AliasingBudgetExceeded { .. } => "AliasingBudgetExceeded",
            Error::NearSingular { .. } => "NearSingular",
            Error::DegenerateFrequency { .. } => "DegenerateFrequency",
            Error::NonzeroAverage { .. } => "NonzeroAverage",
            Error::ResonantMode { .. } => "ResonantMode",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::CompositionDomainExceeded { .. } => "CompositionDomainExceeded",
            Error::NeumannDivergence { .. } => "NeumannDivergence",
            Error::NondegeneracyLost(_) => "NondegeneracyLost",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::InsufficientHistory { .. } => "InsufficientHistory",
            Error::BoundViolated { .. } => "BoundViolated",
        }
    }
}
