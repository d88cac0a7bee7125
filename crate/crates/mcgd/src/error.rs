use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("transition matrix is not square ({rows}x{cols})")]
    NonSquare { rows: usize, cols: usize },
    #[error("transition matrix must have at least one state")]
    EmptyMatrix,
    #[error("negative entry {value} at ({row}, {col})")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("row {row} sums to {sum}, expected 1")]
    RowSumViolation { row: usize, sum: f64 },
    #[error("state index {index} out of range for {size} states")]
    StateOutOfRange { index: usize, size: usize },
    #[error("chain is not irreducible and aperiodic")]
    NotErgodic,
    #[error("no convergence: {0}")]
    NoConvergence(String),
    #[error("eigenvalue solver failed: {0}")]
    EigSolverFailure(String),
    #[error("matrix is not symmetric")]
    NotSymmetric,
    #[error("eigenvector matrix is ill-conditioned (condition estimate {condition:e})")]
    Defective { condition: f64 },
    #[error("deviation only fell to {last:e} by k = {k_max}")]
    InsufficientDecay { k_max: usize, last: f64 },
    #[error("could not draw a connected graph in {attempts} attempts")]
    ConnectivityTimeout { attempts: usize },
    #[error("could not place the requested cycles in {attempts} attempts")]
    CycleSearchTimeout { attempts: usize },
    #[error("row {0} of the lifted weight matrix is zero")]
    ZeroRow(usize),
    #[error("objective has no components")]
    EmptyComponents,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("precondition violated: {0}")]
    PreconditionViolation(String),
    #[error("non-finite iterate at k = {k}")]
    NonFiniteIterate { k: usize },
    #[error("need at least {needed} points, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("series contains non-positive values")]
    NonPositiveValues,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
