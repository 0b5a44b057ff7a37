use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("lattice mismatch: {0}")]
    LatticeMismatch(String),
    #[error("field has {got} entries, lattice has {expected} sites")]
    SizeMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("tolerance {rel_tol:e} unattainable within radius {max_radius} (best certificate {best:e})")]
    ToleranceUnattainable { rel_tol: f64, max_radius: usize, best: f64 },
    #[error("total mass {got} differs from site count {expected}")]
    MassViolation { expected: f64, got: f64 },
    #[error("not enough data for a fit: {0}")]
    InsufficientData(String),
    #[error("singular design: {0}")]
    SingularDesign(String),
    #[error("replicate {index} (seed {seed}) failed: {reason}")]
    ReplicateFailed { index: u64, seed: u64, reason: String },
    #[error("kernel cache: {0}")]
    Cache(String),
}

pub type Result<T> = std::result::Result<T, Error>;
