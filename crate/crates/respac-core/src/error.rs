use thiserror::Error;

/// Errors surfaced by calibration, estimation, and oracle routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid probability vector: {0}")]
    InvalidPmf(String),

    #[error("matrix is not symmetric within tolerance {tol}")]
    NotSymmetric { tol: f64 },

    #[error("matrix is not positive (semi-)definite: min eigenvalue {min_eig}")]
    NotPositiveDefinite { min_eig: f64 },

    #[error("singular noise covariance")]
    SingularCovariance,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("training diverged at step {step}: {detail}")]
    TrainingDiverged { step: usize, detail: String },

    #[error("quadrature did not converge: delta {delta} after bound widening")]
    QuadratureNotConverged { delta: f64 },

    #[error("missing entropy estimate: populate data_entropy before converting budgets")]
    MissingEntropy,
}

pub type Result<T> = std::result::Result<T, Error>;
