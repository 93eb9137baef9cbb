use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive semidefinite (eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("matrix is singular or not positive definite (eigenvalue {0:e})")]
    Singular(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("ill-conditioned quadratic form: {0}")]
    IllConditioned(String),
    #[error("root finding failed: {0}")]
    RootFind(String),
    #[error("planning failed: {0}")]
    Planning(String),
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
