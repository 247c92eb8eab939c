use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("matrix is not symmetric (asymmetry {asymmetry:e}, norm {norm:e})")]
    Asymmetric { asymmetry: f64, norm: f64 },
    #[error("singular linear system")]
    Singular,
    #[error("eigenvalue iteration did not converge after {iterations} iterations ({found} of {dim} eigenvalues found)")]
    NoConvergence {
        iterations: usize,
        found: usize,
        dim: usize,
    },
}
