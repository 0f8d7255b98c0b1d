use thiserror::Error;

use crate::flow::{ManifoldCheck, Trajectory};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    Symmetry { asymmetry: f64 },

    #[error("matrix is not positive semidefinite (eigenvalue {eigenvalue:e})")]
    NotPsd { eigenvalue: f64 },

    #[error("argument outside the operator domain: {0}")]
    Domain(String),

    #[error("data matrix is rank deficient (rank {rank}, expected {expected})")]
    DegenerateData { rank: usize, expected: usize },

    #[error("gradient flow did not converge by t = {t:e} (|grad| = {grad_norm:e})")]
    NonConverged {
        t: f64,
        grad_norm: f64,
        partial: Box<Trajectory>,
    },

    #[error("point is not on the manifold: {0}")]
    NotOnManifold(ManifoldCheck),

    #[error("iterate diverged at step {step} (|x| = {norm:e})")]
    Divergence { step: usize, norm: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("noise model unsupported for this loss: {0}")]
    UnsupportedNoise(&'static str),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerics (divergence, non-convergence) as
    /// opposed to bad inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConverged { .. } | Error::Divergence { .. } | Error::NotOnManifold(_)
        )
    }
}
