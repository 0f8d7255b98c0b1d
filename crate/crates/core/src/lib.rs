//! Limiting dynamics of small-learning-rate SGD near a manifold of minimizers.
//!
//! The crate is organised bottom-up:
//!
//! - [`linalg`]: rank-aware spectral primitives (pseudo-inverse, kernel
//!   projection, Lyapunov inverse, pseudo-log-determinant).
//! - [`loss`]: the [`Loss`] trait and concrete models with analytic
//!   derivatives up to the third-order contraction.
//! - [`flow`]: gradient flow, the projection map `Φ` and manifold checks.
//! - [`phi`]: closed-form `∂Φ` and `∂²Φ[Σ]` on the manifold, plus
//!   finite-difference oracles.
//! - [`dynamics`]: discrete SGD, the limiting SDE and its special flows.
//! - [`olm`]: the overparametrized linear model case study.
//! - [`diagnostics`]: ensemble comparison between SGD and the limit.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod flow;
pub mod linalg;
pub mod loss;
pub mod olm;
pub mod phi;

pub use error::{Error, Result};
pub use flow::{FlowConfig, Integrator, Trajectory};
pub use linalg::SpectralDecomposition;
pub use loss::{canonical_param, olm_generate, DataDistribution, Loss, MotorProblem, OlmProblem, PerSampleLoss};

/// Dense column vector used throughout the crate.
pub type Vector = nalgebra::DVector<f64>;
/// Dense matrix used throughout the crate.
pub type Matrix = nalgebra::DMatrix<f64>;
