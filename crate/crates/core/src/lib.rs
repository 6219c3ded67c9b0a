//! Finite-width fully connected networks against their infinite-width
//! Gaussian-process limits.
//!
//! The crate samples random networks ([`net_sampler`]), computes limit
//! kernels ([`kernel_engine`]), estimates and bounds one- and
//! finite-dimensional distances ([`stein_gauge`]), works with discretized
//! covariance operators ([`operator_lab`]) and runs width sweeps with
//! log-log slope fits ([`experiment_harness`]).

pub use nalgebra;

pub mod config;
pub mod experiment_harness;
pub mod kernel_engine;
pub mod linalg;
pub mod net_sampler;
pub mod nonlinearity;
pub mod operator_lab;
pub mod plot;
pub mod quadrature;
pub mod rng;
pub mod stats;
pub mod stein_gauge;

pub use config::{Idx, InputSet, NetworkConfig};
pub use nonlinearity::Nonlinearity;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("matrix is not symmetric: max asymmetry {asymmetry:e} exceeds {tolerance:e}")]
    Asymmetric { asymmetry: f64, tolerance: f64 },
    #[error("matrix is not positive semidefinite: {0}")]
    NotPsd(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("limit kernel is degenerate at layer {layer}: smallest eigenvalue {min_eigenvalue:e} <= {threshold:e}")]
    Degenerate { layer: usize, min_eigenvalue: f64, threshold: f64 },
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("report schema version {found} does not match supported version {expected}")]
    SchemaMismatch { found: u32, expected: u32 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
