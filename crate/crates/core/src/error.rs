use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A point lies outside a tabulated range.
    #[error("{value} is outside the tabulated range [{lo}, {hi}]")]
    Range { value: f64, lo: f64, hi: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("matrix is singular or ill-conditioned (condition estimate {condition:e})")]
    Singular { condition: f64 },

    #[error("could not allocate storage for {requested} values")]
    Capacity { requested: usize },

    #[error("adaptive quadrature did not converge (error estimate {estimate:e}, tolerance {tolerance:e})")]
    Quadrature { estimate: f64, tolerance: f64 },

    #[error("grid [{lo}, {hi}] holds only {covered:.9} of the mass; need at least [{need_lo}, {need_hi}]")]
    Coverage {
        lo: f64,
        hi: f64,
        covered: f64,
        need_lo: f64,
        need_hi: f64,
    },

    #[error("Picard iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("mass drifted to {mass} (allowed deviation {allowed:e})")]
    MassDrift { mass: f64, allowed: f64 },

    /// Gronwall hypothesis fails at the given index.
    #[error("hypothesis violated at index {index}: {detail}")]
    Hypothesis { index: usize, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
