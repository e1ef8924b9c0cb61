//! Randomized-time Euler-Maruyama simulation for additive-noise SDEs with
//! bounded, possibly discontinuous drift, together with the density
//! estimation machinery used to measure its total-variation error.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conv;
pub mod convergence;
pub mod error;
pub mod exact;
pub mod experiment;
pub mod grid;
pub mod kde;
pub mod lamperti;
pub mod metrics;
pub mod mild;
pub mod model;
pub mod quadrature;
pub mod sampler;
pub mod special;

pub use error::{Error, Result};
pub use grid::DensityGrid;
pub use lamperti::{lamperti_drift, LampertiTransform};
pub use model::{reduce_constant_noise, DriftConfig, DriftKind, DriftSpec, InitialState, SdeProblem};
