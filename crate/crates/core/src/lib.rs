//! Approximate intrinsic location parameter (ILP) of a diffusion process.
//!
//! A diffusion `dX = b(X) dt + σ(X) dW` on a manifold with a single global
//! chart has a coordinate-invariant measure of location: the initial value
//! of a martingale (with respect to a connection on the target manifold)
//! that terminates at `ψ(X_δ)`. This crate computes its second-order
//! approximation from the deterministic flow of the intrinsic drift, the
//! derivative flow of that drift, and the propagated covariance, then
//! checks it against Monte Carlo simulation.
//!
//! Layout:
//!
//! - [`geometry`]: diffusion variance `α = σσᵀ`, connectors from a
//!   generalized-inverse metric, the sub-Riemannian splitting, the geodesic
//!   exponential map and a few auxiliary tensors.
//! - [`flow`]: the intrinsic vector field `ξ`, its flow and derivative flow.
//! - [`ilp`]: covariance propagation and the ILP itself.
//! - [`mc`]: Euler–Maruyama simulation, Monte Carlo summaries and the
//!   Gaussian variation-process oracle.
//! - [`tracking`]: the constant-speed target-tracking model on `TS²`.
//! - [`models`]: small built-in models used for validation.

pub mod error;
mod fd;
pub mod flow;
pub mod geometry;
pub mod ilp;
pub mod linalg;
pub mod mc;
pub mod models;
pub mod tensor;
pub mod tracking;

pub use error::{IlpError, Result};
pub use flow::{FlowGrid, VectorFieldSpec};
pub use geometry::{Connector, MapSpec, ModelSpec, Splitting};
pub use ilp::{CovariancePath, IlpResult};
pub use mc::{McSummary, RngPolicy};
pub use tensor::Tensor3;

/// Column vector type used throughout.
pub type Vector = nalgebra::DVector<f64>;
/// Dense matrix type used throughout.
pub type Matrix = nalgebra::DMatrix<f64>;
