use thiserror::Error;

/// Errors raised by the numerical pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum IlpError {
    #[error("metric is not invertible at the query point (smallest pivot {pivot:e})")]
    SingularMetric { pivot: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("no clear rank gap in the diffusion variance (ratio {ratio:e} at rank {rank})")]
    RankDeficiencyAmbiguous { rank: usize, ratio: f64 },

    #[error("geodesic left the chart (non-finite iterate at step {step})")]
    ChartEscape { step: usize },

    #[error("non-finite state in {context} at step {step}")]
    NonFiniteState { context: &'static str, step: usize },

    #[error("covariance lost positive semi-definiteness at step {step} (min eigenvalue {min_eigenvalue:e}, trace {trace:e})")]
    NotPositiveSemiDefinite {
        step: usize,
        min_eigenvalue: f64,
        trace: f64,
    },

    #[error("velocity vector is zero")]
    ZeroVelocity,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, IlpError>;
