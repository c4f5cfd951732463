//! Small built-in models with closed-form answers, used for validation.

use std::sync::Arc;

use crate::error::{IlpError, Result};
use crate::flow::VectorFieldSpec;
use crate::geometry::{Connector, ModelSpec};
use crate::mc::Projector;
use crate::tensor::Tensor3;
use crate::{Matrix, Vector};

/// A model together with its intrinsic vector field and optional
/// simulation projector.
#[derive(Clone)]
pub struct WiredModel {
    pub model: ModelSpec,
    pub vf: VectorFieldSpec,
    pub projector: Option<Arc<Projector>>,
}

impl std::fmt::Debug for WiredModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WiredModel")
            .field("model", &self.model)
            .field("has_projector", &self.projector.is_some())
            .finish()
    }
}

fn positive(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(IlpError::InvalidArgument(format!("{name} must be finite and > 0, got {value}")))
    }
}

/// Ornstein–Uhlenbeck process `dX = −κX dt + s dW` in one dimension.
pub fn scalar_ou(kappa: f64, s: f64) -> Result<WiredModel> {
    if !kappa.is_finite() {
        return Err(IlpError::InvalidArgument(format!("kappa must be finite, got {kappa}")));
    }
    positive("s", s)?;
    let model = ModelSpec::new(
        1,
        move |x| x * -kappa,
        move |_| Matrix::from_element(1, 1, s),
        move |_| Matrix::from_element(1, 1, 1.0 / (s * s)),
    )
    .with_metric_derivative(|_| Tensor3::zeros(1, 1))
    .with_alpha_derivative(|_| Tensor3::zeros(1, 1));
    let vf = VectorFieldSpec::analytic(
        1,
        move |x| x * -kappa,
        move |_| Matrix::from_element(1, 1, -kappa),
        |_, _| Vector::zeros(1),
    );
    Ok(WiredModel {
        model,
        vf,
        projector: None,
    })
}

/// Mean `x₀e^{−κt}` and variance `Σ₀e^{−2κt} + s²(1 − e^{−2κt})/(2κ)` of the
/// scalar OU process.
pub fn scalar_ou_moments(kappa: f64, s: f64, x0: f64, sigma0: f64, t: f64) -> (f64, f64) {
    let decay = (-kappa * t).exp();
    let spread = if kappa == 0.0 {
        t
    } else {
        -(-2.0 * kappa * t).exp_m1() / (2.0 * kappa)
    };
    (x0 * decay, sigma0 * decay * decay + s * s * spread)
}

/// Drift matrix of the default linear-Gaussian model.
pub fn default_linear_drift() -> Matrix {
    Matrix::from_row_slice(2, 2, &[-0.5, 1.0, -1.0, -0.3])
}

/// Noise matrix of the default linear-Gaussian model.
pub fn default_linear_noise() -> Matrix {
    Matrix::from_row_slice(2, 2, &[0.4, 0.0, 0.1, 0.3])
}

/// `dX = AX dt + S dW` with constant `S`.
///
/// The metric is `α⁺ + (I − αα⁺)`, a constant generalized inverse of
/// `α = SSᵀ` that stays positive definite when `α` is singular.
pub fn linear_gaussian(a: Matrix, s: Matrix) -> Result<WiredModel> {
    let p = a.nrows();
    if a.ncols() != p || s.nrows() != p || p == 0 {
        return Err(IlpError::DimensionMismatch {
            context: "linear-gaussian matrices",
            expected: p,
            got: if a.ncols() != p { a.ncols() } else { s.nrows() },
        });
    }
    if !a.iter().chain(s.iter()).all(|v| v.is_finite()) {
        return Err(IlpError::InvalidArgument("linear-gaussian matrices must be finite".into()));
    }
    let alpha = &s * s.transpose();
    let pinv = alpha
        .clone()
        .pseudo_inverse(1e-12 * alpha.amax().max(f64::MIN_POSITIVE))
        .map_err(|e| IlpError::InvalidArgument(e.to_string()))?;
    let g = &pinv + Matrix::identity(p, p) - &alpha * &pinv;
    let g = (&g + g.transpose()) * 0.5;
    let (a1, a2, s1) = (a.clone(), a.clone(), s.clone());
    let model = ModelSpec::new(p, move |x| &a1 * x, move |_| s1.clone(), move |_| g.clone())
        .with_metric_derivative(move |_| Tensor3::zeros(p, p))
        .with_alpha_derivative(move |_| Tensor3::zeros(p, p));
    let vf = VectorFieldSpec::analytic(p, move |x| &a2 * x, move |_| a.clone(), move |_, _| Vector::zeros(p));
    Ok(WiredModel {
        model,
        vf,
        projector: None,
    })
}

/// Planar OU process `dY = −κY dt + s dW` written in polar coordinates
/// `(r, θ)`: `σ = diag(s, s/r)`, drift `(−κr + s²/(2r), 0)`, metric
/// `α⁻¹ = diag(1, r²)/s²`.
///
/// The intrinsic drift is `(−κr, 0)`, and because the Cartesian process is
/// Gaussian with mean `e^{−κt}y₀` its location parameter vanishes.
pub fn polar_demo(kappa: f64, s: f64) -> Result<WiredModel> {
    if !kappa.is_finite() {
        return Err(IlpError::InvalidArgument(format!("kappa must be finite, got {kappa}")));
    }
    positive("s", s)?;
    let s2 = s * s;
    let model = ModelSpec::new(
        2,
        move |x| Vector::from_vec(vec![-kappa * x[0] + s2 / (2.0 * x[0]), 0.0]),
        move |x| Matrix::from_diagonal(&Vector::from_vec(vec![s, s / x[0]])),
        move |x| Matrix::from_diagonal(&Vector::from_vec(vec![1.0 / s2, x[0] * x[0] / s2])),
    )
    .with_metric_derivative(move |x| {
        let dr = Matrix::from_diagonal(&Vector::from_vec(vec![0.0, 2.0 * x[0] / s2]));
        Tensor3::from_slices(vec![dr, Matrix::zeros(2, 2)]).expect("square slices")
    })
    .with_alpha_derivative(move |x| {
        let dr = Matrix::from_diagonal(&Vector::from_vec(vec![0.0, -2.0 * s2 / x[0].powi(3)]));
        Tensor3::from_slices(vec![dr, Matrix::zeros(2, 2)]).expect("square slices")
    });
    let vf = VectorFieldSpec::analytic(
        2,
        move |x| Vector::from_vec(vec![-kappa * x[0], 0.0]),
        move |_| Matrix::from_diagonal(&Vector::from_vec(vec![-kappa, 0.0])),
        |_, _| Vector::zeros(2),
    );
    Ok(WiredModel {
        model,
        vf,
        projector: None,
    })
}

/// `dX = −X² dt + dW` in one dimension, flat metric.
pub fn quadratic_drift() -> WiredModel {
    let model = ModelSpec::new(
        1,
        |x| Vector::from_element(1, -x[0] * x[0]),
        |_| Matrix::identity(1, 1),
        |_| Matrix::identity(1, 1),
    )
    .with_metric_derivative(|_| Tensor3::zeros(1, 1))
    .with_alpha_derivative(|_| Tensor3::zeros(1, 1))
    .with_connector(|x| Connector::zero(x.clone()));
    let vf = VectorFieldSpec::analytic(
        1,
        |x| Vector::from_element(1, -x[0] * x[0]),
        |x| Matrix::from_element(1, 1, -2.0 * x[0]),
        |_, t| Vector::from_element(1, -2.0 * t[(0, 0)]),
    );
    WiredModel {
        model,
        vf,
        projector: None,
    }
}
