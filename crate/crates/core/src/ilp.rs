//! Covariance propagation and the approximate intrinsic location parameter.
//!
//! Along the flow `x_t` of the intrinsic drift, the noise linearized through
//! the derivative flow `τ` has covariance
//!
//! ```text
//! χ_t = ∫₀ᵗ τ_s^t α(x_s) (τ_s^t)ᵀ ds,        Ξ_t = χ_t + τ_0^t Σ₀ (τ_0^t)ᵀ
//! ```
//!
//! and the ILP of `ψ(X_δ)` in the tangent space at `y_δ = ψ(x_δ)` is
//!
//! ```text
//! ½ { J ∫₀^δ τ_t^δ [D²ξ(x_t)(Ξ_t) − Γ(x_t)(α(x_t))] dt
//!     + D²ψ(x_δ)(Ξ_δ) − J τ_0^δ Γ(x₀)(Σ₀) + Γ̄(y_δ)(J Ξ_δ Jᵀ) }
//! ```
//!
//! with `J = Dψ(x_δ)`. Both integrals are advanced together with the
//! per-step transports, trapezoid style:
//!
//! ```text
//! χ_{i+1} = ½Δt α_{i+1} + τ_i [χ_i + ½Δt α_i] τ_iᵀ
//! m_{i+1} = τ_i [m_i + ½Δt h_i] + ½Δt h_{i+1}
//! ```

use crate::error::{IlpError, Result};
use crate::flow::{FlowGrid, VectorFieldSpec};
use crate::geometry::{alpha, connector, exp_map_with, MapSpec, ModelSpec, DEFAULT_GEODESIC_STEPS};
use crate::linalg::{enforce_psd, symmetrize};
use crate::{Matrix, Vector};

/// Relative threshold below which negative covariance eigenvalues are errors.
pub const PSD_TOLERANCE: f64 = 1e-10;

/// `χ_t` and `Ξ_t` on the grid of a [`FlowGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct CovariancePath {
    pub times: Vec<f64>,
    pub sigma0: Matrix,
    pub chi: Vec<Matrix>,
    pub xi_big: Vec<Matrix>,
}

impl CovariancePath {
    pub fn terminal(&self) -> &Matrix {
        self.xi_big.last().expect("covariance path is non-empty")
    }
}

/// Approximate ILP on the tangent space of the target.
#[derive(Debug, Clone, PartialEq)]
pub struct IlpResult {
    /// ILP vector at `ψ(x_δ)`.
    pub tangent: Vector,
    /// Point of the target reached by the exponential map, once projected.
    pub projected: Option<Vector>,
    /// `ψ(x_δ)`.
    pub base_point: Vector,
    /// `τ_{t_i}^δ [D²ξ(x_{t_i})(Ξ_{t_i}) − Γ(x_{t_i})(α(x_{t_i}))]` per grid point.
    pub integrand_trace: Vec<Vector>,
    /// ILP with `t_i` in place of `δ`, per grid point (the last entry is `tangent`).
    pub series: Vec<Vector>,
    /// `ψ(x_{t_i})` per grid point.
    pub base_series: Vec<Vector>,
}

fn check_same_grid(grid: &FlowGrid, cov: &CovariancePath) -> Result<()> {
    if grid.times.len() != cov.times.len() {
        return Err(IlpError::DimensionMismatch {
            context: "covariance path length",
            expected: grid.times.len(),
            got: cov.times.len(),
        });
    }
    Ok(())
}

/// Propagates `χ` and `Ξ` along the grid.
pub fn covariance_path(model: &ModelSpec, grid: &FlowGrid, sigma0: &Matrix) -> Result<CovariancePath> {
    let p = model.dim();
    if grid.dim() != p {
        return Err(IlpError::DimensionMismatch {
            context: "grid dimension",
            expected: p,
            got: grid.dim(),
        });
    }
    if sigma0.nrows() != p || sigma0.ncols() != p {
        return Err(IlpError::DimensionMismatch {
            context: "initial covariance",
            expected: p,
            got: sigma0.nrows(),
        });
    }
    let sigma0 = enforce_psd(sigma0, PSD_TOLERANCE, 0)?;
    let tau = grid.derivative_flow()?;
    let alphas: Vec<Matrix> = grid.points.iter().map(|x| alpha(model, x)).collect();

    let n = grid.steps();
    let mut chi = Vec::with_capacity(n + 1);
    chi.push(Matrix::zeros(p, p));
    for i in 0..n {
        let half = 0.5 * (grid.times[i + 1] - grid.times[i]);
        let inner = &chi[i] + &alphas[i] * half;
        let next = &alphas[i + 1] * half + &tau.step[i] * inner * tau.step[i].transpose();
        if !next.iter().all(|v| v.is_finite()) {
            return Err(IlpError::NonFiniteState {
                context: "covariance propagation",
                step: i + 1,
            });
        }
        chi.push(enforce_psd(&next, PSD_TOLERANCE, i + 1)?);
    }
    let xi_big = chi
        .iter()
        .zip(&tau.from_start)
        .enumerate()
        .map(|(i, (c, t))| enforce_psd(&(c + t * &sigma0 * t.transpose()), PSD_TOLERANCE, i))
        .collect::<Result<Vec<_>>>()?;

    Ok(CovariancePath {
        times: grid.times.clone(),
        sigma0,
        chi,
        xi_big,
    })
}

/// Integrand `h_i = D²ξ(x_i)(Ξ_i) − Γ(x_i)(α(x_i))` at every grid point.
fn integrands(model: &ModelSpec, vf: &VectorFieldSpec, grid: &FlowGrid, cov: &CovariancePath) -> Result<Vec<Vector>> {
    grid.points
        .iter()
        .zip(&cov.xi_big)
        .map(|(x, xi_t)| {
            let curvature = vf.second_apply(x, xi_t)?;
            let gamma = connector(model, x)?;
            Ok(curvature - gamma.apply(&alpha(model, x))?)
        })
        .collect()
}

/// `m_i = ∫₀^{t_i} τ_t^{t_i} h_t dt` by the coupled trapezoid recursion.
fn transported_integral(grid: &FlowGrid, h: &[Vector]) -> Result<Vec<Vector>> {
    let tau = grid.derivative_flow()?;
    let mut m = Vec::with_capacity(h.len());
    m.push(Vector::zeros(grid.dim()));
    for i in 0..grid.steps() {
        let half = 0.5 * (grid.times[i + 1] - grid.times[i]);
        let next = &tau.step[i] * (&m[i] + &h[i] * half) + &h[i + 1] * half;
        if !next.iter().all(|v| v.is_finite()) {
            return Err(IlpError::NonFiniteState {
                context: "location integral",
                step: i + 1,
            });
        }
        m.push(next);
    }
    Ok(m)
}

/// Tangent-space ILP of `ψ(X_δ)` for a general map.
pub fn ilp_tangent(
    model: &ModelSpec,
    vf: &VectorFieldSpec,
    mapspec: &MapSpec,
    grid: &FlowGrid,
    cov: &CovariancePath,
) -> Result<IlpResult> {
    check_same_grid(grid, cov)?;
    let p = model.dim();
    if mapspec.dim_p() != p || vf.dim() != p {
        return Err(IlpError::DimensionMismatch {
            context: "map source dimension",
            expected: p,
            got: if mapspec.dim_p() != p { mapspec.dim_p() } else { vf.dim() },
        });
    }
    let tau = grid.derivative_flow()?;
    let h = integrands(model, vf, grid, cov)?;
    let m = transported_integral(grid, &h)?;
    let initial_correction = connector(model, &grid.points[0])?.apply(&cov.sigma0)?;

    let mut series = Vec::with_capacity(h.len());
    let mut base_series = Vec::with_capacity(h.len());
    for (i, x) in grid.points.iter().enumerate() {
        let j = mapspec.jacobian(x);
        let y = mapspec.psi(x);
        let xi_t = &cov.xi_big[i];
        let pushed = &j * xi_t * j.transpose();
        let total = &j * &m[i] + mapspec.hessian(x).contract(xi_t)?
            - &j * (&tau.from_start[i] * &initial_correction)
            + mapspec.target_connector(&y)?.contract(&pushed)?;
        if !total.iter().all(|v| v.is_finite()) {
            return Err(IlpError::NonFiniteState {
                context: "location parameter",
                step: i,
            });
        }
        series.push(total * 0.5);
        base_series.push(y);
    }
    let integrand_trace = h.iter().zip(&tau.to_end).map(|(hi, t)| t * hi).collect();
    Ok(IlpResult {
        tangent: series.last().cloned().expect("non-empty grid"),
        projected: None,
        base_point: base_series.last().cloned().expect("non-empty grid"),
        integrand_trace,
        series,
        base_series,
    })
}

/// ILP of `X_δ` itself, target connector equal to the model's connector.
pub fn ilp_identity_case(
    model: &ModelSpec,
    vf: &VectorFieldSpec,
    grid: &FlowGrid,
    cov: &CovariancePath,
) -> Result<IlpResult> {
    check_same_grid(grid, cov)?;
    let tau = grid.derivative_flow()?;
    let h = integrands(model, vf, grid, cov)?;
    let m = transported_integral(grid, &h)?;
    let initial_correction = connector(model, &grid.points[0])?.apply(&cov.sigma0)?;
    let series = grid
        .points
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let terminal = connector(model, x)?.apply(&cov.xi_big[i])?;
            Ok((&m[i] - &tau.from_start[i] * &initial_correction + terminal) * 0.5)
        })
        .collect::<Result<Vec<_>>>()?;
    let integrand_trace = h.iter().zip(&tau.to_end).map(|(hi, t)| t * hi).collect();
    Ok(IlpResult {
        tangent: series.last().cloned().expect("non-empty grid"),
        projected: None,
        base_point: grid.endpoint().clone(),
        integrand_trace,
        series,
        base_series: grid.points.clone(),
    })
}

/// Projects a tangent ILP onto the target with the exponential map of the
/// target connector.
pub fn ilp_project(mapspec: &MapSpec, result: &IlpResult, steps: usize) -> Result<Vector> {
    project_tangent(mapspec, &result.base_point, &result.tangent, steps)
}

/// [`ilp_project`] applied at every grid time of the series.
pub fn ilp_project_series(mapspec: &MapSpec, result: &IlpResult, steps: usize) -> Result<Vec<Vector>> {
    result
        .base_series
        .iter()
        .zip(&result.series)
        .map(|(y, v)| project_tangent(mapspec, y, v, steps))
        .collect()
}

fn project_tangent(mapspec: &MapSpec, base: &Vector, tangent: &Vector, steps: usize) -> Result<Vector> {
    if mapspec.is_flat_target() {
        return Ok(base + tangent);
    }
    exp_map_with(&|y: &Vector| mapspec.target_connector(y), base, tangent, steps)
}

/// Convenience pipeline: covariance, tangent ILP and projection in one call.
pub fn ilp_full(
    model: &ModelSpec,
    vf: &VectorFieldSpec,
    mapspec: &MapSpec,
    grid: &FlowGrid,
    sigma0: &Matrix,
) -> Result<(CovariancePath, IlpResult)> {
    let cov = covariance_path(model, grid, sigma0)?;
    let mut result = ilp_tangent(model, vf, mapspec, grid, &cov)?;
    result.projected = Some(ilp_project(mapspec, &result, DEFAULT_GEODESIC_STEPS)?);
    Ok((cov, result))
}

/// Post-hoc trapezoid of a stored integrand trace, `Σ wᵢ τ_{t_i}^δ hᵢ`.
pub fn trapezoid_of_trace(grid: &FlowGrid, trace: &[Vector]) -> Vector {
    let n = grid.steps();
    let mut acc = Vector::zeros(grid.dim());
    for i in 0..n {
        let half = 0.5 * (grid.times[i + 1] - grid.times[i]);
        acc += (&trace[i] + &trace[i + 1]) * half;
    }
    acc
}

/// Initial-space covariance `Π_t = Σ₀ + ∫₀ᵗ τ_s^0 α(x_s) (τ_s^0)ᵀ ds` by its
/// own trapezoid, with `τ_s^0 = (τ_0^s)⁻¹`.
pub fn pullback_covariance(model: &ModelSpec, grid: &FlowGrid, sigma0: &Matrix) -> Result<Vec<Matrix>> {
    let tau = grid.derivative_flow()?;
    let pulled = tau
        .from_start
        .iter()
        .zip(&grid.points)
        .enumerate()
        .map(|(i, (t, x))| {
            let inv = t.clone().try_inverse().ok_or(IlpError::NonFiniteState {
                context: "inverse transport",
                step: i,
            })?;
            Ok(&inv * alpha(model, x) * inv.transpose())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut pi = Vec::with_capacity(pulled.len());
    pi.push(symmetrize(sigma0));
    for i in 0..grid.steps() {
        let half = 0.5 * (grid.times[i + 1] - grid.times[i]);
        let next = &pi[i] + (&pulled[i] + &pulled[i + 1]) * half;
        pi.push(next);
    }
    Ok(pi)
}

/// `max_t ‖τ_0^t Π_t (τ_0^t)ᵀ − Ξ_t‖_F / max(1, ‖Ξ_t‖_F)`.
pub fn conjugation_residual(grid: &FlowGrid, cov: &CovariancePath, pi: &[Matrix]) -> Result<f64> {
    let tau = grid.derivative_flow()?;
    Ok(tau
        .from_start
        .iter()
        .zip(pi)
        .zip(&cov.xi_big)
        .map(|((t, p), x)| (t * p * t.transpose() - x).norm() / x.norm().max(1.0))
        .fold(0.0, f64::max))
}

/// Largest forward-difference residual of `dΞ/dt = α + DξΞ + ΞDξᵀ` over the grid.
pub fn lyapunov_residual(model: &ModelSpec, grid: &FlowGrid, cov: &CovariancePath) -> Result<f64> {
    let tau = grid.derivative_flow()?;
    let mut worst: f64 = 0.0;
    for i in 0..grid.steps() {
        let h = grid.times[i + 1] - grid.times[i];
        let a = &tau.jacobians[i];
        let xi_t = &cov.xi_big[i];
        let slope = (&cov.xi_big[i + 1] - xi_t) / h;
        let rhs = alpha(model, &grid.points[i]) + a * xi_t + xi_t * a.transpose();
        worst = worst.max((slope - rhs).norm());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::flow_with_derivative;

    fn constant_noise_model(p: usize, scale: f64) -> (ModelSpec, VectorFieldSpec) {
        let model = ModelSpec::new(
            p,
            move |_| Vector::zeros(p),
            move |_| Matrix::identity(p, p) * scale,
            move |_| Matrix::identity(p, p) / (scale * scale),
        );
        let vf = VectorFieldSpec::analytic(p, move |_| Vector::zeros(p), move |_| Matrix::zeros(p, p), move |_, _| Vector::zeros(p));
        (model, vf)
    }

    #[test]
    fn zero_noise_zero_covariance() {
        let (model, vf) = constant_noise_model(2, 0.0);
        let model = model.with_diffusion(|_| Matrix::zeros(2, 2));
        let grid = flow_with_derivative(&vf, &Vector::zeros(2), 1.0, 10).unwrap();
        let cov = covariance_path(&model, &grid, &Matrix::zeros(2, 2)).unwrap();
        assert!(cov.chi.iter().chain(&cov.xi_big).all(|m| m.amax() == 0.0));
    }

    #[test]
    fn constant_noise_without_drift_grows_linearly() {
        let (model, vf) = constant_noise_model(2, 0.5);
        let grid = flow_with_derivative(&vf, &Vector::zeros(2), 2.0, 8).unwrap();
        let cov = covariance_path(&model, &grid, &Matrix::zeros(2, 2)).unwrap();
        for (t, chi) in grid.times.iter().zip(&cov.chi) {
            let expected = Matrix::identity(2, 2) * (0.25 * t);
            assert!((chi - expected).amax() < 1e-15);
        }
        assert_eq!(cov.chi[0], Matrix::zeros(2, 2));
    }

    #[test]
    fn initial_covariance_is_xi_at_zero() {
        let (model, vf) = constant_noise_model(2, 1.0);
        let grid = flow_with_derivative(&vf, &Vector::zeros(2), 1.0, 4).unwrap();
        let s0 = Matrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let cov = covariance_path(&model, &grid, &s0).unwrap();
        assert_eq!(cov.xi_big[0], s0);
    }

    #[test]
    fn indefinite_initial_covariance_is_rejected() {
        let (model, vf) = constant_noise_model(2, 1.0);
        let grid = flow_with_derivative(&vf, &Vector::zeros(2), 1.0, 4).unwrap();
        let bad = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            covariance_path(&model, &grid, &bad),
            Err(IlpError::NotPositiveSemiDefinite { .. })
        ));
    }

    #[test]
    fn missing_derivative_flow_is_an_error() {
        let (model, vf) = constant_noise_model(1, 1.0);
        let grid = crate::flow::integrate_flow(&vf, &Vector::zeros(1), 1.0, 3).unwrap();
        assert!(covariance_path(&model, &grid, &Matrix::zeros(1, 1)).is_err());
    }

    #[test]
    fn flat_linear_case_has_zero_tangent_and_maps_check_dimensions() {
        let (model, vf) = constant_noise_model(3, 0.7);
        let grid = flow_with_derivative(&vf, &Vector::from_vec(vec![1.0, 2.0, 3.0]), 1.0, 5).unwrap();
        let s0 = Matrix::identity(3, 3) * 0.1;
        let (_, r) = ilp_full(&model, &vf, &MapSpec::inclusion(3), &grid, &s0).unwrap();
        assert_eq!(r.tangent, Vector::zeros(3));
        assert_eq!(r.projected.unwrap(), grid.endpoint().clone());

        let cov = covariance_path(&model, &grid, &s0).unwrap();
        assert!(matches!(
            ilp_tangent(&model, &vf, &MapSpec::inclusion(2), &grid, &cov),
            Err(IlpError::DimensionMismatch { .. })
        ));
    }
}
