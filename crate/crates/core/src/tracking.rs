//! Constant-speed target tracking on the tangent bundle of a sphere.
//!
//! The state is `x = (v, a) ∈ R⁶` with velocity `v`, acceleration `a ⊥ v`
//! and `‖v‖` fixed. The motion model is
//!
//! ```text
//! dV = A dt
//! dA = −ρ V dt − λ P(V) A dt + γ P(V) dW
//! ```
//!
//! with `P(v) = I − vvᵀ/‖v‖²` and `ρ = ‖a‖²/‖v‖²`, which keeps `V·A = 0`.
//! The metric `γ⁻² I₆` is a generalized inverse of the degenerate diffusion
//! variance, its connector annihilates that variance, and so the drift is
//! already the intrinsic vector field.

use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{IlpError, Result};
use crate::flow::{flow_with_derivative, VectorFieldSpec};
use crate::geometry::{Connector, ModelSpec};
use crate::ilp::{covariance_path, IlpResult};
use crate::mc::Projector;
use crate::tensor::Tensor3;
use crate::{Matrix, Vector};

/// Velocity and acceleration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TS2State {
    pub v: Vector3<f64>,
    pub a: Vector3<f64>,
}

impl TS2State {
    pub fn new(v: Vector3<f64>, a: Vector3<f64>) -> Self {
        Self { v, a }
    }

    /// Reads `(v, a)` from the first six entries of `x`.
    pub fn from_vector(x: &Vector) -> Result<Self> {
        if x.len() != 6 {
            return Err(IlpError::DimensionMismatch {
                context: "tracking state",
                expected: 6,
                got: x.len(),
            });
        }
        Ok(Self {
            v: Vector3::new(x[0], x[1], x[2]),
            a: Vector3::new(x[3], x[4], x[5]),
        })
    }

    pub fn to_vector(&self) -> Vector {
        Vector::from_iterator(6, self.v.iter().chain(self.a.iter()).copied())
    }

    fn speed_sq(&self) -> Result<f64> {
        let s = self.v.norm_squared();
        if s > 0.0 && s.is_finite() {
            Ok(s)
        } else {
            Err(IlpError::ZeroVelocity)
        }
    }
}

/// Damping `λ`, noise intensity `γ` and the fixed speed `‖v‖`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingParams {
    pub lambda_damping: f64,
    pub gamma_noise: f64,
    pub speed: f64,
}

impl TrackingParams {
    pub fn new(lambda_damping: f64, gamma_noise: f64, speed: f64) -> Result<Self> {
        let p = Self {
            lambda_damping,
            gamma_noise,
            speed,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_damping >= 0.0 && self.lambda_damping.is_finite()) {
            return Err(IlpError::InvalidArgument(format!("lambda must be finite and >= 0, got {}", self.lambda_damping)));
        }
        if !(self.gamma_noise >= 0.0 && self.gamma_noise.is_finite()) {
            return Err(IlpError::InvalidArgument(format!("gamma must be finite and >= 0, got {}", self.gamma_noise)));
        }
        if !(self.speed > 0.0 && self.speed.is_finite()) {
            return Err(IlpError::InvalidArgument(format!("speed must be finite and > 0, got {}", self.speed)));
        }
        Ok(())
    }
}

/// `P(v) = I − vvᵀ/‖v‖²`.
pub fn proj_perp(v: &Vector3<f64>) -> Result<Matrix3<f64>> {
    let s = v.norm_squared();
    if !(s > 0.0 && s.is_finite()) {
        return Err(IlpError::ZeroVelocity);
    }
    Ok(Matrix3::identity() - v * v.transpose() / s)
}

/// `ρ = ‖a‖²/‖v‖²`.
pub fn rho(x: &TS2State) -> Result<f64> {
    Ok(x.a.norm_squared() / x.speed_sq()?)
}

/// `ξ(x) = (a, −ρ v − λ P(v) a)`.
pub fn xi_tracking(x: &TS2State, p: &TrackingParams) -> Result<Vector> {
    let r = rho(x)?;
    let lower = -x.v * r - proj_perp(&x.v)? * x.a * p.lambda_damping;
    Ok(TS2State::new(x.a, lower).to_vector())
}

/// `Dξ(x) = [0, I; λQ − ρI, −λP − 2Q]` with `Q = v aᵀ/‖v‖²`, valid for
/// perturbations tangent to the constraints.
pub fn dxi_tracking(x: &TS2State, p: &TrackingParams) -> Result<Matrix> {
    let s = x.speed_sq()?;
    let q = x.v * x.a.transpose() / s;
    let r = rho(x)?;
    let pm = proj_perp(&x.v)?;
    let lower_left = q * p.lambda_damping - Matrix3::identity() * r;
    let lower_right = -pm * p.lambda_damping - q * 2.0;
    let mut d = Matrix::zeros(6, 6);
    d.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
    d.fixed_view_mut::<3, 3>(3, 0).copy_from(&lower_left);
    d.fixed_view_mut::<3, 3>(3, 3).copy_from(&lower_right);
    Ok(d)
}

fn blocks(chi: &Matrix) -> (Matrix3<f64>, Matrix3<f64>, Matrix3<f64>) {
    let va: Matrix3<f64> = chi.fixed_view::<3, 3>(0, 3).into_owned();
    let av: Matrix3<f64> = chi.fixed_view::<3, 3>(3, 0).into_owned();
    let aa: Matrix3<f64> = chi.fixed_view::<3, 3>(3, 3).into_owned();
    (va, av, aa)
}

/// `Tr(χ_aa) v + (χ_va + χ_avᵀ) a`, the common factor of the second
/// derivative and of the tracking integrand.
///
/// `χ_va` is the velocity-row, acceleration-column block. For symmetric `χ`
/// the second term is `2 χ_va a`, the contraction of the rank-one
/// polarization `B(ζ, ζ) = ‖ζ_a‖² v + 2 (ζ_a·a) ζ_v`.
fn curvature_core(x: &TS2State, chi: &Matrix) -> Result<Vector3<f64>> {
    if chi.nrows() != 6 || chi.ncols() != 6 {
        return Err(IlpError::DimensionMismatch {
            context: "tracking covariance",
            expected: 6,
            got: chi.nrows(),
        });
    }
    let (va, av, aa) = blocks(chi);
    Ok(x.v * aa.trace() + (va + av.transpose()) * x.a)
}

/// `D²ξ(x)(χ) = −2/‖v‖² (0, Tr(χ_aa) v + (χ_va + χ_avᵀ) a)`.
pub fn d2xi_apply_tracking(x: &TS2State, chi: &Matrix) -> Result<Vector> {
    let s = x.speed_sq()?;
    let lower = curvature_core(x, chi)? * (-2.0 / s);
    Ok(TS2State::new(Vector3::zeros(), lower).to_vector())
}

/// Full Jacobian of the drift as a map on `R⁶`, without using the
/// constraints. On the constraint set it differs from [`dxi_tracking`] by
/// `2ρ vvᵀ/‖v‖²` in the lower-left block, which vanishes on tangent vectors.
pub fn dxi_ambient(x: &TS2State, p: &TrackingParams) -> Result<Matrix> {
    let s = x.speed_sq()?;
    let r = rho(x)?;
    let c = x.v.dot(&x.a) / s;
    let lam = p.lambda_damping;
    let vvt = x.v * x.v.transpose();
    let lower_left = vvt * (2.0 * r / s) - Matrix3::identity() * r
        + x.v * (x.a - x.v * (2.0 * c)).transpose() * (lam / s)
        + Matrix3::identity() * (lam * c);
    let lower_right = -(x.v * x.a.transpose()) * (2.0 / s) - (Matrix3::identity() - vvt / s) * lam;
    let mut d = Matrix::zeros(6, 6);
    d.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
    d.fixed_view_mut::<3, 3>(3, 0).copy_from(&lower_left);
    d.fixed_view_mut::<3, 3>(3, 3).copy_from(&lower_right);
    Ok(d)
}

/// Second derivative of `f = n/s` contracted with `χ`, given the gradients
/// and Hessian contractions of numerator and denominator.
fn quotient_second(n: f64, s: f64, gn: &Vector, gs: &Vector, hn: f64, hs: f64, chi: &Matrix) -> f64 {
    hn / s - 2.0 * gn.dot(&(chi * gs)) / (s * s) - n * hs / (s * s) + 2.0 * n * gs.dot(&(chi * gs)) / (s * s * s)
}

/// Full `D²ξ(x)(χ)` of the drift as a map on `R⁶`, valid for any symmetric
/// `χ` and any `x` with `v ≠ 0`.
///
/// With `ρ = N/s`, `c = M/s`, `N = ‖a‖²`, `M = v·a`, `s = ‖v‖²`, the lower
/// block is `−ρv − λa + λcv`, whose second derivative is
/// `−D²ρ(χ) v − 2(χ∇ρ)_v + λ D²c(χ) v + 2λ(χ∇c)_v`.
pub fn d2xi_apply_ambient(x: &TS2State, p: &TrackingParams, chi: &Matrix) -> Result<Vector> {
    if chi.nrows() != 6 || chi.ncols() != 6 {
        return Err(IlpError::DimensionMismatch {
            context: "tracking covariance",
            expected: 6,
            got: chi.nrows(),
        });
    }
    let s = x.speed_sq()?;
    let n = x.a.norm_squared();
    let m = x.v.dot(&x.a);
    let gs = TS2State::new(x.v * 2.0, Vector3::zeros()).to_vector();
    let gn = TS2State::new(Vector3::zeros(), x.a * 2.0).to_vector();
    let gm = TS2State::new(x.a, x.v).to_vector();
    let (va, _, aa) = blocks(chi);
    let vv: Matrix3<f64> = chi.fixed_view::<3, 3>(0, 0).into_owned();
    let hs = 2.0 * vv.trace();
    let hn = 2.0 * aa.trace();
    let hm = 2.0 * va.trace();
    let d2_rho = quotient_second(n, s, &gn, &gs, hn, hs, chi);
    let d2_c = quotient_second(m, s, &gm, &gs, hm, hs, chi);
    let grad_rho = &gn / s - &gs * (n / (s * s));
    let grad_c = &gm / s - &gs * (m / (s * s));
    let chi_rho = chi * grad_rho;
    let chi_c = chi * grad_c;
    let chi_rho_v = Vector3::new(chi_rho[0], chi_rho[1], chi_rho[2]);
    let chi_c_v = Vector3::new(chi_c[0], chi_c[1], chi_c[2]);
    let lam = p.lambda_damping;
    let lower = -x.v * d2_rho - chi_rho_v * 2.0 + x.v * (lam * d2_c) + chi_c_v * (2.0 * lam);
    Ok(TS2State::new(Vector3::zeros(), lower).to_vector())
}

/// Symmetric bilinear connector
/// `Γ(ζ, η) = (ζ_a(η_a·v) + η_a(ζ_a·v), −ζ_v(η_a·v) − η_v(ζ_a·v)) / (2‖v‖²)`.
pub fn connector_tracking(x: &TS2State, zeta: &Vector, eta: &Vector) -> Result<Vector> {
    let s = x.speed_sq()?;
    let z = TS2State::from_vector(zeta)?;
    let e = TS2State::from_vector(eta)?;
    let (za, ea) = (z.a.dot(&x.v), e.a.dot(&x.v));
    let upper = (z.a * ea + e.a * za) / (2.0 * s);
    let lower = -(z.v * ea + e.v * za) / (2.0 * s);
    Ok(TS2State::new(upper, lower).to_vector())
}

/// Coefficients `Γᵏᵢⱼ` of [`connector_tracking`].
pub fn connector_tensor_tracking(x: &TS2State) -> Result<Tensor3> {
    let s = x.speed_sq()?;
    let mut t = Tensor3::zeros(6, 6);
    let c = 1.0 / (2.0 * s);
    // Only pairs with at least one a-index contribute.
    for m in 0..3 {
        for k in 0..3 {
            // upper block: e_{a,k} contracted with e_{a,m}
            t.set(k, 3 + k, 3 + m, t.get(k, 3 + k, 3 + m) + c * x.v[m]);
            t.set(k, 3 + m, 3 + k, t.get(k, 3 + m, 3 + k) + c * x.v[m]);
            // lower block: e_{v,k} contracted with e_{a,m}
            t.set(3 + k, k, 3 + m, -c * x.v[m]);
            t.set(3 + k, 3 + m, k, -c * x.v[m]);
        }
    }
    Ok(t)
}

/// `v ← speed·v/‖v‖`, then `a ← P(v) a`.
pub fn project_constraints(x: &TS2State, speed: f64) -> Result<TS2State> {
    let norm = x.v.norm();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(IlpError::ZeroVelocity);
    }
    let v = x.v * (speed / norm);
    let a = proj_perp(&v)? * x.a;
    Ok(TS2State::new(v, a))
}

/// Random valid state: `v` uniform on the `speed`-sphere, then `a` uniform on
/// the `accel`-circle orthogonal to `v`.
pub fn sample_initial_state<R: Rng>(rng: &mut R, speed: f64, accel: f64) -> TS2State {
    let mut gaussian = || Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
    let mut v = gaussian();
    while v.norm() < 1e-12 {
        v = gaussian();
    }
    let v = v.normalize() * speed;
    let p = Matrix3::identity() - v * v.transpose() / (speed * speed);
    let mut a = p * gaussian();
    while a.norm() < 1e-12 {
        a = p * gaussian();
    }
    TS2State::new(v, a.normalize() * accel)
}

/// Which derivatives of the drift are wired into the vector field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrackingDerivatives {
    /// Closed forms simplified with the tangency identities
    /// ([`dxi_tracking`], [`d2xi_apply_tracking`]).
    #[default]
    Tangent,
    /// Exact derivatives of the drift as a map on `R⁶`
    /// ([`dxi_ambient`], [`d2xi_apply_ambient`]).
    Ambient,
}

/// The tracking model wired into the generic interfaces.
#[derive(Clone)]
pub struct TrackingModel {
    pub params: TrackingParams,
    pub derivatives: TrackingDerivatives,
    pub model: ModelSpec,
    pub vf: VectorFieldSpec,
    pub projector: Arc<Projector>,
}

impl std::fmt::Debug for TrackingModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrackingModel")
            .field("params", &self.params)
            .field("derivatives", &self.derivatives)
            .finish()
    }
}

fn state(x: &Vector) -> TS2State {
    TS2State::new(Vector3::new(x[0], x[1], x[2]), Vector3::new(x[3], x[4], x[5]))
}

fn or_nan<T, F: FnOnce() -> T>(r: Result<T>, fallback: F) -> T {
    r.unwrap_or_else(|_| fallback())
}

/// Drift, diffusion `[0; γP(v)]` padded to 6×6, metric `γ⁻² I₆`, and the
/// analytic `Dξ`, `D²ξ` and connector.
///
/// Evaluation at `v = 0` yields NaN, which the integrators report as a
/// non-finite state.
pub fn tracking_model(p: &TrackingParams) -> Result<TrackingModel> {
    tracking_model_with(p, TrackingDerivatives::Tangent)
}

/// [`tracking_model`] with a choice of drift derivatives.
pub fn tracking_model_with(p: &TrackingParams, derivatives: TrackingDerivatives) -> Result<TrackingModel> {
    p.validate()?;
    let params = *p;
    let g = params.gamma_noise;
    let nan6 = || Vector::from_element(6, f64::NAN);
    let drift = move |x: &Vector| or_nan(xi_tracking(&state(x), &params), nan6);
    let diffusion = move |x: &Vector| {
        let mut s = Matrix::zeros(6, 6);
        let pm = or_nan(proj_perp(&state(x).v), || Matrix3::from_element(f64::NAN));
        s.fixed_view_mut::<3, 3>(3, 3).copy_from(&(pm * g));
        s
    };
    let metric = move |_: &Vector| Matrix::identity(6, 6) / (g * g);
    let model = ModelSpec::new(6, drift, diffusion, metric)
        .with_metric_derivative(|_| Tensor3::zeros(6, 6))
        .with_connector(|x: &Vector| {
            let coeffs = or_nan(connector_tensor_tracking(&state(x)), || {
                Tensor3::from_slices(vec![Matrix::from_element(6, 6, f64::NAN); 6]).expect("square slices")
            });
            Connector {
                coeffs,
                point: x.clone(),
            }
        });
    let nan66 = || Matrix::from_element(6, 6, f64::NAN);
    let vf = match derivatives {
        TrackingDerivatives::Tangent => VectorFieldSpec::analytic(
            6,
            drift,
            move |x| or_nan(dxi_tracking(&state(x), &params), nan66),
            move |x, chi| or_nan(d2xi_apply_tracking(&state(x), chi), nan6),
        ),
        TrackingDerivatives::Ambient => VectorFieldSpec::analytic(
            6,
            drift,
            move |x| or_nan(dxi_ambient(&state(x), &params), nan66),
            move |x, chi| or_nan(d2xi_apply_ambient(&state(x), &params, chi), nan6),
        ),
    };
    let speed = params.speed;
    let projector: Arc<Projector> = Arc::new(move |x: &Vector| {
        Ok(project_constraints(&TS2State::from_vector(x)?, speed)?.to_vector())
    });
    Ok(TrackingModel {
        params,
        derivatives,
        model,
        vf,
        projector,
    })
}

/// ILP of the tracking model with zero initial covariance, by the dedicated
/// recursion `m_{i+1} = τ_i (m_i + ½Δt H_i) + ½Δt H_{i+1}` with
/// `H_t = −1/‖v₀‖² (0, Tr(χ_aa) v_t + (χ_va + χ_avᵀ) a_t)`.
///
/// The target is Euclidean, so the projected estimate is `x_δ + m_δ`.
pub fn ilp_tracking(x0: &TS2State, p: &TrackingParams, delta: f64, n: usize) -> Result<IlpResult> {
    let wired = tracking_model(p)?;
    let speed_sq0 = x0.speed_sq()?;
    let grid = flow_with_derivative(&wired.vf, &x0.to_vector(), delta, n)?;
    let cov = covariance_path(&wired.model, &grid, &Matrix::zeros(6, 6))?;
    let tau = grid.derivative_flow()?;
    let h = grid
        .points
        .iter()
        .zip(&cov.chi)
        .map(|(x, chi)| {
            let lower = curvature_core(&state(x), chi)? * (-1.0 / speed_sq0);
            Ok(TS2State::new(Vector3::zeros(), lower).to_vector())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut m = Vec::with_capacity(n + 1);
    m.push(Vector::zeros(6));
    for i in 0..n {
        let half = 0.5 * (grid.times[i + 1] - grid.times[i]);
        let next = &tau.step[i] * (&m[i] + &h[i] * half) + &h[i + 1] * half;
        if !next.iter().all(|c| c.is_finite()) {
            return Err(IlpError::NonFiniteState {
                context: "tracking location integral",
                step: i + 1,
            });
        }
        m.push(next);
    }
    let tangent = m.last().cloned().expect("non-empty grid");
    let base_point = grid.endpoint().clone();
    let integrand_trace = h.iter().zip(&tau.to_end).map(|(hi, t)| t * hi * 2.0).collect();
    Ok(IlpResult {
        projected: Some(&base_point + &tangent),
        tangent,
        base_point,
        integrand_trace,
        series: m,
        base_series: grid.points.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> TrackingParams {
        TrackingParams::new(0.5, 5.2e3, 200.0).unwrap()
    }

    #[test]
    fn projector_of_axis_velocity() {
        let p = proj_perp(&Vector3::new(1.0, 0.0, 0.0)).unwrap();
        assert_eq!(p, Matrix3::from_diagonal(&Vector3::new(0.0, 1.0, 1.0)));
        assert!(matches!(proj_perp(&Vector3::zeros()), Err(IlpError::ZeroVelocity)));
    }

    #[test]
    fn rho_and_xi_reference_values() {
        let x = TS2State::new(Vector3::new(200.0, 0.0, 0.0), Vector3::new(0.0, 50.0, 0.0));
        assert_eq!(rho(&x).unwrap(), 0.0625);
        let p = TrackingParams::new(0.0, 1.0, 200.0).unwrap();
        let xi = xi_tracking(&x, &p).unwrap();
        assert_eq!(xi.as_slice(), &[0.0, 50.0, 0.0, -12.5, 0.0, 0.0]);
        let still = TS2State::new(Vector3::new(0.0, 3.0, 4.0), Vector3::zeros());
        assert_eq!(xi_tracking(&still, &params()).unwrap(), Vector::zeros(6));
    }

    #[test]
    fn jacobian_without_acceleration() {
        let x = TS2State::new(Vector3::new(0.0, 3.0, 4.0), Vector3::zeros());
        let d = dxi_tracking(&x, &params()).unwrap();
        let pm = proj_perp(&x.v).unwrap();
        let lower_right: Matrix3<f64> = d.fixed_view::<3, 3>(3, 3).into_owned();
        assert!((lower_right + pm * 0.5).amax() < 1e-15);
        assert_eq!(d.fixed_view::<3, 3>(3, 0).amax(), 0.0);
        assert_eq!(d.fixed_view::<3, 3>(0, 3).into_owned(), Matrix3::identity());
    }

    #[test]
    fn second_derivative_of_acceleration_block() {
        let x = TS2State::new(Vector3::new(0.0, 0.0, 2.0), Vector3::new(1.0, 0.0, 0.0));
        let mut chi = Matrix::zeros(6, 6);
        chi.fixed_view_mut::<3, 3>(3, 3).copy_from(&Matrix3::identity());
        let r = d2xi_apply_tracking(&x, &chi).unwrap();
        assert_eq!(r.as_slice(), &[0.0, 0.0, 0.0, 0.0, 0.0, -3.0]);
        assert_eq!(d2xi_apply_tracking(&x, &Matrix::zeros(6, 6)).unwrap(), Vector::zeros(6));
    }

    #[test]
    fn tensor_matches_bilinear_form() {
        let x = TS2State::new(Vector3::new(1.0, -2.0, 0.5), Vector3::new(0.3, 0.4, 1.0));
        let t = connector_tensor_tracking(&x).unwrap();
        let z = Vector::from_vec(vec![0.1, 0.7, -0.2, 1.5, -0.4, 0.9]);
        let e = Vector::from_vec(vec![-1.1, 0.2, 0.3, 0.6, 0.8, -0.5]);
        let direct = connector_tracking(&x, &z, &e).unwrap();
        assert!((t.apply(&z, &e).unwrap() - direct).amax() < 1e-15);
    }

    #[test]
    fn projection_examples() {
        let x = TS2State::new(Vector3::new(300.0, 0.0, 0.0), Vector3::new(1.0, 2.0, 0.0));
        let y = project_constraints(&x, 200.0).unwrap();
        assert_eq!(y.v, Vector3::new(200.0, 0.0, 0.0));
        assert_eq!(y.a, Vector3::new(0.0, 2.0, 0.0));
    }

    #[test]
    fn zero_noise_gives_zero_correction() {
        let p = TrackingParams::new(0.5, 0.0, 200.0).unwrap();
        let x0 = TS2State::new(Vector3::new(200.0, 0.0, 0.0), Vector3::new(0.0, 50.0, 0.0));
        // γ = 0 makes the metric singular but the recursion never inverts it.
        let r = ilp_tracking(&x0, &p, 1.0, 25).unwrap();
        assert_eq!(r.tangent, Vector::zeros(6));
        assert_eq!(r.projected.unwrap(), r.base_point);
    }

    #[test]
    fn invalid_params() {
        assert!(TrackingParams::new(-1.0, 1.0, 1.0).is_err());
        assert!(TrackingParams::new(1.0, f64::NAN, 1.0).is_err());
        assert!(TrackingParams::new(1.0, 1.0, 0.0).is_err());
    }
}
