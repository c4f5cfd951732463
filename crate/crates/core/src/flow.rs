//! The intrinsic vector field, its flow and the derivative flow.

use std::cell::RefCell;
use std::fmt;
use std::sync::Arc;

use crate::error::{IlpError, Result};
use crate::fd;
use crate::geometry::{alpha, connector, ModelSpec, TryPointFn};
use crate::linalg::{all_finite, expm};
use crate::tensor::Tensor3;
use crate::{Matrix, Vector};

type SecondApplyFn = Arc<dyn Fn(&Vector, &Matrix) -> Result<Vector> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Analytic,
    FiniteDifference,
}

/// A vector field `ξ` together with `Dξ` and the contraction `D²ξ(x)(T)`.
#[derive(Clone)]
pub struct VectorFieldSpec {
    dim: usize,
    xi: TryPointFn<Vector>,
    d_xi: TryPointFn<Matrix>,
    d2_xi_apply: SecondApplyFn,
    provenance: Provenance,
}

impl fmt::Debug for VectorFieldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorFieldSpec")
            .field("dim", &self.dim)
            .field("provenance", &self.provenance)
            .finish()
    }
}

impl VectorFieldSpec {
    /// Vector field with closed-form derivatives.
    pub fn analytic<X, J, H>(dim: usize, xi: X, d_xi: J, d2_xi_apply: H) -> Self
    where
        X: Fn(&Vector) -> Vector + Send + Sync + 'static,
        J: Fn(&Vector) -> Matrix + Send + Sync + 'static,
        H: Fn(&Vector, &Matrix) -> Vector + Send + Sync + 'static,
    {
        Self {
            dim,
            xi: Arc::new(move |x| Ok(xi(x))),
            d_xi: Arc::new(move |x| Ok(d_xi(x))),
            d2_xi_apply: Arc::new(move |x, t| Ok(d2_xi_apply(x, t))),
            provenance: Provenance::Analytic,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn eval(&self, x: &Vector) -> Result<Vector> {
        (self.xi)(x)
    }

    pub fn jacobian(&self, x: &Vector) -> Result<Matrix> {
        (self.d_xi)(x)
    }

    /// `D²ξ(x)(T) = Σᵢⱼ ∂ᵢ∂ⱼξ(x) Tⁱʲ`.
    pub fn second_apply(&self, x: &Vector, t: &Matrix) -> Result<Vector> {
        (self.d2_xi_apply)(x, t)
    }
}

/// Intrinsic drift `ξᵏ = bᵏ + ½ Σᵢⱼ αⁱʲ Γᵏᵢⱼ`, with finite-difference derivatives.
pub fn xi_from_model(model: &ModelSpec) -> VectorFieldSpec {
    let m = model.clone();
    let xi = move |x: &Vector| -> Result<Vector> {
        let gamma = connector(&m, x)?;
        let correction = gamma.apply(&alpha(&m, x))?;
        Ok(m.drift(x) + correction * 0.5)
    };
    fd_vectorfield_fallible(model.dim(), Arc::new(xi), model.fd_step())
}

/// Wraps a vector field with finite-difference `Dξ` and `D²ξ`.
///
/// `Dξ` uses fourth-order central differences with step `fd_step`; the
/// Hessian uses second central differences with step `√fd_step`, both scaled
/// by `max(1, |xₖ|)`.
pub fn fd_vectorfield<X>(dim: usize, xi: X, fd_step: f64) -> VectorFieldSpec
where
    X: Fn(&Vector) -> Vector + Send + Sync + 'static,
{
    fd_vectorfield_fallible(dim, Arc::new(move |x| Ok(xi(x))), fd_step)
}

fn fd_vectorfield_fallible(dim: usize, xi: TryPointFn<Vector>, fd_step: f64) -> VectorFieldSpec {
    let xi_j = xi.clone();
    let d_xi = move |x: &Vector| -> Result<Matrix> {
        let err = RefCell::new(None);
        let f = |y: &Vector| recorded(&xi_j, y, dim, &err);
        let jac = fd::jacobian(&f, x, fd_step);
        err.into_inner().map_or(Ok(jac), Err)
    };
    let xi_h = xi.clone();
    let hess_step = fd_step.sqrt();
    let d2 = move |x: &Vector, t: &Matrix| -> Result<Vector> {
        let err = RefCell::new(None);
        let f = |y: &Vector| recorded(&xi_h, y, dim, &err);
        let slices = fd::hessian(&f, x, hess_step);
        if let Some(e) = err.into_inner() {
            return Err(e);
        }
        Tensor3::from_slices(slices)?.contract(t)
    };
    VectorFieldSpec {
        dim,
        xi,
        d_xi: Arc::new(d_xi),
        d2_xi_apply: Arc::new(d2),
        provenance: Provenance::FiniteDifference,
    }
}

/// Evaluates a fallible field for a difference stencil, keeping the first
/// error and handing the stencil NaNs instead.
fn recorded(f: &TryPointFn<Vector>, x: &Vector, dim: usize, err: &RefCell<Option<IlpError>>) -> Vector {
    match f(x) {
        Ok(v) => v,
        Err(e) => {
            err.borrow_mut().get_or_insert(e);
            Vector::from_element(dim, f64::NAN)
        }
    }
}

/// Derivative flow along a grid: per-step transports and their compositions.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeFlow {
    /// `Dξ(x_{t_i})` at every grid point.
    pub jacobians: Vec<Matrix>,
    /// `τ_{t_i}^{t_{i+1}}`, one per step.
    pub step: Vec<Matrix>,
    /// `τ_{t_i}^{δ}`, one per grid point.
    pub to_end: Vec<Matrix>,
    /// `τ_0^{t_i}`, one per grid point.
    pub from_start: Vec<Matrix>,
}

/// Uniform time grid with flow points and, once filled, the derivative flow.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowGrid {
    pub times: Vec<f64>,
    pub points: Vec<Vector>,
    pub tau: Option<DerivativeFlow>,
}

impl FlowGrid {
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn delta(&self) -> f64 {
        *self.times.last().expect("grid has at least two times")
    }

    pub fn dt(&self) -> f64 {
        self.delta() / self.steps() as f64
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn endpoint(&self) -> &Vector {
        self.points.last().expect("grid has points")
    }

    pub fn derivative_flow(&self) -> Result<&DerivativeFlow> {
        self.tau
            .as_ref()
            .ok_or_else(|| IlpError::InvalidArgument("grid has no derivative flow; call derivative_flow first".into()))
    }

    /// `τ_{t_i}^{t_j}` for `i ≤ j`, composed from the per-step transports.
    pub fn tau_between(&self, i: usize, j: usize) -> Result<Matrix> {
        let tau = self.derivative_flow()?;
        if i > j || j > self.steps() {
            return Err(IlpError::InvalidArgument(format!("bad transport indices {i}..{j}")));
        }
        let p = self.dim();
        Ok(tau.step[i..j].iter().fold(Matrix::identity(p, p), |acc, s| s * acc))
    }
}

/// Classical RK4 integration of `ẋ = ξ(x)` on a uniform grid over `[0, δ]`.
pub fn integrate_flow(vf: &VectorFieldSpec, x0: &Vector, delta: f64, n: usize) -> Result<FlowGrid> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(IlpError::InvalidArgument(format!("delta must be positive, got {delta}")));
    }
    if n == 0 {
        return Err(IlpError::InvalidArgument("at least one step is required".into()));
    }
    if x0.len() != vf.dim() {
        return Err(IlpError::DimensionMismatch {
            context: "initial point",
            expected: vf.dim(),
            got: x0.len(),
        });
    }
    let h = delta / n as f64;
    let mut times = Vec::with_capacity(n + 1);
    let mut points = Vec::with_capacity(n + 1);
    times.push(0.0);
    points.push(x0.clone());
    let mut x = x0.clone();
    for i in 0..n {
        x = rk4_step(vf, &x, h)?;
        if !x.iter().all(|c| c.is_finite()) {
            return Err(IlpError::NonFiniteState { context: "flow", step: i + 1 });
        }
        times.push(if i + 1 == n { delta } else { (i + 1) as f64 * h });
        points.push(x.clone());
    }
    Ok(FlowGrid { times, points, tau: None })
}

pub(crate) fn rk4_step(vf: &VectorFieldSpec, x: &Vector, h: f64) -> Result<Vector> {
    let k1 = vf.eval(x)?;
    let k2 = vf.eval(&(x + &k1 * (0.5 * h)))?;
    let k3 = vf.eval(&(x + &k2 * (0.5 * h)))?;
    let k4 = vf.eval(&(x + &k3 * h))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

/// Fills the derivative flow with per-step transports
/// `τ_{t_i}^{t_{i+1}} = exp(Δt/2 · [Dξ(x_{t_i}) + Dξ(x_{t_{i+1}})])`.
pub fn derivative_flow(vf: &VectorFieldSpec, grid: &FlowGrid) -> Result<FlowGrid> {
    let n = grid.steps();
    let p = grid.dim();
    let jacobians = grid
        .points
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let j = vf.jacobian(x)?;
            if !all_finite(&j) {
                return Err(IlpError::NonFiniteState { context: "derivative flow", step: i });
            }
            Ok(j)
        })
        .collect::<Result<Vec<_>>>()?;

    let step: Vec<Matrix> = (0..n)
        .map(|i| {
            let h = grid.times[i + 1] - grid.times[i];
            expm(&((&jacobians[i] + &jacobians[i + 1]) * (0.5 * h)))
        })
        .collect();
    if let Some(i) = step.iter().position(|m| !all_finite(m)) {
        return Err(IlpError::NonFiniteState { context: "derivative flow", step: i });
    }

    let mut to_end = vec![Matrix::identity(p, p); n + 1];
    for i in (0..n).rev() {
        to_end[i] = &to_end[i + 1] * &step[i];
    }
    let mut from_start = vec![Matrix::identity(p, p); n + 1];
    for i in 0..n {
        from_start[i + 1] = &step[i] * &from_start[i];
    }

    Ok(FlowGrid {
        times: grid.times.clone(),
        points: grid.points.clone(),
        tau: Some(DerivativeFlow {
            jacobians,
            step,
            to_end,
            from_start,
        }),
    })
}

/// Flow and derivative flow in one call.
pub fn flow_with_derivative(vf: &VectorFieldSpec, x0: &Vector, delta: f64, n: usize) -> Result<FlowGrid> {
    let grid = integrate_flow(vf, x0, delta, n)?;
    derivative_flow(vf, &grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_field_keeps_initial_point_and_identity_transport() {
        let vf = VectorFieldSpec::analytic(
            2,
            |_| Vector::zeros(2),
            |_| Matrix::zeros(2, 2),
            |_, _| Vector::zeros(2),
        );
        let x0 = Vector::from_vec(vec![1.0, -2.0]);
        let g = flow_with_derivative(&vf, &x0, 0.7, 9).unwrap();
        assert!(g.points.iter().all(|p| p == &x0));
        let tau = g.derivative_flow().unwrap();
        assert!(tau.to_end.iter().all(|m| m == &Matrix::identity(2, 2)));
        assert_eq!(g.times.len(), 10);
        assert_eq!(g.delta(), 0.7);
    }

    #[test]
    fn bad_arguments_are_rejected() {
        let vf = fd_vectorfield(1, |x| x.clone(), 1e-5);
        let x0 = Vector::from_vec(vec![1.0]);
        assert!(integrate_flow(&vf, &x0, 0.0, 5).is_err());
        assert!(integrate_flow(&vf, &x0, 1.0, 0).is_err());
        assert!(integrate_flow(&vf, &Vector::zeros(2), 1.0, 3).is_err());
    }

    #[test]
    fn blow_up_is_non_finite_state() {
        let vf = fd_vectorfield(1, |x| x.map(|c| c * c * c * 1e100), 1e-5);
        let r = integrate_flow(&vf, &Vector::from_vec(vec![1e3]), 1.0, 10);
        assert!(matches!(r, Err(IlpError::NonFiniteState { .. })));
    }

    #[test]
    fn fd_second_derivative_of_square() {
        let vf = fd_vectorfield(2, |x| Vector::from_vec(vec![x[0] * x[0], 0.0]), 1e-5);
        let t = Matrix::from_row_slice(2, 2, &[0.7, 0.2, 0.2, -1.1]);
        let d2 = vf.second_apply(&Vector::from_vec(vec![0.3, 2.0]), &t).unwrap();
        assert!((d2[0] - 1.4).abs() < 1e-8, "{d2}");
        assert!(d2[1].abs() < 1e-12);
    }

    #[test]
    fn fd_second_derivative_of_linear_field_vanishes() {
        let a = Matrix::from_row_slice(2, 2, &[0.3, -1.0, 2.0, 0.5]);
        let vf = fd_vectorfield(2, move |x| &a * x, 1e-5);
        let t = Matrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 2.0]);
        let d2 = vf.second_apply(&Vector::from_vec(vec![3.0, -4.0]), &t).unwrap();
        assert!(d2.amax() < 1e-6);
    }

    #[test]
    fn connector_error_propagates_through_xi() {
        let m = ModelSpec::new(
            1,
            |_| Vector::zeros(1),
            |_| Matrix::identity(1, 1),
            |_| Matrix::zeros(1, 1),
        );
        let vf = xi_from_model(&m);
        assert!(matches!(vf.eval(&Vector::zeros(1)), Err(IlpError::SingularMetric { .. })));
        assert!(matches!(vf.jacobian(&Vector::zeros(1)), Err(IlpError::SingularMetric { .. })));
    }
}
