//! Diffusion variance, connectors and the geodesic exponential map.
//!
//! A [`ModelSpec`] carries the chart expressions of the drift `b`, the
//! diffusion coefficient `σ` and a generalized-inverse metric `g`, i.e. a
//! Riemannian metric with `α g α = α` for `α = σσᵀ`. The connector built from
//! this data solves
//!
//! ```text
//! Σ_s Γˢᵢⱼ g_sk = ½ { ∂ᵢ(gαg)_jk + ∂ⱼ(gαg)_ik − ∂ₖ(gαg)_ij }
//! ```
//!
//! which is the Levi-Civita connection of `g` whenever `α` is invertible and
//! `g = α⁻¹`.

use std::fmt;
use std::sync::Arc;

use nalgebra::SymmetricEigen;

use crate::error::{IlpError, Result};
use crate::fd;
use crate::linalg::{spd_inverse, symmetrize};
use crate::tensor::Tensor3;
use crate::{Matrix, Vector};

/// Chart-level callable evaluated at a point.
pub type PointFn<T> = Arc<dyn Fn(&Vector) -> T + Send + Sync>;
/// Fallible chart-level callable.
pub type TryPointFn<T> = Arc<dyn Fn(&Vector) -> Result<T> + Send + Sync>;

pub const DEFAULT_FD_STEP: f64 = 1e-5;
pub const DEFAULT_GEODESIC_STEPS: usize = 64;
/// Singular-value ratio that counts as a rank gap.
pub const RANK_GAP_RATIO: f64 = 1e3;
const RANK_RELATIVE_FLOOR: f64 = 1e-9;

/// A diffusion model in one global chart.
#[derive(Clone)]
pub struct ModelSpec {
    dim: usize,
    drift: PointFn<Vector>,
    diffusion: PointFn<Matrix>,
    metric: PointFn<Matrix>,
    metric_derivative: Option<PointFn<Tensor3>>,
    alpha_derivative: Option<PointFn<Tensor3>>,
    analytic_connector: Option<PointFn<Connector>>,
    fd_step: f64,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("dim", &self.dim)
            .field("analytic_metric_derivative", &self.metric_derivative.is_some())
            .field("analytic_alpha_derivative", &self.alpha_derivative.is_some())
            .field("analytic_connector", &self.analytic_connector.is_some())
            .field("fd_step", &self.fd_step)
            .finish()
    }
}

impl ModelSpec {
    /// `diffusion` returns a `dim × m` matrix whose columns are noise channels.
    pub fn new<B, S, G>(dim: usize, drift: B, diffusion: S, metric: G) -> Self
    where
        B: Fn(&Vector) -> Vector + Send + Sync + 'static,
        S: Fn(&Vector) -> Matrix + Send + Sync + 'static,
        G: Fn(&Vector) -> Matrix + Send + Sync + 'static,
    {
        assert!(dim > 0, "model dimension must be positive");
        Self {
            dim,
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            metric: Arc::new(metric),
            metric_derivative: None,
            alpha_derivative: None,
            analytic_connector: None,
            fd_step: DEFAULT_FD_STEP,
        }
    }

    /// Analytic `∂g/∂x_k`, returned as slice `k` of the tensor.
    pub fn with_metric_derivative<F>(mut self, f: F) -> Self
    where
        F: Fn(&Vector) -> Tensor3 + Send + Sync + 'static,
    {
        self.metric_derivative = Some(Arc::new(f));
        self
    }

    /// Analytic `∂α/∂x_k`, returned as slice `k` of the tensor.
    pub fn with_alpha_derivative<F>(mut self, f: F) -> Self
    where
        F: Fn(&Vector) -> Tensor3 + Send + Sync + 'static,
    {
        self.alpha_derivative = Some(Arc::new(f));
        self
    }

    /// Closed-form connector; bypasses the metric-derivative construction.
    pub fn with_connector<F>(mut self, f: F) -> Self
    where
        F: Fn(&Vector) -> Connector + Send + Sync + 'static,
    {
        self.analytic_connector = Some(Arc::new(f));
        self
    }

    pub fn with_fd_step(mut self, step: f64) -> Self {
        assert!(step > 0.0 && step.is_finite(), "fd_step must be positive");
        self.fd_step = step;
        self
    }

    /// Replace the drift, keeping everything else.
    pub fn with_drift<B>(mut self, drift: B) -> Self
    where
        B: Fn(&Vector) -> Vector + Send + Sync + 'static,
    {
        self.drift = Arc::new(drift);
        self
    }

    /// Replace the diffusion coefficient, keeping everything else.
    ///
    /// Analytic `α` derivatives are dropped since they no longer apply.
    pub fn with_diffusion<S>(mut self, diffusion: S) -> Self
    where
        S: Fn(&Vector) -> Matrix + Send + Sync + 'static,
    {
        self.diffusion = Arc::new(diffusion);
        self.alpha_derivative = None;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fd_step(&self) -> f64 {
        self.fd_step
    }

    pub fn drift(&self, x: &Vector) -> Vector {
        (self.drift)(x)
    }

    pub fn diffusion(&self, x: &Vector) -> Matrix {
        (self.diffusion)(x)
    }

    pub fn metric(&self, x: &Vector) -> Matrix {
        (self.metric)(x)
    }

    pub fn has_analytic_connector(&self) -> bool {
        self.analytic_connector.is_some()
    }

    /// The model with its closed-form connector removed, so that
    /// [`connector`] falls back to the metric construction.
    pub fn without_analytic_connector(&self) -> Self {
        let mut m = self.clone();
        m.analytic_connector = None;
        m
    }

    fn check_point(&self, x: &Vector) -> Result<()> {
        if x.len() != self.dim {
            return Err(IlpError::DimensionMismatch {
                context: "model point",
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `g α g` at `x`, symmetrized.
    fn metric_sandwich(&self, x: &Vector) -> Matrix {
        let g = self.metric(x);
        let a = alpha(self, x);
        symmetrize(&(&g * a * &g))
    }
}

/// Connector coefficients at a point; `coeffs.get(k, i, j)` is `Γᵏᵢⱼ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Connector {
    pub coeffs: Tensor3,
    pub point: Vector,
}

impl Connector {
    /// Builds a connector, symmetrizing the lower indices.
    pub fn new(mut coeffs: Tensor3, point: Vector) -> Result<Self> {
        if coeffs.outputs() != point.len() || coeffs.dim() != point.len() {
            return Err(IlpError::DimensionMismatch {
                context: "connector coefficients",
                expected: point.len(),
                got: coeffs.outputs(),
            });
        }
        coeffs.symmetrize_inputs();
        Ok(Self { coeffs, point })
    }

    pub fn zero(point: Vector) -> Self {
        let p = point.len();
        Self {
            coeffs: Tensor3::zeros(p, p),
            point,
        }
    }

    pub fn dim(&self) -> usize {
        self.point.len()
    }

    /// `Γ(T)ᵏ = Σᵢⱼ Γᵏᵢⱼ Tⁱʲ`.
    pub fn apply(&self, t: &Matrix) -> Result<Vector> {
        connector_apply(self, t)
    }

    /// `Γ(u ⊗ w)`.
    pub fn bilinear(&self, u: &Vector, w: &Vector) -> Result<Vector> {
        self.coeffs.apply(u, w)
    }
}

/// Result of [`check_generalized_inverse`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneralizedInverseCheck {
    pub holds: bool,
    /// `‖α g α − α‖∞` (largest absolute entry, not normalized).
    pub residual: f64,
}

/// Diffusion variance `α = σσᵀ`.
pub fn alpha(model: &ModelSpec, x: &Vector) -> Matrix {
    let s = model.diffusion(x);
    symmetrize(&(&s * s.transpose()))
}

/// Checks `α g α = α`; `tol` is relative to `max(1, ‖α‖∞)`.
pub fn check_generalized_inverse(model: &ModelSpec, x: &Vector, tol: f64) -> GeneralizedInverseCheck {
    let a = alpha(model, x);
    let g = model.metric(x);
    let residual = (&a * g * &a - &a).amax();
    GeneralizedInverseCheck {
        holds: residual <= tol * a.amax().max(1.0),
        residual,
    }
}

/// Connector of the model at `x`: the closed form if the model has one,
/// otherwise [`connector_from_metric`].
pub fn connector(model: &ModelSpec, x: &Vector) -> Result<Connector> {
    model.check_point(x)?;
    match &model.analytic_connector {
        Some(f) => {
            let c = f(x);
            Connector::new(c.coeffs, x.clone())
        }
        None => connector_from_metric(model, x),
    }
}

/// Connector solved from the derivatives of `g α g` and the inverse of `g`.
pub fn connector_from_metric(model: &ModelSpec, x: &Vector) -> Result<Connector> {
    model.check_point(x)?;
    let p = model.dim();
    let g = model.metric(x);
    let g_inv = spd_inverse(&g)?;
    let d_sandwich = sandwich_derivatives(model, x, &g);

    let mut coeffs = Tensor3::zeros(p, p);
    let mut rhs = Vector::zeros(p);
    for i in 0..p {
        for j in i..p {
            for k in 0..p {
                rhs[k] = 0.5 * (d_sandwich[i][(j, k)] + d_sandwich[j][(i, k)] - d_sandwich[k][(i, j)]);
            }
            let gamma_ij = &g_inv * &rhs;
            for s in 0..p {
                coeffs.set(s, i, j, gamma_ij[s]);
                coeffs.set(s, j, i, gamma_ij[s]);
            }
        }
    }
    if !coeffs.is_finite() {
        return Err(IlpError::NonFiniteState {
            context: "connector",
            step: 0,
        });
    }
    Ok(Connector {
        coeffs,
        point: x.clone(),
    })
}

/// `∂ₖ(g α g)` for every `k`, analytic where the model allows.
fn sandwich_derivatives(model: &ModelSpec, x: &Vector, g: &Matrix) -> Vec<Matrix> {
    let p = model.dim();
    let h = model.fd_step();
    match (&model.metric_derivative, &model.alpha_derivative) {
        (None, None) => {
            let f = |y: &Vector| model.metric_sandwich(y);
            (0..p)
                .map(|k| symmetrize(&fd::partial_matrix(&f, x, k, fd::coordinate_step(x, k, h))))
                .collect()
        }
        (dg, da) => {
            let a = alpha(model, x);
            let dg: Vec<Matrix> = match dg {
                Some(f) => f(x).slices().to_vec(),
                None => {
                    let f = |y: &Vector| model.metric(y);
                    (0..p)
                        .map(|k| fd::partial_matrix(&f, x, k, fd::coordinate_step(x, k, h)))
                        .collect()
                }
            };
            let da: Vec<Matrix> = match da {
                Some(f) => f(x).slices().to_vec(),
                None => {
                    let f = |y: &Vector| alpha(model, y);
                    (0..p)
                        .map(|k| fd::partial_matrix(&f, x, k, fd::coordinate_step(x, k, h)))
                        .collect()
                }
            };
            let ag = &a * g;
            let ga = g * &a;
            (0..p)
                .map(|k| symmetrize(&(&dg[k] * &ag + g * &da[k] * g + &ga * &dg[k])))
                .collect()
        }
    }
}

/// `Σᵢⱼ Γᵏᵢⱼ Tⁱʲ`.
pub fn connector_apply(c: &Connector, t: &Matrix) -> Result<Vector> {
    c.coeffs.contract(t)
}

/// Orthogonal splitting of the cotangent space induced by an ambient metric.
#[derive(Debug, Clone, PartialEq)]
pub struct Splitting {
    /// Columns span `Ker α`.
    pub kernel_basis: Matrix,
    /// Columns span the complement `F` of the kernel under the dual ambient metric.
    pub f_basis: Matrix,
    /// Invertible `α°` with `α (α°)⁻¹ α = α`.
    pub alpha_circ: Matrix,
    pub rank: usize,
}

impl Splitting {
    /// `(α°)⁻¹`, a generalized inverse of `α` that is a Riemannian metric.
    pub fn generalized_inverse(&self) -> Result<Matrix> {
        spd_inverse(&self.alpha_circ)
    }
}

/// Splits the cotangent space into `Ker α ⊕ F`, detecting the rank from a
/// singular-value gap.
pub fn sub_riemannian_splitting(alpha_matrix: &Matrix, ambient_metric: &Matrix) -> Result<Splitting> {
    let rank = detect_rank(alpha_matrix)?;
    sub_riemannian_splitting_with_rank(alpha_matrix, ambient_metric, rank)
}

/// Number of singular values of the PSD matrix above the relative floor,
/// rejecting spectra without a clear gap.
pub fn detect_rank(alpha_matrix: &Matrix) -> Result<usize> {
    let mut s: Vec<f64> = SymmetricEigen::new(symmetrize(alpha_matrix))
        .eigenvalues
        .iter()
        .map(|l| l.abs())
        .collect();
    s.sort_by(|a, b| b.total_cmp(a));
    let Some(&largest) = s.first() else {
        return Ok(0);
    };
    if largest == 0.0 {
        return Ok(0);
    }
    let rank = s.iter().filter(|&&l| l > largest * RANK_RELATIVE_FLOOR).count();
    if rank < s.len() {
        let next = s[rank];
        let ratio = if next == 0.0 { f64::INFINITY } else { s[rank - 1] / next };
        if ratio < RANK_GAP_RATIO {
            return Err(IlpError::RankDeficiencyAmbiguous { rank, ratio });
        }
    }
    Ok(rank)
}

/// [`sub_riemannian_splitting`] with the rank supplied by the caller.
pub fn sub_riemannian_splitting_with_rank(
    alpha_matrix: &Matrix,
    ambient_metric: &Matrix,
    rank: usize,
) -> Result<Splitting> {
    let p = alpha_matrix.nrows();
    if !alpha_matrix.is_square() || ambient_metric.nrows() != p || ambient_metric.ncols() != p {
        return Err(IlpError::DimensionMismatch {
            context: "splitting",
            expected: p,
            got: ambient_metric.nrows(),
        });
    }
    if rank > p {
        return Err(IlpError::InvalidArgument(format!("rank {rank} exceeds dimension {p}")));
    }
    let a = symmetrize(alpha_matrix);
    let dual = spd_inverse(ambient_metric)?;

    // Eigenvectors sorted by decreasing eigenvalue; the tail spans the kernel.
    let eig = SymmetricEigen::new(a.clone());
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let kernel_basis = Matrix::from_fn(p, p - rank, |r, c| eig.eigenvectors[(r, order[rank + c])]);

    let (projector, f_basis) = if rank == p {
        (Matrix::zeros(p, p), Matrix::identity(p, p))
    } else {
        // ⟨·|·⟩°-orthogonal projection onto Ker α.
        let dk = &dual * &kernel_basis;
        let gram = kernel_basis.transpose() * &dk;
        let gram_inv = spd_inverse(&gram)?;
        let projector = &kernel_basis * gram_inv * dk.transpose();

        // F is the Euclidean complement of span(dual · K).
        let dk_gram_inv = spd_inverse(&(dk.transpose() * &dk))?;
        let complement = Matrix::identity(p, p) - &dk * dk_gram_inv * dk.transpose();
        let ceig = SymmetricEigen::new(symmetrize(&complement));
        let mut corder: Vec<usize> = (0..p).collect();
        corder.sort_by(|&i, &j| ceig.eigenvalues[j].total_cmp(&ceig.eigenvalues[i]));
        let f_basis = Matrix::from_fn(p, rank, |r, c| ceig.eigenvectors[(r, corder[c])]);
        (projector, f_basis)
    };

    // α°(λ) = β(λ₀) + α(λ₁) with λ₀ the kernel component; α kills λ₀.
    let alpha_circ = symmetrize(&(&dual * projector + &a));
    Ok(Splitting {
        kernel_basis,
        f_basis,
        alpha_circ,
        rank,
    })
}

/// Generalized-inverse metric `(α°)⁻¹` from the splitting, with the rank
/// detected from the spectrum unless given.
pub fn canonical_metric(alpha_matrix: &Matrix, ambient_metric: &Matrix, rank: Option<usize>) -> Result<Matrix> {
    let split = match rank {
        Some(r) => sub_riemannian_splitting_with_rank(alpha_matrix, ambient_metric, r)?,
        None => sub_riemannian_splitting(alpha_matrix, ambient_metric)?,
    };
    split.generalized_inverse()
}

/// Geodesic exponential map of the model's connector.
pub fn exp_map(model: &ModelSpec, x: &Vector, v: &Vector, steps: usize) -> Result<Vector> {
    model.check_point(x)?;
    exp_map_with(&|y: &Vector| connector(model, y).map(|c| c.coeffs), x, v, steps)
}

/// Integrates `ẍᵏ + Γᵏᵢⱼ ẋⁱ ẋʲ = 0` over unit parameter with classical RK4.
///
/// If every connector evaluation is exactly zero the endpoint is returned as
/// `x + v` without rounding from the integrator.
pub fn exp_map_with<F>(connector_at: &F, x: &Vector, v: &Vector, steps: usize) -> Result<Vector>
where
    F: Fn(&Vector) -> Result<Tensor3> + ?Sized,
{
    if x.len() != v.len() {
        return Err(IlpError::DimensionMismatch {
            context: "exponential map",
            expected: x.len(),
            got: v.len(),
        });
    }
    if steps == 0 {
        return Err(IlpError::InvalidArgument("geodesic steps must be positive".into()));
    }
    if v.iter().all(|&c| c == 0.0) {
        return Ok(x.clone());
    }
    let mut flat = true;
    let mut accel = |pos: &Vector, vel: &Vector| -> Result<Vector> {
        let gamma = connector_at(pos)?;
        if !gamma.is_zero() {
            flat = false;
        }
        Ok(-gamma.apply(vel, vel)?)
    };

    let h = 1.0 / steps as f64;
    let mut pos = x.clone();
    let mut vel = v.clone();
    for step in 0..steps {
        let k1x = vel.clone();
        let k1v = accel(&pos, &vel)?;
        let p2 = &pos + &k1x * (0.5 * h);
        let v2 = &vel + &k1v * (0.5 * h);
        let k2v = accel(&p2, &v2)?;
        let k2x = v2;
        let p3 = &pos + &k2x * (0.5 * h);
        let v3 = &vel + &k2v * (0.5 * h);
        let k3v = accel(&p3, &v3)?;
        let k3x = v3;
        let p4 = &pos + &k3x * h;
        let v4 = &vel + &k3v * h;
        let k4v = accel(&p4, &v4)?;
        let k4x = v4;
        pos += (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (h / 6.0);
        vel += (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (h / 6.0);
        if !pos.iter().chain(vel.iter()).all(|c| c.is_finite()) {
            return Err(IlpError::ChartEscape { step });
        }
    }
    if flat {
        return Ok(x + v);
    }
    Ok(pos)
}

/// A `C²` map `ψ: N → M` together with the connector of the target.
#[derive(Clone)]
pub struct MapSpec {
    dim_p: usize,
    dim_q: usize,
    psi: PointFn<Vector>,
    d_psi: PointFn<Matrix>,
    d2_psi: PointFn<Tensor3>,
    target_connector: TryPointFn<Tensor3>,
    flat_target: bool,
}

impl fmt::Debug for MapSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MapSpec")
            .field("dim_p", &self.dim_p)
            .field("dim_q", &self.dim_q)
            .field("flat_target", &self.flat_target)
            .finish()
    }
}

impl MapSpec {
    /// `d2_psi` returns `q` slices of `p × p` Hessians; `target_connector`
    /// returns `q` slices of `q × q` coefficients.
    pub fn new<P, J, H, C>(dim_p: usize, dim_q: usize, psi: P, d_psi: J, d2_psi: H, target_connector: C) -> Self
    where
        P: Fn(&Vector) -> Vector + Send + Sync + 'static,
        J: Fn(&Vector) -> Matrix + Send + Sync + 'static,
        H: Fn(&Vector) -> Tensor3 + Send + Sync + 'static,
        C: Fn(&Vector) -> Tensor3 + Send + Sync + 'static,
    {
        Self {
            dim_p,
            dim_q,
            psi: Arc::new(psi),
            d_psi: Arc::new(d_psi),
            d2_psi: Arc::new(d2_psi),
            target_connector: Arc::new(move |y| Ok(target_connector(y))),
            flat_target: false,
        }
    }

    /// Identity map into Euclidean space (zero target connector).
    pub fn inclusion(p: usize) -> Self {
        Self {
            dim_p: p,
            dim_q: p,
            psi: Arc::new(|x| x.clone()),
            d_psi: Arc::new(move |_| Matrix::identity(p, p)),
            d2_psi: Arc::new(move |_| Tensor3::zeros(p, p)),
            target_connector: Arc::new(move |_| Ok(Tensor3::zeros(p, p))),
            flat_target: true,
        }
    }

    /// Identity map of the model's manifold onto itself, target connector
    /// equal to the model's connector.
    pub fn identity(model: &ModelSpec) -> Self {
        let p = model.dim();
        let m = model.clone();
        Self {
            dim_p: p,
            dim_q: p,
            psi: Arc::new(|x| x.clone()),
            d_psi: Arc::new(move |_| Matrix::identity(p, p)),
            d2_psi: Arc::new(move |_| Tensor3::zeros(p, p)),
            target_connector: Arc::new(move |y| connector(&m, y).map(|c| c.coeffs)),
            flat_target: false,
        }
    }

    /// Declares the target connector identically zero, so projection is `y + v`.
    pub fn with_flat_target(mut self) -> Self {
        self.flat_target = true;
        self
    }

    pub fn dim_p(&self) -> usize {
        self.dim_p
    }

    pub fn dim_q(&self) -> usize {
        self.dim_q
    }

    pub fn is_flat_target(&self) -> bool {
        self.flat_target
    }

    pub fn psi(&self, x: &Vector) -> Vector {
        (self.psi)(x)
    }

    pub fn jacobian(&self, x: &Vector) -> Matrix {
        (self.d_psi)(x)
    }

    pub fn hessian(&self, x: &Vector) -> Tensor3 {
        (self.d2_psi)(x)
    }

    pub fn target_connector(&self, y: &Vector) -> Result<Tensor3> {
        (self.target_connector)(y)
    }
}

/// Contraction of `∇dψ(x) = D²ψ − Dψ·Γ + Γ̄(Dψ ⊗ Dψ)` against `t`.
pub fn second_fundamental_form(mapspec: &MapSpec, connector_n: &Connector, x: &Vector, t: &Matrix) -> Result<Vector> {
    let p = mapspec.dim_p();
    if x.len() != p || connector_n.dim() != p || t.nrows() != p || t.ncols() != p {
        return Err(IlpError::DimensionMismatch {
            context: "second fundamental form",
            expected: p,
            got: if x.len() != p { x.len() } else { t.nrows() },
        });
    }
    let j = mapspec.jacobian(x);
    let y = mapspec.psi(x);
    let hess = mapspec.hessian(x).contract(t)?;
    let pulled = &j * connector_n.apply(t)?;
    let pushed = mapspec.target_connector(&y)?.contract(&(&j * t * j.transpose()))?;
    Ok(hess - pulled + pushed)
}

/// `½ Σ h_βγ (J α Jᵀ)^βγ`.
pub fn energy_density(mapspec: &MapSpec, metric_h: &Matrix, model: &ModelSpec, x: &Vector) -> Result<f64> {
    let q = mapspec.dim_q();
    if metric_h.nrows() != q || metric_h.ncols() != q {
        return Err(IlpError::DimensionMismatch {
            context: "energy density metric",
            expected: q,
            got: metric_h.nrows(),
        });
    }
    let j = mapspec.jacobian(x);
    let pushed = &j * alpha(model, x) * j.transpose();
    Ok(0.5 * metric_h.dot(&pushed))
}
