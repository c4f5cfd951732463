//! Euler–Maruyama simulation, Monte Carlo summaries and the Gaussian
//! variation-process oracle.
//!
//! Every trajectory draws its increments from its own ChaCha8 stream keyed by
//! `(master_seed, trajectory_index)`. Trajectories are reduced in fixed blocks
//! of [`BLOCK_SIZE`] indices, each block accumulated sequentially and the
//! blocks merged in index order, so results do not depend on the number of
//! worker threads.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{IlpError, Result};
use crate::flow::{rk4_step, FlowGrid, VectorFieldSpec};
use crate::geometry::{alpha, connector, ModelSpec};
use crate::linalg::symmetrize;
use crate::{Matrix, Vector};

/// Trajectories per reduction block.
pub const BLOCK_SIZE: usize = 256;

/// Map applied after every Euler step to restore constraints.
pub type Projector = dyn Fn(&Vector) -> Result<Vector> + Send + Sync;

/// Draws an initial state from a trajectory's stream.
pub type InitialSampler = Arc<dyn Fn(&mut ChaCha8Rng) -> Vector + Send + Sync>;

/// Seeding of per-trajectory random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngPolicy {
    pub master_seed: u64,
}

impl RngPolicy {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    /// Independent stream for one trajectory.
    pub fn stream_for(&self, trajectory_index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(trajectory_index);
        rng
    }
}

/// Execution settings shared by the Monte Carlo drivers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McOptions {
    pub policy: RngPolicy,
    /// Worker threads; `0` lets rayon decide.
    pub threads: usize,
    /// Euler steps per reporting interval.
    pub substeps: usize,
}

impl McOptions {
    pub fn new(master_seed: u64) -> Self {
        Self {
            policy: RngPolicy::new(master_seed),
            threads: 0,
            substeps: 1,
        }
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = threads;
        self
    }

    pub fn with_substeps(mut self, substeps: usize) -> Self {
        self.substeps = substeps;
        self
    }
}

/// Starting point of each simulated trajectory.
#[derive(Clone)]
pub enum InitialState {
    Fixed(Vector),
    Sampled(InitialSampler),
}

impl InitialState {
    fn draw(&self, rng: &mut ChaCha8Rng) -> Vector {
        match self {
            InitialState::Fixed(x) => x.clone(),
            InitialState::Sampled(f) => f(rng),
        }
    }
}

/// `x0 + L z` with `L Lᵀ = Σ₀` and `z` standard normal.
pub fn gaussian_initial(x0: Vector, sigma0: &Matrix) -> InitialState {
    let root = psd_sqrt(sigma0);
    InitialState::Sampled(Arc::new(move |rng| {
        let z = standard_normal(rng, root.ncols());
        &x0 + &root * z
    }))
}

/// Componentwise mean and standard error of simulated paths.
#[derive(Debug, Clone, PartialEq)]
pub struct McSummary {
    pub times: Vec<f64>,
    pub mean: Vec<Vector>,
    pub stderr: Vec<Vector>,
    pub count: usize,
    pub seed: u64,
}

fn standard_normal<R: Rng>(rng: &mut R, n: usize) -> Vector {
    Vector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Symmetric square root of a PSD matrix, negative eigenvalues clipped.
fn psd_sqrt(m: &Matrix) -> Matrix {
    let eig = symmetrize(m).symmetric_eigen();
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * Matrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

fn check_finite(x: &Vector, context: &'static str, step: usize) -> Result<()> {
    if x.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(IlpError::NonFiniteState { context, step })
    }
}

fn check_grid_args(delta: f64, n: usize) -> Result<()> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(IlpError::InvalidArgument(format!("delta must be positive, got {delta}")));
    }
    if n == 0 {
        return Err(IlpError::InvalidArgument("at least one step is required".into()));
    }
    Ok(())
}

/// Euler scheme with externally supplied increments, recording every
/// `substeps`-th state.
#[allow(clippy::too_many_arguments)]
fn euler_core<D, S, W>(
    x0: &Vector,
    n: usize,
    substeps: usize,
    dt: f64,
    drift: D,
    diffusion: S,
    mut increment: W,
    projector: Option<&Projector>,
) -> Result<Vec<Vector>>
where
    D: Fn(&Vector) -> Result<Vector>,
    S: Fn(&Vector) -> Matrix,
    W: FnMut(usize) -> Vector,
{
    let mut path = Vec::with_capacity(n + 1);
    let mut x = match projector {
        Some(p) => p(x0)?,
        None => x0.clone(),
    };
    check_finite(&x, "simulation", 0)?;
    path.push(x.clone());
    for i in 0..n {
        for _ in 0..substeps {
            let s = diffusion(&x);
            let dw = increment(s.ncols());
            let mut next = &x + drift(&x)? * dt + s * dw;
            if let Some(p) = projector {
                next = p(&next)?;
            }
            x = next;
        }
        check_finite(&x, "simulation", i + 1)?;
        path.push(x.clone());
    }
    Ok(path)
}

/// One Euler–Maruyama path of `dX = b dt + σ dW` on `n` uniform steps.
pub fn euler_maruyama<R: Rng>(
    model: &ModelSpec,
    x0: &Vector,
    delta: f64,
    n: usize,
    rng: &mut R,
    projector: Option<&Projector>,
) -> Result<Vec<Vector>> {
    check_grid_args(delta, n)?;
    let dt = delta / n as f64;
    let scale = dt.sqrt();
    euler_core(
        x0,
        n,
        1,
        dt,
        |x| Ok(model.drift(x)),
        |x| model.diffusion(x),
        |m| standard_normal(rng, m) * scale,
        projector,
    )
}

/// `ζ = ½Γ(α)`, the drift correction of the ε-family.
pub fn family_correction(model: &ModelSpec, x: &Vector) -> Result<Vector> {
    Ok(connector(model, x)?.apply(&alpha(model, x))? * 0.5)
}

/// One Euler path of `dX = (ξ − ε²ζ) dt + ε σ dW`.
#[allow(clippy::too_many_arguments)]
pub fn intrinsic_family_path<R: Rng>(
    model: &ModelSpec,
    vf: &VectorFieldSpec,
    epsilon: f64,
    x0: &Vector,
    delta: f64,
    n: usize,
    rng: &mut R,
    projector: Option<&Projector>,
) -> Result<Vec<Vector>> {
    check_grid_args(delta, n)?;
    if !(epsilon >= 0.0) {
        return Err(IlpError::InvalidArgument(format!("epsilon must be non-negative, got {epsilon}")));
    }
    let dt = delta / n as f64;
    let scale = dt.sqrt();
    family_path_with(model, vf, epsilon, x0, n, dt, |m| standard_normal(rng, m) * scale, projector)
}

#[allow(clippy::too_many_arguments)]
fn family_path_with<W: FnMut(usize) -> Vector>(
    model: &ModelSpec,
    vf: &VectorFieldSpec,
    epsilon: f64,
    x0: &Vector,
    n: usize,
    dt: f64,
    increment: W,
    projector: Option<&Projector>,
) -> Result<Vec<Vector>> {
    let eps2 = epsilon * epsilon;
    let drift = |x: &Vector| -> Result<Vector> {
        let xi = vf.eval(x)?;
        if eps2 == 0.0 {
            return Ok(xi);
        }
        Ok(xi - family_correction(model, x)? * eps2)
    };
    euler_core(x0, n, 1, dt, drift, |x| model.diffusion(x) * epsilon, increment, projector)
}

/// Running mean and sum of squared deviations, per row and component.
#[derive(Debug, Clone)]
struct Moments {
    count: usize,
    mean: Vec<Vector>,
    m2: Vec<Vector>,
}

impl Moments {
    fn new(rows: usize, dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![Vector::zeros(dim); rows],
            m2: vec![Vector::zeros(dim); rows],
        }
    }

    fn push(&mut self, sample: &[Vector]) {
        self.count += 1;
        let c = self.count as f64;
        for ((mean, m2), x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(sample) {
            let d = x - &*mean;
            *mean += &d / c;
            let d2 = x - &*mean;
            *m2 += d.component_mul(&d2);
        }
    }

    fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        for i in 0..self.mean.len() {
            let d = &other.mean[i] - &self.mean[i];
            self.mean[i] += &d * (nb / n);
            self.m2[i] += &other.m2[i] + d.component_mul(&d) * (na * nb / n);
        }
        self.count += other.count;
    }

    fn stderr(&self) -> Vec<Vector> {
        let c = self.count as f64;
        self.m2.iter().map(|m| m.map(|s| (s / (c - 1.0)).max(0.0).sqrt() / c.sqrt())).collect()
    }
}

fn with_pool<T: Send, F: FnOnce() -> T + Send>(threads: usize, f: F) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| IlpError::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Mean and standard error over `reps` per-trajectory statistics, each a
/// list of `rows` vectors of length `dim`.
fn blocked_moments<F>(reps: usize, rows: usize, dim: usize, options: &McOptions, sample: F) -> Result<Moments>
where
    F: Fn(u64, &mut ChaCha8Rng) -> Result<Vec<Vector>> + Sync,
{
    let blocks = reps.div_ceil(BLOCK_SIZE);
    let policy = options.policy;
    let partial = with_pool(options.threads, || {
        (0..blocks)
            .into_par_iter()
            .map(|b| {
                let mut acc = Moments::new(rows, dim);
                for index in b * BLOCK_SIZE..((b + 1) * BLOCK_SIZE).min(reps) {
                    let mut rng = policy.stream_for(index as u64);
                    acc.push(&sample(index as u64, &mut rng)?);
                }
                Ok(acc)
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let mut total = Moments::new(rows, dim);
    for block in &partial {
        total.merge(block);
    }
    Ok(total)
}

/// Monte Carlo mean and standard error of `X` at the `n + 1` grid times.
///
/// Each reporting interval is simulated with `options.substeps` Euler steps.
pub fn mc_mean(
    model: &ModelSpec,
    initial: &InitialState,
    delta: f64,
    n: usize,
    reps: usize,
    options: &McOptions,
    projector: Option<&Projector>,
) -> Result<McSummary> {
    check_grid_args(delta, n)?;
    if reps < 2 {
        return Err(IlpError::InvalidArgument(format!("at least two trajectories are required, got {reps}")));
    }
    if options.substeps == 0 {
        return Err(IlpError::InvalidArgument("substeps must be positive".into()));
    }
    let p = model.dim();
    let dt = delta / (n * options.substeps) as f64;
    let scale = dt.sqrt();
    let moments = blocked_moments(reps, n + 1, p, options, |_, rng| {
        let x0 = initial.draw(rng);
        if x0.len() != p {
            return Err(IlpError::DimensionMismatch {
                context: "initial state",
                expected: p,
                got: x0.len(),
            });
        }
        euler_core(
            &x0,
            n,
            options.substeps,
            dt,
            |x| Ok(model.drift(x)),
            |x| model.diffusion(x),
            |m| standard_normal(rng, m) * scale,
            projector,
        )
    })?;
    let times = (0..=n).map(|i| if i == n { delta } else { delta * i as f64 / n as f64 }).collect();
    Ok(McSummary {
        times,
        stderr: moments.stderr(),
        mean: moments.mean,
        count: moments.count,
        seed: options.policy.master_seed,
    })
}

/// Simulated values of the variation process at `δ` and their covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationSamples {
    pub samples: Vec<Vector>,
    pub covariance: Matrix,
}

/// Samples `Λ_δ` from `dΛ = Dξ(x_t) Λ dt + σ(x_t) dW`, `Λ₀ ~ N(0, Σ₀)`.
///
/// The flow is re-integrated with RK4 on a grid `substeps` times finer than
/// `grid`, restarting from each grid point, and the linear SDE is advanced
/// with Euler steps on that fine grid. Neither the matrix exponential nor
/// the trapezoid recursion is involved.
#[allow(clippy::too_many_arguments)]
pub fn variation_samples(
    grid: &FlowGrid,
    model: &ModelSpec,
    vf: &VectorFieldSpec,
    sigma0: &Matrix,
    reps: usize,
    policy: RngPolicy,
    threads: usize,
    substeps: usize,
) -> Result<VariationSamples> {
    if reps < 2 {
        return Err(IlpError::InvalidArgument(format!("at least two samples are required, got {reps}")));
    }
    if substeps == 0 {
        return Err(IlpError::InvalidArgument("substeps must be positive".into()));
    }
    let p = grid.dim();
    let mut fine_a = Vec::with_capacity(grid.steps() * substeps);
    let mut fine_s = Vec::with_capacity(grid.steps() * substeps);
    let mut fine_h = Vec::with_capacity(grid.steps() * substeps);
    for i in 0..grid.steps() {
        let h = (grid.times[i + 1] - grid.times[i]) / substeps as f64;
        let mut x = grid.points[i].clone();
        for _ in 0..substeps {
            fine_a.push(vf.jacobian(&x)?);
            fine_s.push(model.diffusion(&x));
            fine_h.push(h);
            x = rk4_step(vf, &x, h)?;
        }
    }
    let root = psd_sqrt(sigma0);
    let samples = with_pool(threads, || {
        (0..reps)
            .into_par_iter()
            .map(|index| {
                let mut rng = policy.stream_for(index as u64);
                let mut lambda = &root * standard_normal(&mut rng, p);
                for ((a, s), &h) in fine_a.iter().zip(&fine_s).zip(&fine_h) {
                    let dw = standard_normal(&mut rng, s.ncols()) * h.sqrt();
                    lambda = &lambda + a * &lambda * h + s * dw;
                }
                check_finite(&lambda, "variation process", index)?;
                Ok(lambda)
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let count = samples.len() as f64;
    let mean = samples.iter().fold(Vector::zeros(p), |acc, s| acc + s) / count;
    let mut covariance = Matrix::zeros(p, p);
    for s in &samples {
        let d = s - &mean;
        covariance += &d * d.transpose();
    }
    covariance /= count - 1.0;
    Ok(VariationSamples { samples, covariance })
}

/// Monte Carlo estimate of `∂/∂(ε²) E[X^ε_δ]` at `ε = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonSlope {
    pub epsilons: [f64; 2],
    /// Difference quotients `(E[X^ε_δ] − x^0_δ)/ε²` for each ε.
    pub quotients: [Vector; 2],
    pub quotient_stderr: [Vector; 2],
    /// Richardson combination of the two quotients, removing the `ε²` term.
    pub extrapolated: Vector,
    pub extrapolated_stderr: Vector,
    pub count: usize,
}

/// Estimates the `ε²`-derivative of the family mean at `δ`.
///
/// Both ε values share each trajectory's increments, each increment
/// sequence is paired with its negation, and the deterministic `ε = 0`
/// Euler path is subtracted, so the per-trajectory quotient has `O(1)`
/// variance instead of `O(1/ε²)`.
#[allow(clippy::too_many_arguments)]
pub fn epsilon_slope(
    model: &ModelSpec,
    vf: &VectorFieldSpec,
    x0: &Vector,
    delta: f64,
    n: usize,
    epsilons: [f64; 2],
    reps: usize,
    options: &McOptions,
) -> Result<EpsilonSlope> {
    check_grid_args(delta, n)?;
    let [e1, e2] = epsilons;
    if !(e1 > 0.0 && e2 > 0.0 && e1 != e2) {
        return Err(IlpError::InvalidArgument(format!("need two distinct positive epsilons, got {e1}, {e2}")));
    }
    if reps < 2 {
        return Err(IlpError::InvalidArgument(format!("at least two trajectories are required, got {reps}")));
    }
    let p = model.dim();
    let dt = delta / n as f64;
    let scale = dt.sqrt();
    let channels = model.diffusion(x0).ncols();
    let base = family_path_with(model, vf, 0.0, x0, n, dt, Vector::zeros, None)?;
    let base_end = base.last().expect("path has points").clone();
    let (w1, w2) = (e2 * e2 / (e2 * e2 - e1 * e1), e1 * e1 / (e2 * e2 - e1 * e1));

    let moments = blocked_moments(reps, 3, p, options, |_, rng| {
        let increments: Vec<Vector> = (0..n).map(|_| standard_normal(rng, channels) * scale).collect();
        let mut quotients = Vec::with_capacity(3);
        for &eps in &[e1, e2] {
            let mut ends = Vector::zeros(p);
            for sign in [1.0, -1.0] {
                let mut k = 0;
                let path = family_path_with(
                    model,
                    vf,
                    eps,
                    x0,
                    n,
                    dt,
                    |m| {
                        let dw = &increments[k];
                        k += 1;
                        debug_assert_eq!(dw.len(), m);
                        dw * sign
                    },
                    None,
                )?;
                ends += path.last().expect("path has points");
            }
            quotients.push((ends * 0.5 - &base_end) / (eps * eps));
        }
        let extrapolated = &quotients[0] * w1 - &quotients[1] * w2;
        quotients.push(extrapolated);
        Ok(quotients)
    })?;
    let se = moments.stderr();
    Ok(EpsilonSlope {
        epsilons,
        quotients: [moments.mean[0].clone(), moments.mean[1].clone()],
        quotient_stderr: [se[0].clone(), se[1].clone()],
        extrapolated: moments.mean[2].clone(),
        extrapolated_stderr: se[2].clone(),
        count: moments.count,
    })
}
