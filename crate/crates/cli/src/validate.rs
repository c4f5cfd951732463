//! Cross-module invariant suite behind `ilp validate`.

use std::fmt::Write as _;

use ilp_core::flow::flow_with_derivative;
use ilp_core::geometry::{alpha, connector, connector_from_metric, Connector, MapSpec};
use ilp_core::ilp::{conjugation_residual, covariance_path, ilp_full, lyapunov_residual, pullback_covariance};
use ilp_core::linalg::expm;
use ilp_core::mc::{variation_samples, RngPolicy};
use ilp_core::models::{default_linear_drift, default_linear_noise, linear_gaussian, polar_demo, scalar_ou};
use ilp_core::tracking::{ilp_tracking, sample_initial_state, tracking_model, TS2State, TrackingParams};
use ilp_core::{FlowGrid, Matrix, ModelSpec, Vector};
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CliError, Context};

/// Deliberate faults, used to confirm that the suite catches them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Inject {
    #[default]
    None,
    /// Negate the closed-form tracking connector.
    ConnectorSign,
    /// Compose transports as `τ(s,u)·τ(u,t)` instead of `τ(u,t)·τ(s,u)`.
    TauOrder,
}

impl std::str::FromStr for Inject {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Inject::None),
            "connector-sign" => Ok(Inject::ConnectorSign),
            "tau-order" => Ok(Inject::TauOrder),
            other => Err(format!("unknown fault \"{other}\" (expected connector-sign or tau-order)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    AtMost,
    AtLeast,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub threshold: f64,
    pub bound: Bound,
}

impl Check {
    fn new(name: &'static str, value: f64, bound: Bound, threshold: f64) -> Self {
        Check {
            name,
            value,
            threshold,
            bound,
        }
    }

    pub fn passed(&self) -> bool {
        match self.bound {
            Bound::AtMost => self.value <= self.threshold,
            Bound::AtLeast => self.value >= self.threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationOutcome {
    pub checks: Vec<Check>,
}

impl ValidationOutcome {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<34} {:>14} {:>4} {:>10}  result", "check", "value", "", "threshold");
        for c in &self.checks {
            let op = match c.bound {
                Bound::AtMost => "<=",
                Bound::AtLeast => ">=",
            };
            let verdict = if c.passed() { "PASS" } else { "FAIL" };
            let _ = writeln!(s, "{:<34} {:>14.6e} {:>4} {:>10.1e}  {verdict}", c.name, c.value, op, c.threshold);
        }
        s
    }
}

fn reference_params() -> TrackingParams {
    TrackingParams::new(0.5, 5.2e3, 200.0).expect("valid parameters")
}

fn tracking_states(seed: u64, count: usize) -> Vec<TS2State> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| sample_initial_state(&mut rng, 200.0, 50.0)).collect()
}

fn uniform3(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::from_fn(|_, _| rng.random::<f64>() * 2.0 - 1.0)
}

/// Direction with `v·ζ_v = 0`, `ζ_a·v + ζ_v·a = 0` and `ζ_v·ζ_a = 0`.
fn tangent_probe(x: &TS2State, rng: &mut ChaCha8Rng) -> Vector {
    let s = x.v.norm_squared();
    let p = Matrix3::identity() - x.v * x.v.transpose() / s;
    let zv = p * uniform3(rng) * (x.v.norm() * 0.1);
    let w = x.v.cross(&zv);
    let w = if w.norm() > 0.0 { w.normalize() } else { w };
    let za = x.v * (-zv.dot(&x.a) / s) + w * (rng.random::<f64>() * 2.0 - 1.0) * 50.0;
    TS2State::new(zv, za).to_vector()
}

fn semigroup_residual(grid: &FlowGrid, inject: Inject) -> Result<f64, CliError> {
    let n = grid.steps();
    let mut worst = 0.0f64;
    for (s, u, t) in [(0, n / 2, n), (0, 1, n), (1, n / 3, n - 1), (0, n - 1, n), (n / 4, n / 2, 3 * n / 4)] {
        let first = grid.tau_between(s, u).context("transport")?;
        let second = grid.tau_between(u, t).context("transport")?;
        let composed = match inject {
            Inject::TauOrder => &first * &second,
            _ => &second * &first,
        };
        let direct = grid.tau_between(s, t).context("transport")?;
        worst = worst.max((composed - &direct).amax() / direct.amax().max(1.0));
    }
    Ok(worst)
}

fn tracking_model_for(p: &TrackingParams, inject: Inject) -> Result<ModelSpec, CliError> {
    let tm = tracking_model(p).context("tracking model")?;
    Ok(match inject {
        Inject::ConnectorSign => {
            let base = tm.model.clone();
            tm.model.with_connector(move |x| {
                let c = connector(&base, x).expect("closed-form connector");
                Connector {
                    coeffs: c.coeffs.scaled(-1.0),
                    point: x.clone(),
                }
            })
        }
        _ => tm.model,
    })
}

fn linear_model() -> Result<ilp_core::models::WiredModel, CliError> {
    linear_gaussian(default_linear_drift(), default_linear_noise()).context("linear model")
}

fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Runs every check; `threads` caps the Monte Carlo worker count.
pub fn run_validate(inject: Inject, threads: usize) -> Result<ValidationOutcome, CliError> {
    let mut checks = Vec::new();
    let lin = linear_model()?;
    let x_lin = Vector::from_vec(vec![1.0, 0.5]);
    let s0_lin = Matrix::from_row_slice(2, 2, &[0.2, 0.05, 0.05, 0.1]);

    let grid = flow_with_derivative(&lin.vf, &x_lin, 1.0, 50).context("flow")?;
    checks.push(Check::new("tau_semigroup_linear", semigroup_residual(&grid, inject)?, Bound::AtMost, 1e-8));

    let p = reference_params();
    let tm = tracking_model(&p).context("tracking model")?;
    let x_trk = tracking_states(1, 1)[0].to_vector();
    let grid = flow_with_derivative(&tm.vf, &x_trk, 1.0, 25).context("flow")?;
    checks.push(Check::new("tau_semigroup_tracking", semigroup_residual(&grid, inject)?, Bound::AtMost, 1e-8));

    let model = tracking_model_for(&p, inject)?;
    let g2 = p.gamma_noise * p.gamma_noise;
    let mut worst = 0.0f64;
    for s in tracking_states(42, 100) {
        let x = s.to_vector();
        let r = connector(&model, &x).context("connector")?.apply(&alpha(&model, &x)).context("connector")?;
        worst = worst.max(r.amax() / g2);
    }
    checks.push(Check::new("connector_annihilates_alpha", worst, Bound::AtMost, 1e-10));

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for s in tracking_states(3, 10) {
        let x = s.to_vector();
        let closed = connector(&model, &x).context("connector")?;
        let generic = connector_from_metric(&model, &x).context("connector")?;
        let normal = Matrix::from_columns(&[
            TS2State::new(s.v, Vector3::zeros()).to_vector(),
            TS2State::new(s.a, s.v).to_vector(),
        ]);
        let q = normal.qr().q();
        for _ in 0..5 {
            let z = tangent_probe(&s, &mut rng);
            let a = closed.bilinear(&z, &z).context("connector")?;
            let b = generic.bilinear(&z, &z).context("connector")?;
            let diff = &a - &b;
            let tangential = &diff - &q * (q.transpose() * &diff);
            worst = worst.max(tangential.norm() / a.norm().max(b.norm()).max(1e-12));
        }
    }
    checks.push(Check::new("connector_matches_metric", worst, Bound::AtMost, 1e-6));

    let polar = polar_demo(1.0, 0.7).context("polar model")?;
    let mut worst = 0.0f64;
    for &(r, th) in &[(0.3, 0.0), (1.0, 1.2), (2.5, -2.0)] {
        let c = connector(&polar.model, &Vector::from_vec(vec![r, th])).context("connector")?.coeffs;
        let expected = [(0, 1, 1, -r), (1, 0, 1, 1.0 / r), (1, 1, 0, 1.0 / r)];
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let want = expected
                        .iter()
                        .find(|e| (e.0, e.1, e.2) == (k, i, j))
                        .map_or(0.0, |e| e.3);
                    worst = worst.max((c.get(k, i, j) - want).abs());
                }
            }
        }
    }
    checks.push(Check::new("polar_christoffel", worst, Bound::AtMost, 1e-8));

    let grid = flow_with_derivative(&lin.vf, &x_lin, 1.0, 200).context("flow")?;
    let cov = covariance_path(&lin.model, &grid, &s0_lin).context("covariance")?;
    let pi = pullback_covariance(&lin.model, &grid, &s0_lin).context("covariance")?;
    let conj = conjugation_residual(&grid, &cov, &pi).context("covariance")?;
    checks.push(Check::new("conjugation_linear", conj, Bound::AtMost, 1e-9));

    let ns = [50usize, 100, 200, 400];
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &n in &ns {
        let grid = flow_with_derivative(&lin.vf, &x_lin, 1.0, n).context("flow")?;
        let cov = covariance_path(&lin.model, &grid, &s0_lin).context("covariance")?;
        xs.push((1.0 / n as f64).ln());
        ys.push(lyapunov_residual(&lin.model, &grid, &cov).context("covariance")?.ln());
    }
    checks.push(Check::new("lyapunov_refinement_slope", ols_slope(&xs, &ys), Bound::AtLeast, 0.8));

    let ou = scalar_ou(0.9, 0.7).context("ou model")?;
    let grid = flow_with_derivative(&ou.vf, &Vector::from_element(1, 1.0), 1.0, 25).context("flow")?;
    let s0 = Matrix::from_element(1, 1, 0.2);
    let cov = covariance_path(&ou.model, &grid, &s0).context("covariance")?;
    let sim = variation_samples(&grid, &ou.model, &ou.vf, &s0, 10_000, RngPolicy::new(2), threads, 8)
        .context("variation samples")?;
    checks.push(Check::new(
        "variation_covariance_ou",
        ilp_core::linalg::relative_frobenius(&sim.covariance, cov.terminal()),
        Bound::AtMost,
        0.05,
    ));

    let grid = flow_with_derivative(&tm.vf, &x_trk, 1.0, 25).context("flow")?;
    let zero6 = Matrix::zeros(6, 6);
    let cov = covariance_path(&tm.model, &grid, &zero6).context("covariance")?;
    let sim = variation_samples(&grid, &tm.model, &tm.vf, &zero6, 10_000, RngPolicy::new(3), threads, 8)
        .context("variation samples")?;
    checks.push(Check::new(
        "variation_covariance_tracking",
        ilp_core::linalg::relative_frobenius(&sim.covariance, cov.terminal()),
        Bound::AtMost,
        0.05,
    ));

    let mut worst = 0.0f64;
    for s in tracking_states(100, 10) {
        let special = ilp_tracking(&s, &p, 1.0, 25).context("specialized ilp")?;
        let grid = flow_with_derivative(&tm.vf, &s.to_vector(), 1.0, 25).context("flow")?;
        let (_, generic) = ilp_full(&tm.model, &tm.vf, &MapSpec::inclusion(6), &grid, &zero6).context("ilp")?;
        for (a, b) in special.series.iter().zip(&generic.series) {
            worst = worst.max((a - b).norm() / b.norm().max(f64::MIN_POSITIVE));
        }
    }
    checks.push(Check::new("specialized_vs_generic_ilp", worst, Bound::AtMost, 1e-8));

    let grid = flow_with_derivative(&lin.vf, &x_lin, 1.0, 1000).context("flow")?;
    let (_, r) = ilp_full(&lin.model, &lin.vf, &MapSpec::inclusion(2), &grid, &s0_lin).context("ilp")?;
    checks.push(Check::new("linear_ilp_tangent", r.tangent.amax(), Bound::AtMost, 1e-12));
    let mean = expm(&default_linear_drift()) * &x_lin;
    let gap = r.projected.map_or(f64::INFINITY, |y| (y - mean).amax());
    checks.push(Check::new("linear_projection_vs_mean", gap, Bound::AtMost, 1e-8));

    Ok(ValidationOutcome { checks })
}
