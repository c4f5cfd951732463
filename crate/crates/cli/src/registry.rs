//! Built-in models addressable by name from a config.

use std::sync::Arc;

use ilp_core::flow::VectorFieldSpec;
use ilp_core::mc::Projector;
use ilp_core::models::{default_linear_drift, default_linear_noise, linear_gaussian, polar_demo, scalar_ou};
use ilp_core::tracking::{sample_initial_state, tracking_model_with, TrackingDerivatives, TrackingParams};
use ilp_core::{Matrix, ModelSpec, Vector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Deserialize;

use crate::config::parse_params;
use crate::error::{CliError, Context};

pub const MODEL_NAMES: [&str; 4] = ["ts2-tracking", "scalar-ou", "linear-gaussian", "polar-demo"];

type Sampler = Box<dyn Fn(u64) -> Vector>;

/// A model resolved from the registry.
pub struct BuiltModel {
    pub name: String,
    pub model: ModelSpec,
    pub vf: VectorFieldSpec,
    pub projector: Option<Arc<Projector>>,
    /// Column labels, one per coordinate.
    pub labels: Vec<String>,
    sample_x0: Sampler,
}

impl std::fmt::Debug for BuiltModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BuiltModel").field("name", &self.name).field("labels", &self.labels).finish()
    }
}

impl BuiltModel {
    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn sample_x0(&self, seed: u64) -> Vector {
        (self.sample_x0)(seed)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Ts2Params {
    lambda: f64,
    gamma: f64,
    speed: f64,
    #[serde(default = "default_accel")]
    accel: f64,
    #[serde(default)]
    derivatives: Derivatives,
}

fn default_accel() -> f64 {
    50.0
}

#[derive(Deserialize, Default, Clone, Copy)]
#[serde(rename_all = "lowercase")]
enum Derivatives {
    #[default]
    Ambient,
    Tangent,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScalarParams {
    kappa: f64,
    s: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearParams {
    a: Option<Vec<Vec<f64>>>,
    s: Option<Vec<Vec<f64>>>,
}

fn square(name: &str, rows: &[Vec<f64>]) -> Result<Matrix, CliError> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(CliError::Config(format!("model.params.{name}: expected a non-empty square matrix")));
    }
    Ok(Matrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)))
}

fn labels(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

/// Looks up `name` and builds it from `[model.params]`.
pub fn build(name: &str, params: &toml::Table) -> Result<BuiltModel, CliError> {
    match name {
        "ts2-tracking" => {
            let p: Ts2Params = parse_params(name, params)?;
            if !(p.accel >= 0.0 && p.accel.is_finite()) {
                return Err(CliError::Config("model.params.accel: must be finite and >= 0".into()));
            }
            let tp = TrackingParams::new(p.lambda, p.gamma, p.speed).context("model.params")?;
            let mode = match p.derivatives {
                Derivatives::Ambient => TrackingDerivatives::Ambient,
                Derivatives::Tangent => TrackingDerivatives::Tangent,
            };
            let tm = tracking_model_with(&tp, mode).context("model.params")?;
            let (speed, accel) = (p.speed, p.accel);
            Ok(BuiltModel {
                name: name.into(),
                model: tm.model,
                vf: tm.vf,
                projector: Some(tm.projector),
                labels: ["v1", "v2", "v3", "a1", "a2", "a3"].iter().map(|s| s.to_string()).collect(),
                sample_x0: Box::new(move |seed| {
                    sample_initial_state(&mut ChaCha8Rng::seed_from_u64(seed), speed, accel).to_vector()
                }),
            })
        }
        "scalar-ou" => {
            let p: ScalarParams = parse_params(name, params)?;
            let w = scalar_ou(p.kappa, p.s).context("model.params")?;
            Ok(BuiltModel {
                name: name.into(),
                model: w.model,
                vf: w.vf,
                projector: w.projector,
                labels: vec!["x1".into()],
                sample_x0: Box::new(|seed| gaussian(&mut ChaCha8Rng::seed_from_u64(seed), 1)),
            })
        }
        "linear-gaussian" => {
            let p: LinearParams = parse_params(name, params)?;
            let a = match &p.a {
                Some(rows) => square("a", rows)?,
                None => default_linear_drift(),
            };
            let s = match &p.s {
                Some(rows) => square("s", rows)?,
                None => default_linear_noise(),
            };
            if a.nrows() != s.nrows() {
                return Err(CliError::Config("model.params: a and s must have the same size".into()));
            }
            let n = a.nrows();
            let w = linear_gaussian(a, s).context("model.params")?;
            Ok(BuiltModel {
                name: name.into(),
                model: w.model,
                vf: w.vf,
                projector: w.projector,
                labels: labels("x", n),
                sample_x0: Box::new(move |seed| gaussian(&mut ChaCha8Rng::seed_from_u64(seed), n)),
            })
        }
        "polar-demo" => {
            let p: ScalarParams = parse_params(name, params)?;
            let w = polar_demo(p.kappa, p.s).context("model.params")?;
            Ok(BuiltModel {
                name: name.into(),
                model: w.model,
                vf: w.vf,
                projector: w.projector,
                labels: vec!["r".into(), "theta".into()],
                sample_x0: Box::new(|seed| {
                    let z = gaussian(&mut ChaCha8Rng::seed_from_u64(seed), 2);
                    Vector::from_vec(vec![1.0 + z[0].abs(), z[1]])
                }),
            })
        }
        other => Err(CliError::Config(format!(
            "model.name: unknown model \"{other}\" (known: {})",
            MODEL_NAMES.join(", ")
        ))),
    }
}
