//! Experiment configuration (TOML, unknown keys rejected).

use std::path::{Path, PathBuf};

use ilp_core::{Matrix, Vector};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub run: RunSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub name: String,
    #[serde(default)]
    pub params: toml::Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0_seed: Option<u64>,
    #[serde(default)]
    pub sigma0: Sigma0,
    pub delta: f64,
    pub steps: usize,
    pub reps: usize,
    pub master_seed: u64,
    /// Euler steps per reporting interval in Monte Carlo runs.
    #[serde(default = "one")]
    pub substeps: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sigma0 {
    Keyword(String),
    Matrix(Vec<Vec<f64>>),
}

impl Default for Sigma0 {
    fn default() -> Self {
        Sigma0::Keyword("zero".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: default_dir() }
    }
}

/// Command-line overrides applied after parsing.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub steps: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(dir) = &o.out {
            self.output.dir = dir.clone();
        }
        if let Some(seed) = o.seed {
            self.run.master_seed = seed;
        }
        if let Some(reps) = o.reps {
            self.run.reps = reps;
        }
        if let Some(steps) = o.steps {
            self.run.steps = steps;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let r = &self.run;
        if r.steps < 1 {
            return Err(CliError::Config("run.steps: must be at least 1".into()));
        }
        if !(r.delta > 0.0 && r.delta.is_finite()) {
            return Err(CliError::Config(format!("run.delta: must be finite and > 0, got {}", r.delta)));
        }
        if r.substeps < 1 {
            return Err(CliError::Config("run.substeps: must be at least 1".into()));
        }
        match (&r.x0, r.x0_seed) {
            (Some(_), Some(_)) => return Err(CliError::Config("run: give either x0 or x0_seed, not both".into())),
            (None, None) => return Err(CliError::Config("run: one of x0 or x0_seed is required".into())),
            (Some(x), None) if x.iter().any(|c| !c.is_finite()) => {
                return Err(CliError::Config("run.x0: entries must be finite".into()))
            }
            _ => {}
        }
        if let Sigma0::Keyword(k) = &r.sigma0 {
            if k != "zero" {
                return Err(CliError::Config(format!("run.sigma0: expected \"zero\" or a matrix, got \"{k}\"")));
            }
        }
        Ok(())
    }

    /// Monte Carlo runs need at least two trajectories.
    pub fn require_mc(&self) -> Result<(), CliError> {
        if self.run.reps < 2 {
            return Err(CliError::Config(format!("run.reps: must be at least 2, got {}", self.run.reps)));
        }
        Ok(())
    }

    pub fn sigma0_matrix(&self, dim: usize) -> Result<Matrix, CliError> {
        match &self.run.sigma0 {
            Sigma0::Keyword(_) => Ok(Matrix::zeros(dim, dim)),
            Sigma0::Matrix(rows) => {
                if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                    return Err(CliError::Config(format!("run.sigma0: expected a {dim}×{dim} matrix")));
                }
                let m = Matrix::from_fn(dim, dim, |i, j| rows[i][j]);
                if (&m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
                    return Err(CliError::Config("run.sigma0: matrix must be symmetric".into()));
                }
                if m.clone().symmetric_eigen().eigenvalues.min() < -1e-12 * m.amax().max(1.0) {
                    return Err(CliError::Config("run.sigma0: matrix must be positive semi-definite".into()));
                }
                Ok(m)
            }
        }
    }

    pub fn sigma0_is_zero(&self) -> bool {
        match &self.run.sigma0 {
            Sigma0::Keyword(_) => true,
            Sigma0::Matrix(rows) => rows.iter().flatten().all(|&v| v == 0.0),
        }
    }

    pub fn explicit_x0(&self) -> Option<Vector> {
        self.run.x0.as_ref().map(|x| Vector::from_column_slice(x))
    }

    /// Canonical TOML rendering, used for the report's config echo.
    pub fn echo(&self) -> String {
        toml::to_string(self).unwrap_or_else(|e| format!("# could not render config: {e}\n"))
    }
}

/// Typed view of `[model.params]`, with unknown keys rejected.
pub fn parse_params<T: serde::de::DeserializeOwned>(model: &str, params: &toml::Table) -> Result<T, CliError> {
    toml::Value::Table(params.clone())
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(format!("model.params for {model}: {e}")))
}
