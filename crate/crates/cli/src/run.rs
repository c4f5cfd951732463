//! `run-ilp`, `run-mc` and `compare`.

use std::fmt::Write as _;
use std::sync::Arc;

use ilp_core::flow::flow_with_derivative;
use ilp_core::geometry::{MapSpec, DEFAULT_GEODESIC_STEPS};
use ilp_core::ilp::{ilp_full, ilp_project_series};
use ilp_core::mc::{gaussian_initial, mc_mean, InitialState, McOptions};
use ilp_core::{McSummary, Vector};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Context};
use crate::output::{write_file, Report, Table};
use crate::registry::{build, BuiltModel};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Worker cap from `ILP_THREADS`; 0 means the pool default.
pub fn threads_from_env() -> Result<usize, CliError> {
    match std::env::var("ILP_THREADS") {
        Ok(v) if v.trim().is_empty() => Ok(0),
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("ILP_THREADS: expected a non-negative integer, got \"{v}\""))),
        Err(_) => Ok(0),
    }
}

/// Flow, propagated covariance and ILP on the configured grid.
#[derive(Debug, Clone, PartialEq)]
pub struct IlpRun {
    pub times: Vec<f64>,
    /// Flow of the intrinsic drift, `x_t`.
    pub ode: Vec<Vector>,
    /// ILP tangent `m_t`.
    pub tangent: Vec<Vector>,
    /// `x_t` moved along `m_t` in the target.
    pub projected: Vec<Vector>,
    pub x0: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSummary {
    pub label: String,
    pub mad_ilp: f64,
    pub mad_ode: f64,
    pub ilp_within: usize,
    pub ode_within: usize,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRun {
    pub ilp: IlpRun,
    pub mc: McSummary,
    /// `|ILP − mean|` per time.
    pub dev_ilp: Vec<Vector>,
    /// `|ODE − mean|` per time.
    pub dev_ode: Vec<Vector>,
    pub components: Vec<ComponentSummary>,
}

/// Half-width of the stderr band used for coverage counts.
pub const BAND_STDERRS: f64 = 2.0;

fn initial_point(cfg: &ExperimentConfig, m: &BuiltModel) -> Result<Vector, CliError> {
    let x0 = match (cfg.explicit_x0(), cfg.run.x0_seed) {
        (Some(x), _) => x,
        (None, Some(seed)) => m.sample_x0(seed),
        (None, None) => return Err(CliError::Config("run: one of x0 or x0_seed is required".into())),
    };
    if x0.len() != m.dim() {
        return Err(CliError::Config(format!(
            "run.x0: model {} has dimension {}, got {} entries",
            m.name,
            m.dim(),
            x0.len()
        )));
    }
    Ok(x0)
}

pub fn compute_ilp(cfg: &ExperimentConfig, m: &BuiltModel) -> Result<IlpRun, CliError> {
    let x0 = initial_point(cfg, m)?;
    let sigma0 = cfg.sigma0_matrix(m.dim())?;
    let map = MapSpec::inclusion(m.dim());
    let grid = flow_with_derivative(&m.vf, &x0, cfg.run.delta, cfg.run.steps).context("flow")?;
    let (_, result) = ilp_full(&m.model, &m.vf, &map, &grid, &sigma0).context("ilp")?;
    let projected = ilp_project_series(&map, &result, DEFAULT_GEODESIC_STEPS).context("ilp projection")?;
    Ok(IlpRun {
        times: grid.times.clone(),
        ode: result.base_series.clone(),
        tangent: result.series.clone(),
        projected,
        x0,
    })
}

pub fn compute_mc(cfg: &ExperimentConfig, m: &BuiltModel, threads: usize) -> Result<McSummary, CliError> {
    cfg.require_mc()?;
    let x0 = initial_point(cfg, m)?;
    let initial = if cfg.sigma0_is_zero() {
        InitialState::Fixed(x0)
    } else {
        let sigma0 = cfg.sigma0_matrix(m.dim())?;
        match (gaussian_initial(x0, &sigma0), &m.projector) {
            (InitialState::Sampled(draw), Some(proj)) => {
                let proj = Arc::clone(proj);
                InitialState::Sampled(Arc::new(move |rng| {
                    let x = draw(rng);
                    proj(&x).unwrap_or(x)
                }))
            }
            (init, _) => init,
        }
    };
    let opts = McOptions::new(cfg.run.master_seed)
        .with_threads(threads)
        .with_substeps(cfg.run.substeps);
    mc_mean(
        &m.model,
        &initial,
        cfg.run.delta,
        cfg.run.steps,
        cfg.run.reps,
        &opts,
        m.projector.as_deref(),
    )
    .context("monte carlo")
}

pub fn compute_compare(cfg: &ExperimentConfig, m: &BuiltModel, threads: usize) -> Result<CompareRun, CliError> {
    let ilp = compute_ilp(cfg, m)?;
    let mc = compute_mc(cfg, m, threads)?;
    let p = m.dim();
    let dev_ilp: Vec<Vector> = ilp.projected.iter().zip(&mc.mean).map(|(a, b)| (a - b).abs()).collect();
    let dev_ode: Vec<Vector> = ilp.ode.iter().zip(&mc.mean).map(|(a, b)| (a - b).abs()).collect();
    let n = mc.times.len();
    let components = (0..p)
        .map(|c| {
            let within = |dev: &[Vector]| {
                dev.iter()
                    .zip(&mc.stderr)
                    .filter(|(d, se)| d[c] <= BAND_STDERRS * se[c])
                    .count()
            };
            ComponentSummary {
                label: m.labels[c].clone(),
                mad_ilp: dev_ilp.iter().map(|d| d[c]).sum::<f64>() / n as f64,
                mad_ode: dev_ode.iter().map(|d| d[c]).sum::<f64>() / n as f64,
                ilp_within: within(&dev_ilp),
                ode_within: within(&dev_ode),
                points: n,
            }
        })
        .collect();
    Ok(CompareRun {
        ilp,
        mc,
        dev_ilp,
        dev_ode,
        components,
    })
}

fn labelled(prefix: &str, labels: &[String]) -> Vec<String> {
    labels.iter().map(|l| format!("{prefix}_{l}")).collect()
}

pub fn ilp_table(run: &IlpRun, labels: &[String]) -> Table {
    let mut header = vec!["time".to_string()];
    header.extend(labelled("x", labels));
    header.extend(labelled("m", labels));
    header.extend(labelled("projected", labels));
    let mut t = Table::new(header);
    for i in 0..run.times.len() {
        let mut row = vec![run.times[i]];
        row.extend(run.ode[i].iter());
        row.extend(run.tangent[i].iter());
        row.extend(run.projected[i].iter());
        t.push(row);
    }
    t
}

pub fn mc_table(mc: &McSummary, labels: &[String]) -> Table {
    let mut header = vec!["time".to_string()];
    header.extend(labelled("mean", labels));
    header.extend(labelled("stderr", labels));
    let mut t = Table::new(header);
    for i in 0..mc.times.len() {
        let mut row = vec![mc.times[i]];
        row.extend(mc.mean[i].iter());
        row.extend(mc.stderr[i].iter());
        t.push(row);
    }
    t
}

pub fn compare_table(run: &CompareRun, labels: &[String]) -> Table {
    let mut header = vec!["time".to_string()];
    for prefix in ["mean", "stderr", "ode", "ilp", "dev_ilp", "dev_ode"] {
        header.extend(labelled(prefix, labels));
    }
    let mut t = Table::new(header);
    for i in 0..run.mc.times.len() {
        let mut row = vec![run.mc.times[i]];
        for v in [
            &run.mc.mean[i],
            &run.mc.stderr[i],
            &run.ilp.ode[i],
            &run.ilp.projected[i],
            &run.dev_ilp[i],
            &run.dev_ode[i],
        ] {
            row.extend(v.iter());
        }
        t.push(row);
    }
    t
}

fn header(title: &str, cfg: &ExperimentConfig) -> Report {
    let mut r = Report::new(title);
    r.field("version", format!("ilp-cli {VERSION}"))
        .field("model", &cfg.model.name)
        .field("master_seed", cfg.run.master_seed)
        .field("delta", cfg.run.delta)
        .field("steps", cfg.run.steps);
    r
}

fn vector_line(v: &Vector) -> String {
    v.iter().map(|c| format!("{c:.6e}")).collect::<Vec<_>>().join(" ")
}

pub fn ilp_report(cfg: &ExperimentConfig, run: &IlpRun) -> String {
    let mut r = header("ilp run", cfg);
    let last = run.times.len() - 1;
    r.field("x0", vector_line(&run.x0))
        .field("x_delta", vector_line(&run.ode[last]))
        .field("m_delta", vector_line(&run.tangent[last]))
        .field("projected_delta", vector_line(&run.projected[last]))
        .section("config", &cfg.echo());
    r.finish()
}

pub fn mc_report(cfg: &ExperimentConfig, mc: &McSummary) -> String {
    let mut r = header("monte carlo run", cfg);
    let last = mc.times.len() - 1;
    r.field("reps", mc.count)
        .field("substeps", cfg.run.substeps)
        .field("mean_delta", vector_line(&mc.mean[last]))
        .field("stderr_delta", vector_line(&mc.stderr[last]))
        .section("config", &cfg.echo());
    r.finish()
}

pub fn summary_block(run: &CompareRun) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<10} {:>14} {:>14} {:>12} {:>12}",
        "component", "mad_ilp", "mad_ode", "ilp_in_band", "ode_in_band"
    );
    for c in &run.components {
        let _ = writeln!(
            s,
            "{:<10} {:>14.6e} {:>14.6e} {:>12} {:>12}",
            c.label,
            c.mad_ilp,
            c.mad_ode,
            format!("{}/{}", c.ilp_within, c.points),
            format!("{}/{}", c.ode_within, c.points)
        );
    }
    s
}

pub fn compare_report(cfg: &ExperimentConfig, run: &CompareRun) -> String {
    let mut r = header("compare run", cfg);
    r.field("reps", run.mc.count)
        .field("substeps", cfg.run.substeps)
        .field("band", format!("±{BAND_STDERRS} stderr"))
        .section("deviation from monte carlo mean", &summary_block(run))
        .section("config", &cfg.echo());
    r.finish()
}

/// Writes `ilp.csv` and `ilp_report.txt`.
pub fn run_ilp(cfg: &ExperimentConfig) -> Result<IlpRun, CliError> {
    let m = build(&cfg.model.name, &cfg.model.params)?;
    let run = compute_ilp(cfg, &m)?;
    write_file(&cfg.output.dir, "ilp.csv", &ilp_table(&run, &m.labels).to_csv())?;
    write_file(&cfg.output.dir, "ilp_report.txt", &ilp_report(cfg, &run))?;
    Ok(run)
}

/// Writes `mc.csv` and `mc_report.txt`.
pub fn run_mc(cfg: &ExperimentConfig) -> Result<McSummary, CliError> {
    let m = build(&cfg.model.name, &cfg.model.params)?;
    let mc = compute_mc(cfg, &m, threads_from_env()?)?;
    write_file(&cfg.output.dir, "mc.csv", &mc_table(&mc, &m.labels).to_csv())?;
    write_file(&cfg.output.dir, "mc_report.txt", &mc_report(cfg, &mc))?;
    Ok(mc)
}

/// Writes `ilp.csv`, `mc.csv`, `compare.csv` and `compare_report.txt`.
pub fn run_compare(cfg: &ExperimentConfig) -> Result<CompareRun, CliError> {
    let m = build(&cfg.model.name, &cfg.model.params)?;
    let run = compute_compare(cfg, &m, threads_from_env()?)?;
    let dir = &cfg.output.dir;
    write_file(dir, "ilp.csv", &ilp_table(&run.ilp, &m.labels).to_csv())?;
    write_file(dir, "mc.csv", &mc_table(&run.mc, &m.labels).to_csv())?;
    write_file(dir, "compare.csv", &compare_table(&run, &m.labels).to_csv())?;
    write_file(dir, "compare_report.txt", &compare_report(cfg, &run))?;
    Ok(run)
}
