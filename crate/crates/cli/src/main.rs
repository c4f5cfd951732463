use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ilp_cli::output::write_file;
use ilp_cli::run::{summary_block, threads_from_env};
use ilp_cli::{run_compare, run_ilp, run_mc, run_validate, CliError, ExperimentConfig, Inject, Overrides};

#[derive(Parser)]
#[command(name = "ilp", version, about = "Intrinsic location parameter experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Flow, covariance and ILP series on the configured grid.
    RunIlp(RunArgs),
    /// Monte Carlo mean and standard error.
    RunMc(RunArgs),
    /// ILP and ODE against the Monte Carlo mean.
    Compare(RunArgs),
    /// Invariant suite; exits with status 4 if any check fails.
    Validate {
        /// Directory for validate_report.txt.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, hide = true, default_value = "none")]
        inject: Inject,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides run.master_seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        cfg.apply(&Overrides {
            out: self.out.clone(),
            seed: self.seed,
            reps: self.reps,
            steps: self.steps,
        })?;
        Ok(cfg)
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::RunIlp(args) => {
            let cfg = args.load()?;
            run_ilp(&cfg)?;
            println!("wrote {}", cfg.output.dir.join("ilp.csv").display());
        }
        Command::RunMc(args) => {
            let cfg = args.load()?;
            run_mc(&cfg)?;
            println!("wrote {}", cfg.output.dir.join("mc.csv").display());
        }
        Command::Compare(args) => {
            let cfg = args.load()?;
            let run = run_compare(&cfg)?;
            print!("{}", summary_block(&run));
            println!("wrote {}", cfg.output.dir.join("compare.csv").display());
        }
        Command::Validate { out, inject } => {
            let outcome = run_validate(inject, threads_from_env()?)?;
            let table = outcome.table();
            print!("{table}");
            if let Some(dir) = out {
                write_file(&dir, "validate_report.txt", &table)?;
            }
            if !outcome.all_passed() {
                let failed: Vec<&str> = outcome.checks.iter().filter(|c| !c.passed()).map(|c| c.name).collect();
                return Err(CliError::Validation(failed.join(", ")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
