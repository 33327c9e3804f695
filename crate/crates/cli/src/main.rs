//! `hlik`: fit, simulate, study, oracle and bench subcommands.
//!
//! Exit status: 0 success, 1 configuration error, 2 data error,
//! 3 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hlik_core::{Error, ErrorKind, Result};

use config::{BenchConfig, CommandConfig, FitConfig, OracleConfig, RunConfig, SimulateConfig, StudyRunConfig};

#[derive(Debug, Parser)]
#[command(name = "hlik", version, about = "Hierarchical-likelihood GLMM estimation")]
struct Cli {
    /// Worker threads; defaults to all cores. `1` gives the serial
    /// reference results.
    #[arg(long, global = true, env = "HLIK_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model to a dataset CSV.
    Fit(FitConfig),
    /// Generate a dataset from a scenario.
    Simulate(SimulateConfig),
    /// Run a replicated simulation study.
    Study(StudyRunConfig),
    /// Compare Laplace, AGH and the quadrature oracle at fixed parameters.
    Oracle(OracleConfig),
    /// Time fits over a size ladder and the parallel reduction.
    Bench(BenchConfig),
    /// Run a command described by a JSON configuration file.
    Run {
        config: PathBuf,
    },
    /// Print the JSON schemas, or write them to a directory.
    Schema {
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Re-read a versioned output document and summarize it.
    Inspect {
        path: PathBuf,
    },
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 1,
        ErrorKind::Data => 2,
        ErrorKind::Numerical => 3,
    }
}

fn init_threads(n: Option<usize>) -> Result<()> {
    let Some(n) = n else { return Ok(()) };
    if n == 0 {
        return Err(Error::Config("--threads must be positive".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<()> {
    let command = match cli.command {
        Command::Fit(c) => CommandConfig::Fit(c),
        Command::Simulate(c) => CommandConfig::Simulate(c),
        Command::Study(c) => CommandConfig::Study(c),
        Command::Oracle(c) => CommandConfig::Oracle(c),
        Command::Bench(c) => CommandConfig::Bench(c),
        Command::Run { config } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", config.display())))?;
            let cfg = RunConfig::from_json(&text)?;
            init_threads(cli.threads.or(cfg.threads))?;
            return commands::run_config(&cfg);
        }
        Command::Schema { out_dir } => return commands::schema_cmd(out_dir.as_deref()),
        Command::Inspect { path } => return commands::inspect_cmd(&path),
    };
    command.validate()?;
    init_threads(cli.threads)?;
    commands::run_command(&command)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hlik: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
