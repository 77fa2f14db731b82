//! `rons-fp`: command-line front end for the mixture Fokker-Planck solver.

mod compare;
mod config;
mod output;
mod run;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::ConfigError;
use crate::run::{RunArgs, RunError};

const EXIT_SOLVER: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "rons-fp", version, about = "Fokker-Planck solver with shape-morphing Gaussian mixtures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a configuration and write its outputs.
    Run {
        config: PathBuf,
        /// Output directory; overrides `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed for random collocation grids and the SDE ensemble.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Also write timing.json with wall-clock measurements.
        #[arg(long)]
        timing: bool,
    },
    /// Compare moments of two outputs (run directories or moment CSV files).
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Write the report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a configuration without running it.
    Validate { config: PathBuf },
}

fn config_failure(e: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(EXIT_CONFIG)
}

fn load(path: &PathBuf) -> Result<config::RunConfig, ExitCode> {
    config::load(path).map_err(config_failure)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            threads,
            timing,
        } => {
            let cfg = match load(&config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            if let Some(k) = threads {
                if k == 0 {
                    return config_failure("--threads must be at least 1");
                }
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
                    eprintln!("error: cannot configure thread pool: {e}");
                    return ExitCode::from(EXIT_SOLVER);
                }
            }
            match run::execute(cfg, &RunArgs { out, seed, timing }) {
                Ok(dir) => {
                    println!("wrote {}", dir.display());
                    ExitCode::SUCCESS
                }
                Err(RunError::Config(errors)) => config_failure(ConfigError::Invalid(errors)),
                Err(RunError::Solver(e)) => {
                    eprintln!("solver error: {e}");
                    ExitCode::from(EXIT_SOLVER)
                }
                Err(RunError::Io(e)) => {
                    eprintln!("output error: {e}");
                    ExitCode::from(EXIT_SOLVER)
                }
            }
        }
        Command::Compare { a, b, out } => match compare::compare(&a, &b) {
            Ok(report) => match out {
                Some(path) => match output::write_json(&path, &report) {
                    Ok(()) => ExitCode::SUCCESS,
                    Err(e) => {
                        eprintln!("output error: {e}");
                        ExitCode::from(EXIT_SOLVER)
                    }
                },
                None => {
                    let text = serde_json::to_string_pretty(&report).expect("report serializes");
                    // A closed pipe (e.g. `| head`) is not an error worth reporting.
                    let _ = writeln!(std::io::stdout(), "{text}");
                    ExitCode::SUCCESS
                }
            },
            Err(e) => config_failure(e),
        },
        Command::Validate { config } => {
            let cfg = match load(&config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            match cfg.resolve() {
                Ok(_) => {
                    println!("{}: ok", config.display());
                    ExitCode::SUCCESS
                }
                Err(errors) => config_failure(ConfigError::Invalid(errors)),
            }
        }
    }
}
