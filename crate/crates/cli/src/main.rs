//! `koopgen`: generate training data, learn generators, and run the
//! identification and Lyapunov experiments from the command line.

mod commands;
mod config;
mod expected;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use koopgen_core::{KoopError, LogPolicy};

use config::{parse_baseline, Overrides};

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn new(code: u8, message: String) -> Self {
        Self { code, message }
    }

    pub fn config(message: String) -> Self {
        Self::new(2, message)
    }
}

impl From<KoopError> for CliError {
    fn from(e: KoopError) -> Self {
        let code = match &e {
            KoopError::InvalidInput(_) | KoopError::Integrity(_) | KoopError::Io(_) | KoopError::BasisMismatch { .. } => 2,
            KoopError::BlowUp { .. }
            | KoopError::StepUnderflow { .. }
            | KoopError::TooManySteps { .. }
            | KoopError::SampleFailures { .. } => 3,
            KoopError::DegenerateFeatures { .. }
            | KoopError::NonDiagonalizable { .. }
            | KoopError::BranchCut { .. }
            | KoopError::ConvergenceFailure
            | KoopError::CoordinateNotInDictionary { .. } => 4,
        };
        Self::new(code, e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "koopgen", version, about = "Log-free generator learning for ODEs")]
struct Cli {
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true, env = "KOOPGEN_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    /// Principal logarithm; negative real eigenvalues get arg = pi.
    Principal,
    /// Refuse Koopman matrices with negative real eigenvalues.
    RejectNegativeReal,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a training set (X.csv, Y.csv, manifest) into <output>/dataset.
    Generate {
        #[command(flatten)]
        o: Overrides,
    },
    /// Fit the generator matrix L; optionally the Koopman-log baseline.
    Learn {
        #[command(flatten)]
        o: Overrides,
        /// Use a saved dataset instead of generating one.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Also fit K at sampling time s and write log(K)/s, e.g. `s=0.5`.
        #[arg(long, value_parser = parse_baseline)]
        baseline: Option<f64>,
        #[arg(long, value_enum, default_value = "principal")]
        log_policy: PolicyArg,
    },
    /// Recover the vector field from L (and from the baseline) as weight tables.
    Identify {
        #[command(flatten)]
        o: Overrides,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Baseline sampling time, e.g. `s=0.5`; defaults to the config value.
        #[arg(long, value_parser = parse_baseline)]
        baseline: Option<f64>,
    },
    /// Fit and verify a polynomial Lyapunov function of the reversed system.
    Lyapunov {
        #[command(flatten)]
        o: Overrides,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Verify these coefficients (CSV, one per dictionary entry) instead of fitting.
        #[arg(long)]
        theta_file: Option<PathBuf>,
        /// Exit with status 5 when verification fails.
        #[arg(long)]
        require_pass: bool,
    },
    /// Run the Van der Pol experiment end to end and compare with expected tables.
    Reproduce {
        #[command(flatten)]
        o: Overrides,
        /// Smaller grid (30 x 30) and lambda = 1e4, with looser tolerances.
        #[arg(long)]
        quick: bool,
        /// Expected-tables file; the committed one is used when absent.
        #[arg(long)]
        expected: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Generate { o } => commands::generate_cmd(&o),
        Command::Learn {
            o,
            dataset,
            baseline,
            log_policy,
        } => {
            let policy = match log_policy {
                PolicyArg::Principal => LogPolicy::Principal,
                PolicyArg::RejectNegativeReal => LogPolicy::RejectNegativeReal,
            };
            commands::learn_cmd(&o, dataset.as_ref(), baseline, policy)
        }
        Command::Identify { o, dataset, baseline } => commands::identify_cmd(&o, dataset.as_ref(), baseline),
        Command::Lyapunov {
            o,
            dataset,
            theta_file,
            require_pass,
        } => commands::lyapunov_cmd(&o, dataset.as_ref(), theta_file.as_ref(), require_pass),
        Command::Reproduce { o, quick, expected } => commands::reproduce_cmd(&o, quick, expected.as_ref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
