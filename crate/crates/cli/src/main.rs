//! `wspline`: command-line driver for spline interpolation of probability measures.
//!
//! Exit codes: 0 on success, 1 when outputs cannot be written or an oracle check fails, 2 for
//! configuration errors, 3 when a solver fails.

mod config;
mod oracle;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::Violation;
use crate::run::RunError;

const EXIT_OUTPUT: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "wspline", version, about = "Spline interpolation of probability measures")]
struct Cli {
    /// Run the exact-transport cross-checks (same as the `oracle` subcommand).
    #[arg(long)]
    oracle: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the configured problem and write frames, energies, trace and summary.
    Run { config: PathBuf },
    /// Report every problem of a configuration; prints nothing when it is valid.
    Validate { config: PathBuf },
    /// Cross-check the exact transport solvers on random small instances.
    Oracle {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Caps the rayon pool at `WSPLINE_THREADS` when set.
fn configure_threads() -> Result<(), Violation> {
    let Ok(raw) = std::env::var("WSPLINE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Violation::new("WSPLINE_THREADS", format!("expected a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Violation::new("WSPLINE_THREADS", e.to_string()))
}

fn report_violations(violations: &[Violation]) -> ExitCode {
    for v in violations {
        eprintln!("error: {v}");
    }
    ExitCode::from(EXIT_CONFIG)
}

fn cmd_run(path: &Path) -> ExitCode {
    let loaded = match config::load(path) {
        Ok(l) => l,
        Err(v) => return report_violations(&[v]),
    };
    match run::run(&loaded) {
        Ok(dir) => {
            println!("wrote {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(RunError::Config(vs)) => report_violations(&vs),
        Err(RunError::Solver(e)) => {
            eprintln!("solver failed: {e}");
            ExitCode::from(EXIT_SOLVER)
        }
        Err(RunError::Output(e)) => {
            eprintln!("cannot write output: {e}");
            ExitCode::from(EXIT_OUTPUT)
        }
    }
}

fn cmd_validate(path: &Path) -> ExitCode {
    let violations = match config::load(path) {
        Ok(l) => config::violations(&l),
        Err(v) => vec![v],
    };
    for v in &violations {
        println!("{v}");
    }
    if violations.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_CONFIG)
    }
}

fn cmd_oracle(seed: u64) -> ExitCode {
    let checks = oracle::run_oracles(seed);
    for c in &checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        println!("oracle {} [{status}] {}", c.name, c.detail);
    }
    if checks.iter().all(|c| c.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_OUTPUT)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(v) = configure_threads() {
        return report_violations(&[v]);
    }
    match (cli.command, cli.oracle) {
        (Some(Command::Run { config }), _) => cmd_run(&config),
        (Some(Command::Validate { config }), _) => cmd_validate(&config),
        (Some(Command::Oracle { seed }), _) => cmd_oracle(seed),
        (None, true) => cmd_oracle(0),
        (None, false) => {
            eprintln!("error: a subcommand is required (run, validate or oracle); see --help");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
