//! `optrace`: experiment driver for operator trace estimation.
//!
//! Exit codes: 0 on success, 1 when `validate` finds a violated inequality,
//! 2 for a bad configuration or any failure to run.

mod config;
mod output;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "optrace", version = output::VERSION, about = "Trace estimation for operators on function spaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Hutchinson and ContHutch++ convergence on explicit kernels.
    TraceToy(Common),
    /// Density of states of a 1D Schrödinger operator.
    Dos(Common),
    /// Mean field intensity in a photonic cross-section.
    Photonics(Common),
    /// Empirical checks of the theoretical bounds.
    Validate(Common),
}

#[derive(Args, Clone)]
pub struct Common {
    /// TOML file; absent keys keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, env = "OPTRACE_SEED")]
    pub seed: Option<u64>,
    /// Worker threads; defaults to one per core.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory; defaults to `out/<subcommand>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, common) = match &cli.command {
        Command::TraceToy(c) => ("trace-toy", c),
        Command::Dos(c) => ("dos", c),
        Command::Photonics(c) => ("photonics", c),
        Command::Validate(c) => ("validate", c),
    };
    if let Some(jobs) = common.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("out").join(name));
    let result = match &cli.command {
        Command::TraceToy(c) => run::trace_toy(c, &out),
        Command::Dos(c) => run::dos(c, &out),
        Command::Photonics(c) => run::photonics(c, &out),
        Command::Validate(c) => run::validate(c, &out),
    };
    match result {
        Ok(run::Outcome::Passed) => ExitCode::SUCCESS,
        Ok(run::Outcome::Violations(n)) => {
            eprintln!("{n} check(s) failed; see {}", out.display());
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
