//! `ksm` — drive simulations and verification experiments from TOML
//! configs, and re-audit stored trajectories.
//!
//! Exit codes: 0 success, 1 configuration/validation failure, 2 numerical
//! failure, 3 audit failure (a verified bound violated beyond slack).
//! Progress and findings go to stderr; data goes to files only.

mod audit;
mod commands;

use clap::{Parser, Subcommand};
use ksm_core::KsmError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "ksm", version, about = "Chemotaxis-consumption simulator and verification harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single trajectory with diagnostics and reports.
    Run(CommonArgs),
    /// Run the regularization sweep configured in the `sweep` section.
    Sweep(CommonArgs),
    /// Run the measure-data relaxation experiment configured in the `relax` section.
    Relax(CommonArgs),
    /// Run the refinement study configured in the `refine` section.
    Refine(CommonArgs),
    /// Re-audit a stored run directory without re-simulation.
    Check(CommonArgs),
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Path to the TOML configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides output.dir from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code_for(err: &KsmError) -> u8 {
    match err {
        KsmError::Config(_) | KsmError::Validation(_) | KsmError::Io(_) => 1,
        KsmError::Numerical(_) => 2,
        KsmError::Audit(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => commands::run(args.config.as_path(), args.out.as_deref()),
        Command::Sweep(args) => commands::sweep(args.config.as_path(), args.out.as_deref()),
        Command::Relax(args) => commands::relax(args.config.as_path(), args.out.as_deref()),
        Command::Refine(args) => commands::refine(args.config.as_path(), args.out.as_deref()),
        Command::Check(args) => commands::check(args.config.as_path(), args.out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("ksm: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
