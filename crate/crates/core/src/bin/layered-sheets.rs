use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use layered_sheets::cli::{run, Command, RunStatus};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Subcommand {
    /// Evolve a layered state and write checkpoints and step diagnostics.
    Simulate,
    /// Evolve the single reference sheet.
    Reference,
    /// Convergence of layered runs to the reference sheet as ε decreases.
    Converge,
    /// Two-sided jump relation of the layered velocity.
    Jump,
    /// Kernel lower bound and analyticity radii of a (possibly evolved) state.
    Diagnose,
}

/// Layered vortex-sheet simulator.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Args {
    #[arg(value_enum)]
    command: Subcommand,
    /// JSON configuration document.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads; 0 uses all available cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

fn main() -> ExitCode {
    let args = Args::parse();
    if args.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(args.threads).build_global() {
            eprintln!("error: cannot start {} threads: {e}", args.threads);
            return ExitCode::from(2);
        }
    }
    let config = match std::fs::read(&args.config) {
        Ok(bytes) => bytes,
        Err(e) => {
            eprintln!("config error: cannot read {}: {e}", args.config.display());
            return ExitCode::from(2);
        }
    };
    let command = match args.command {
        Subcommand::Simulate => Command::Simulate,
        Subcommand::Reference => Command::Reference,
        Subcommand::Converge => Command::Converge,
        Subcommand::Jump => Command::Jump,
        Subcommand::Diagnose => Command::Diagnose,
    };
    match run(command, &config, &args.out) {
        Ok(status) => {
            if let RunStatus::Halted(reason) = &status {
                eprintln!("halted: {reason}");
            }
            ExitCode::from(status.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
