//! `kwc`: run phase-field control experiments from a JSON config.
//!
//! Exit status: 0 success, 1 solver failure (see `error.txt` in the output
//! directory), 2 configuration error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kwc_core::io::{load_config, run, Mode, Overrides};

#[derive(Parser)]
#[command(name = "kwc", version, about = "Phase-field state, adjoint and optimal-control solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment in the mode named by the config.
    Run(RunArgs),
    /// Run the verification suite on the problem described by the config.
    Verify(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config.
    config: PathBuf,
    /// Output directory (overrides `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for randomized checks (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Time step (overrides `tau`).
    #[arg(long)]
    tau: Option<f64>,
    /// Number of mesh cells (overrides `cells`).
    #[arg(long)]
    cells: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, mode) = match cli.command {
        Command::Run(a) => (a, None),
        Command::Verify(a) => (a, Some(Mode::Verify)),
    };
    let mut spec = match load_config(&args.config) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    spec.apply(&Overrides { mode, out: args.out, seed: args.seed, tau: args.tau, cells: args.cells });
    match run(&spec) {
        Ok(m) => {
            for w in &m.warnings {
                eprintln!("warning: {w}");
            }
            println!("{}", m.summary);
            println!("outputs written to {}", m.config.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
