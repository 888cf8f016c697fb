//! `gark`: convergence studies, error estimates, adaptive campaigns and
//! self-checks from the command line.

mod cache;
mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use settings::{Command, Overrides, Settings};

#[derive(Parser)]
#[command(name = "gark", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fixed-step convergence of the forward and adjoint solutions.
    Converge(Opts),
    /// Temporal and spatial error estimates for one run.
    Estimate(Opts),
    /// Adaptive space-time refinement campaign.
    Refine(Opts),
    /// Adjoint and tableau checks on seeded random systems.
    OracleCheck(Opts),
}

#[derive(clap::Args)]
struct Opts {
    #[command(flatten)]
    flags: Overrides,
    /// JSON file whose keys override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (cmd, opts, run): (Command, Opts, fn(&Settings) -> anyhow::Result<bool>) = match cli.command {
        Cmd::Converge(o) => (Command::Converge, o, commands::converge),
        Cmd::Estimate(o) => (Command::Estimate, o, commands::estimate),
        Cmd::Refine(o) => (Command::Refine, o, commands::refine),
        Cmd::OracleCheck(o) => (Command::OracleCheck, o, commands::oracle_check),
    };
    let result = opts
        .flags
        .with_config(opts.config.as_deref())
        .and_then(|o| Settings::resolve(o, cmd))
        .and_then(|s| run(&s));
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
