use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use chemostat_kit::{run_from_file, Command};

/// Regenerates chemostat simulation data: individual-based runs, the
/// population-balance solver, the classic ODE, Monod fits, ensembles.
#[derive(Debug, Parser)]
#[command(name = "chemostat-kit", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,

    /// JSON configuration file.
    #[arg(long, value_name = "FILE")]
    config: PathBuf,

    /// Override a configuration key, e.g. --set params.p_beta=3 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,

    /// Output directory (overrides `out`).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Also write SVG charts.
    #[arg(long)]
    plot: bool,

    /// Worker threads for ensembles and fits.
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run_from_file(cli.command, &cli.config, &cli.sets, cli.out.as_deref(), cli.workers, cli.plot) {
        Ok(outcome) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            println!("wrote {} file(s)", outcome.files.len());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("chemostat-kit {}: {e}", cli.command.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
