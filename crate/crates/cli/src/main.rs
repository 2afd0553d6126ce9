mod args;
mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;
use marrr::{MarrrError, Result};

use args::{Cli, Command};

/// Caps the worker pool used by parallel kernels.
fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var("MARRR_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| MarrrError::Config(format!("MARRR_THREADS must be a positive integer, found {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| MarrrError::Config(format!("cannot size the thread pool: {e}")))
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    let name = cli.command.name();
    let file = cli.config.as_deref().map(|p| config::load_file(p, name)).transpose()?;
    match cli.command {
        Command::Fit(a) => commands::fit(config::merge(&a, file)?),
        Command::Impute(a) => commands::impute(config::merge(&a, file)?),
        Command::Simulate(a) => commands::simulate(config::merge(&a, file)?),
        Command::SelectModules(a) => commands::select_modules(config::merge(&a, file)?),
        Command::Penalties(a) => commands::penalties(config::merge(&a, file)?),
        Command::Benchmark(a) => commands::benchmark(config::merge(&a, file)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
