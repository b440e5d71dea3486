//! `vhj`: batch runner for the vhj-core pipelines.
//!
//! Exit status: 0 when every verdict passes, 2 when a verdict fails,
//! 1 on an operational error (bad config, i/o, solver breakdown).

mod bundle;
mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser};

use crate::commands::Command;
use crate::error::{CliError, CliResult};

/// Environment variable naming the default output root.
const OUT_ROOT_VAR: &str = "VHJ_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "vhj",
    version,
    about = "Viscous Hamilton-Jacobi experiment runner"
)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config and the output root).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long)]
    jobs: Option<usize>,
    /// Seed of the sampling suites (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Root for relative output directories.
    #[arg(long, env = OUT_ROOT_VAR, default_value = "vhj-out")]
    out_root: PathBuf,
}

fn execute(cli: &Cli) -> CliResult<bool> {
    let c = &cli.common;
    let loaded = config::load(&c.config)?;
    let seed = c.seed.unwrap_or(loaded.config.seed);
    let out = match (&c.out, &loaded.config.output) {
        (Some(out), _) => out.clone(),
        (None, Some(dir)) => c.out_root.join(dir),
        (None, None) => {
            let stem = c
                .config
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "run".into());
            c.out_root.join(format!("{stem}-{}", cli.command.name()))
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = c.jobs {
        if jobs == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        pool = pool.num_threads(jobs);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))?;
    let passed = pool.install(|| commands::run(cli.command, &loaded, seed, &out))?;
    println!(
        "{}: {} ({})",
        cli.command.name(),
        if passed {
            "all verdicts passed"
        } else {
            "verdict failure"
        },
        out.display()
    );
    Ok(passed)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
