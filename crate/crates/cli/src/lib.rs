//! Batch front end: config loading, run/sweep dispatch, persisted outputs and the
//! check suites. `main.rs` and `bin/nck-check.rs` are thin wrappers over [`main_with`].

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

pub mod check;
pub mod constants;
pub mod functionals;
pub mod manifest;
pub mod run;
pub mod sweep;

/// Exit code for runtime and configuration errors.
pub const EXIT_ERROR: i32 = 1;
/// Exit code when every step ran but at least one check failed.
pub const EXIT_CHECKS_FAILED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "nck", version, about = "Condensate/normal-fluid kinetic runs and bound checks")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Global {
    /// Worker threads (default: all cores). Outputs are identical for a fixed count.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, env = "NCK_OUT_DIR")]
    pub out_dir: Option<PathBuf>,
    /// Multiplicative slack for all inequality checks (overrides the config).
    #[arg(long, global = true)]
    pub slack: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one evolution pipeline and write trajectory.csv, run.json, bounds.json.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Cartesian sweep over (n, refinement, xc, dtau); one run directory per cell.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Re-run the checks on a persisted trajectory.csv and write bounds.json.
    Check(check::CheckArgs),
    /// Weak-form functionals of a measure document, as JSON on stdout.
    Functionals {
        #[arg(long)]
        measure: PathBuf,
        /// Test function(s): one, x, pow:a, phi_eps:e, cap:k. Repeatable.
        #[arg(long, default_value = "one")]
        phi: Vec<String>,
    },
    /// Tables of the closed-form constants.
    Constants {
        #[arg(long)]
        json: bool,
    },
}

pub fn init_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            bail!("--threads must be >= 1");
        }
        // A second initialization in the same process is harmless; keep the first.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn out_dir(global: &Global, fallback: &str) -> PathBuf {
    global.out_dir.clone().unwrap_or_else(|| PathBuf::from(fallback))
}

/// Parse and execute; returns the process exit code. Errors are printed to stderr.
pub fn main_with(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    init_threads(cli.global.threads)?;
    match cli.command {
        Command::Run { config } => run::cmd_run(&config, &cli.global),
        Command::Sweep { config } => sweep::cmd_sweep(&config, &cli.global),
        Command::Check(args) => check::cmd_check(&args, &cli.global),
        Command::Functionals { measure, phi } => functionals::cmd_functionals(&measure, &phi),
        Command::Constants { json } => constants::cmd_constants(json),
    }
}

/// Read a TOML or JSON document by extension (anything but `.json` is TOML).
pub fn read_document<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let is_json = path.extension().is_some_and(|e| e == "json");
    if is_json {
        serde_json::from_str(&text).map_err(|e| anyhow!("{}: {e}", path.display()))
    } else {
        toml::from_str(&text).map_err(|e| anyhow!("{}: {e}", path.display()))
    }
}
