use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use nck_core::analysis::{check_trajectory, BoundReport, CheckConfig, Verdict};
use nck_core::trajectory::Trajectory;

use crate::run::{print_reports, BoundsDoc};
use crate::{read_document, Global, EXIT_CHECKS_FAILED};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    /// Every check.
    Full,
    /// Conservation of energy and of the reconstructed mass and energy.
    Conservation,
    /// Everything except conservation.
    Bounds,
}

#[derive(Debug, Clone, Args)]
pub struct CheckArgs {
    /// Persisted trajectory.csv.
    pub trajectory: PathBuf,
    #[arg(long, value_enum, default_value = "full")]
    pub suite: Suite,
    /// Check parameters (TOML or JSON). Defaults to the `checks` table of the
    /// run.json next to the trajectory, then to built-in defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

const CONSERVATION: [&str; 3] = ["energy_conservation", "mass_of_H", "energy_of_H"];

pub fn in_suite(suite: Suite, name: &str) -> bool {
    let cons = CONSERVATION.contains(&name);
    match suite {
        Suite::Full => true,
        Suite::Conservation => cons,
        Suite::Bounds => !cons,
    }
}

fn sibling_checks(trajectory: &Path) -> Result<Option<CheckConfig>> {
    let p = trajectory.with_file_name("run.json");
    if !p.exists() {
        return Ok(None);
    }
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&p)?)?;
    match doc.pointer("/config/checks") {
        Some(v) => {
            Ok(Some(serde_json::from_value(v.clone()).with_context(|| format!("{}: config.checks", p.display()))?))
        }
        None => Ok(None),
    }
}

pub fn run_suite(tr: &Trajectory, cfg: &CheckConfig, suite: Suite) -> Result<Vec<BoundReport>> {
    Ok(check_trajectory(tr, cfg)?.into_iter().filter(|r| in_suite(suite, &r.name)).collect())
}

pub fn cmd_check(args: &CheckArgs, global: &Global) -> Result<i32> {
    let file = fs::File::open(&args.trajectory).with_context(|| format!("opening {}", args.trajectory.display()))?;
    let tr = Trajectory::read_csv(std::io::BufReader::new(file))?;
    let mut cfg = match &args.config {
        Some(p) => read_document(p)?,
        None => sibling_checks(&args.trajectory)?.unwrap_or_default(),
    };
    if let Some(s) = global.slack {
        cfg.slack = s;
    }
    let reports = run_suite(&tr, &cfg, args.suite)?;
    print_reports(&reports);
    let dir = match &global.out_dir {
        Some(d) => d.clone(),
        None => args.trajectory.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    fs::create_dir_all(&dir)?;
    let doc = BoundsDoc { manifest: &tr.manifest, reports: &reports };
    fs::write(dir.join("bounds.json"), serde_json::to_string_pretty(&doc)? + "\n")?;
    Ok(if reports.iter().any(|r| r.verdict == Verdict::Fail) { EXIT_CHECKS_FAILED } else { 0 })
}
