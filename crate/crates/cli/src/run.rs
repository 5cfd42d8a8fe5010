use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use nck_core::analysis::{BoundReport, Verdict};
use nck_core::evolution::{g_table, run_pipeline_with, InitialData, Pipeline, RunConfig, SolverConfig};
use serde::Serialize;

use crate::manifest::{config_hash, now, RunManifest};
use crate::{out_dir, read_document, Global, EXIT_CHECKS_FAILED};

/// Load a run config; relative measure-file paths resolve against the config's directory.
pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let cfg: RunConfig = read_document(path)?;
    Ok(cfg)
}

fn resolve_paths(cfg: &mut RunConfig, base: &Path) {
    if let InitialData::MeasureFile { path, .. } = &mut cfg.initial_data {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

#[derive(Debug, Serialize)]
pub struct BoundsDoc<'a> {
    pub manifest: &'a str,
    pub reports: &'a [BoundReport],
}

#[derive(Debug, Serialize)]
struct RunDoc<'a> {
    manifest: &'a RunManifest,
    status: &'a str,
    config: &'a RunConfig,
    /// (n, mesh, xc): every condensate number depends on this triple.
    n: u32,
    mesh: f64,
    xc: f64,
    steps: usize,
    stop: nck_core::evolution::StopReason,
    tau_final: f64,
    tau_star: Option<f64>,
    tau_star_estimate: f64,
    first_violation: &'a Option<nck_core::evolution::Violation>,
    failures: Vec<String>,
    checks: Vec<(&'a str, Verdict)>,
}

/// Outcome of one pipeline written to disk.
pub struct Written {
    pub pipeline: Pipeline,
    pub manifest: RunManifest,
    pub dir: PathBuf,
}

impl Written {
    pub fn failed(&self) -> bool {
        !self.pipeline.failures().is_empty()
    }
}

/// Run one config into `dir`. `base` resolves relative paths inside the config.
pub fn execute(cfg: &RunConfig, base: &Path, dir: &Path, slack: Option<f64>) -> Result<Written> {
    let started = now();
    let mut cfg = cfg.clone();
    if let Some(s) = slack {
        cfg.checks.slack = s;
    }
    let hash = config_hash(&cfg);
    let mut resolved = cfg.clone();
    resolve_paths(&mut resolved, base);
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut scfg = SolverConfig::from_run(&resolved)?;
    scfg.dump_path = Some(dir.join("state_dump.json"));
    let dump = scfg.dump_path.clone();
    let pipeline = match run_pipeline_with(&resolved, scfg, &hash) {
        Ok(p) => p,
        Err(e) => {
            if let Some(p) = dump.filter(|p| p.exists()) {
                stamp_dump(&p, &hash);
            }
            return Err(e.into());
        }
    };

    let mut buf = Vec::new();
    pipeline.trajectory.write_csv(&mut buf)?;
    fs::write(dir.join("trajectory.csv"), buf)?;
    if !pipeline.g_samples.is_empty() {
        let mut t = g_table(&pipeline.g_samples, &pipeline.run.config.alphas)?;
        t.manifest = hash.clone();
        let mut buf = Vec::new();
        t.write_csv(&mut buf)?;
        fs::write(dir.join("trajectory_t.csv"), buf)?;
    }
    let bounds = BoundsDoc { manifest: &hash, reports: &pipeline.reports };
    fs::write(dir.join("bounds.json"), serde_json::to_string_pretty(&bounds)? + "\n")?;
    write_plots(dir, &hash)?;

    let manifest = RunManifest::new(hash.clone(), started, &pipeline.reports);
    let failures = pipeline.failures();
    let run = &pipeline.run;
    let doc = RunDoc {
        manifest: &manifest,
        status: if failures.is_empty() { "PASSED" } else { "FAILED" },
        config: &cfg,
        n: run.config.n,
        mesh: run.lattice.delta(),
        xc: run.config.xc,
        steps: run.steps,
        stop: run.stop,
        tau_final: run.final_state.tau,
        tau_star: pipeline.time.tau_star,
        tau_star_estimate: pipeline.time.tau_star_estimate,
        first_violation: &run.first_violation,
        failures,
        checks: pipeline.reports.iter().map(|r| (r.name.as_str(), r.verdict)).collect(),
    };
    fs::write(dir.join("run.json"), serde_json::to_string_pretty(&doc)? + "\n")?;
    Ok(Written { pipeline, manifest, dir: dir.to_path_buf() })
}

pub fn print_reports(reports: &[BoundReport]) {
    for r in reports {
        println!(
            "{:<16} {:<34} lhs={:<12.5e} rhs={:<12.5e} at {}={}",
            r.verdict.to_string(),
            r.name,
            r.lhs,
            r.rhs,
            r.axis,
            r.location
        );
    }
}

pub fn cmd_run(config: &Path, global: &Global) -> Result<i32> {
    let cfg = load_run_config(config)?;
    let base = config.parent().map(Path::to_path_buf).unwrap_or_default();
    let dir = out_dir(global, "nck-out");
    let w = execute(&cfg, &base, &dir, global.slack)?;
    print_reports(&w.pipeline.reports);
    if let Some(v) = &w.pipeline.run.first_violation {
        println!("in-run violation: {} at tau={} ({} > {})", v.name, v.tau, v.lhs, v.rhs);
    }
    println!("wrote {}", dir.display());
    Ok(if w.failed() { EXIT_CHECKS_FAILED } else { 0 })
}

const PLOTS: [(&str, &str); 3] = [
    ("condensate.gp", "set xlabel 't'\nset ylabel 'n(t)'\nplot '../trajectory.csv' using 't':'n' with lines title 'n(t)'\n"),
    (
        "moments.gp",
        "set xlabel 'tau'\nset logscale y\nplot for [c in 'M0_h M1_h M2_h M3_h'] '../trajectory.csv' using 'tau':c with lines title c\n",
    ),
    ("balance.gp", "set xlabel 't'\nset ylabel 'mu((0,t])'\nplot '../trajectory.csv' using 't':'mu' with lines title 'mu'\n"),
];

fn write_plots(dir: &Path, hash: &str) -> Result<()> {
    let plots = dir.join("plots");
    fs::create_dir_all(&plots)?;
    for (name, body) in PLOTS {
        let text = format!("# manifest={hash}\n# run from this directory: gnuplot -p {name}\nset datafile separator ','\nset key autotitle columnhead\n{body}");
        fs::write(plots.join(name), text)?;
    }
    Ok(())
}

/// The solver writes its failure dump without knowing the manifest; add it here.
fn stamp_dump(path: &Path, hash: &str) {
    let Ok(text) = fs::read_to_string(path) else { return };
    if let Ok(serde_json::Value::Object(mut m)) = serde_json::from_str(&text) {
        m.insert("manifest".into(), hash.into());
        let _ = fs::write(path, serde_json::Value::Object(m).to_string());
    }
}
