use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Result};
use nck_core::evolution::RunConfig;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::manifest::config_hash;
use crate::run::{execute, Written};
use crate::{out_dir, read_document, Global, EXIT_CHECKS_FAILED};

/// Axes left empty keep the base value.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Axes {
    pub n: Vec<u32>,
    pub refinement: Vec<u32>,
    pub xc: Vec<f64>,
    pub dtau: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: RunConfig,
    #[serde(default)]
    pub axes: Axes,
}

/// Cells in lexicographic order (n slowest, dtau fastest).
pub fn cells(sc: &SweepConfig) -> Vec<RunConfig> {
    let b = &sc.base;
    let or = |v: &[u32], d: u32| if v.is_empty() { vec![d] } else { v.to_vec() };
    let ns = or(&sc.axes.n, b.n);
    let refs = or(&sc.axes.refinement, b.grid.refinement);
    let xcs: Vec<Option<f64>> =
        if sc.axes.xc.is_empty() { vec![b.xc] } else { sc.axes.xc.iter().map(|&x| Some(x)).collect() };
    let dts = if sc.axes.dtau.is_empty() { vec![b.dtau] } else { sc.axes.dtau.clone() };
    let mut out = Vec::new();
    for &n in &ns {
        for &r in &refs {
            for &xc in &xcs {
                for &dt in &dts {
                    let mut c = b.clone();
                    c.n = n;
                    c.grid.refinement = r;
                    c.xc = xc;
                    c.dtau = dt;
                    out.push(c);
                }
            }
        }
    }
    out
}

struct CellResult {
    status: String,
    steps: usize,
    tau_final: f64,
    n_final: f64,
    energy_drift: f64,
    mass_drift: f64,
    failures: usize,
}

fn max_rel_drift(v: &[f64]) -> f64 {
    let base = v.first().copied().unwrap_or(0.0);
    v.iter().map(|x| ((x - base) / base).abs()).fold(0.0, f64::max)
}

fn summarize(w: &Written) -> Result<CellResult> {
    let tr = &w.pipeline.trajectory;
    let n = tr.col("n")?;
    Ok(CellResult {
        status: if w.failed() { "FAILED".into() } else { "PASSED".into() },
        steps: w.pipeline.run.steps,
        tau_final: w.pipeline.run.final_state.tau,
        n_final: n.iter().rev().copied().find(|v| v.is_finite()).unwrap_or(f64::NAN),
        energy_drift: max_rel_drift(&tr.col("M1_h")?),
        mass_drift: max_rel_drift(&tr.col("M0_G")?),
        failures: w.pipeline.failures().len(),
    })
}

pub fn cmd_sweep(config: &Path, global: &Global) -> Result<i32> {
    let sc: SweepConfig = read_document(config)?;
    let base = config.parent().map(Path::to_path_buf).unwrap_or_default();
    let root = out_dir(global, "nck-sweep");
    let cells = cells(&sc);
    if cells.is_empty() {
        bail!("sweep has no cells");
    }
    fs::create_dir_all(&root)?;
    let results: Vec<(RunConfig, Result<CellResult>)> = cells
        .into_par_iter()
        .enumerate()
        .map(|(i, c)| {
            let dir = root.join(format!("cell_{i:03}"));
            let r = execute(&c, &base, &dir, global.slack).and_then(|w| summarize(&w));
            if let Err(e) = &r {
                // Keep the cell directory self-describing even when the run aborted.
                let _ = fs::create_dir_all(&dir);
                let _ = fs::write(dir.join("error.txt"), format!("# manifest={}\n{e:#}\n", config_hash(&c)));
            }
            (c, r)
        })
        .collect();

    let sweep_hash = config_hash(&sc);
    let mut csv = format!("# manifest={sweep_hash}\ncell,n,refinement,xc,dtau,config_hash,status,steps,tau_final,n_final,energy_drift,mass_drift,failures\n");
    let mut any_fail = false;
    let mut any_error = false;
    for (i, (c, r)) in results.iter().enumerate() {
        let xc = c.xc.map(|x| x.to_string()).unwrap_or_default();
        let head = format!("cell_{i:03},{},{},{xc},{},{}", c.n, c.grid.refinement, c.dtau, config_hash(c));
        match r {
            Ok(s) => {
                any_fail |= s.failures > 0;
                let _ = writeln!(
                    csv,
                    "{head},{},{},{},{},{},{},{}",
                    s.status, s.steps, s.tau_final, s.n_final, s.energy_drift, s.mass_drift, s.failures
                );
            }
            Err(e) => {
                any_error = true;
                eprintln!("cell_{i:03}: {e:#}");
                let _ = writeln!(csv, "{head},ERROR,,,,,,");
            }
        }
    }
    fs::write(root.join("summary.csv"), &csv)?;
    print!("{csv}");
    Ok(if any_error {
        crate::EXIT_ERROR
    } else if any_fail {
        EXIT_CHECKS_FAILED
    } else {
        0
    })
}
