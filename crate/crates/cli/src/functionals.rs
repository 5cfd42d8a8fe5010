use std::path::Path;

use anyhow::{Context, Result};
use nck_core::measure::RadialMeasure;
use nck_core::testfn::TestFunction;
use nck_core::weakops::{q3, q4_full, q4_script, Q4Value};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct FunctionalsDoc {
    pub phi: String,
    pub q3: f64,
    pub q3_tilde: f64,
    pub q3_quadratic: f64,
    pub q3_linear: f64,
    pub q3_linear_tilde: f64,
    pub half_moment: f64,
    pub identity_residual: f64,
    pub tol: f64,
    /// Present for purely atomic measures.
    pub q4_full: Option<Q4Value>,
    /// Present for atomic measures without an atom at 0.
    pub q4_script: Option<Q4Value>,
}

pub fn evaluate(mu: &RadialMeasure, phi: &str) -> Result<FunctionalsDoc> {
    let f = TestFunction::from_name(phi)?;
    let v = q3(&f, mu)?;
    let atomic = mu.density.is_none();
    Ok(FunctionalsDoc {
        phi: f.name().to_string(),
        q3: v.q3,
        q3_tilde: v.q3_tilde,
        q3_quadratic: v.quadratic.value,
        q3_linear: v.linear.value,
        q3_linear_tilde: v.linear_tilde.value,
        half_moment: v.half_moment,
        identity_residual: v.identity_residual,
        tol: v.tol,
        q4_full: if atomic { Some(q4_full(&f, mu)?) } else { None },
        q4_script: if atomic && mu.atom0 == 0.0 { Some(q4_script(&f, mu)?) } else { None },
    })
}

pub fn load_measure(path: &Path) -> Result<RadialMeasure> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    RadialMeasure::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn cmd_functionals(measure: &Path, phis: &[String]) -> Result<i32> {
    let mu = load_measure(measure)?;
    let docs = phis.iter().map(|p| evaluate(&mu, p)).collect::<Result<Vec<_>>>()?;
    println!("{}", serde_json::to_string_pretty(&docs)?);
    Ok(0)
}
