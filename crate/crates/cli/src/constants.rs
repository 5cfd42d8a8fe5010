use anyhow::Result;
use nck_core::analysis::{concentration_time, critical_constant_b, decay_threshold, t_star, uniform_moment_constants};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct UniformRow {
    pub alpha: f64,
    pub e: f64,
    pub c: f64,
    pub gamma: f64,
    pub residual: f64,
}

#[derive(Debug, Serialize)]
pub struct Tables {
    pub b: f64,
    /// (ln 16)^{2/3} / b, the α → 1⁺ limit of C(α)/b.
    pub limit_ratio: f64,
    pub uniform: Vec<UniformRow>,
    /// (α, C(α)).
    pub decay_threshold: Vec<(f64, f64)>,
    /// (δ, T0(δ)).
    pub concentration_time: Vec<(f64, f64)>,
    /// (α, T★(α)).
    pub t_star: Vec<(f64, f64)>,
}

pub fn tables() -> Result<Tables> {
    let b = critical_constant_b();
    let mut uniform = Vec::new();
    for alpha in [3.0, 4.0, 5.0] {
        for e in [0.5, 1.0, 2.0, 6.0] {
            let k = uniform_moment_constants(alpha, e)?;
            uniform.push(UniformRow { alpha, e, c: k.c, gamma: k.gamma, residual: k.residual });
        }
    }
    let thr =
        [1.001, 1.25, 1.5, 2.0, 2.5, 3.0].iter().map(|&a| Ok((a, decay_threshold(a)?))).collect::<Result<Vec<_>>>()?;
    let t0 =
        [0.1, 0.25, 0.5, 0.75, 1.0].iter().map(|&d| Ok((d, concentration_time(d)?))).collect::<Result<Vec<_>>>()?;
    let ts = [0.1, 0.25, 0.5, 0.75, 0.9].iter().map(|&a| Ok((a, t_star(a)?))).collect::<Result<Vec<_>>>()?;
    Ok(Tables {
        b,
        limit_ratio: 16f64.ln().powf(2.0 / 3.0) / b,
        uniform,
        decay_threshold: thr,
        concentration_time: t0,
        t_star: ts,
    })
}

pub fn cmd_constants(json: bool) -> Result<i32> {
    let t = tables()?;
    if json {
        println!("{}", serde_json::to_string_pretty(&t)?);
        return Ok(0);
    }
    println!("b = {:.12}", t.b);
    println!("(ln 16)^(2/3) / b = {:.6}", t.limit_ratio);
    println!("\nuniform moment constants");
    println!("{:>6} {:>6} {:>16} {:>16} {:>10}", "alpha", "E", "C", "gamma", "residual");
    for r in &t.uniform {
        println!("{:>6} {:>6} {:>16.8e} {:>16.8e} {:>10.2e}", r.alpha, r.e, r.c, r.gamma, r.residual);
    }
    println!("\ndecay threshold C(alpha)");
    for (a, c) in &t.decay_threshold {
        println!("{a:>6} {c:>16.10}");
    }
    println!("\nT0(delta)");
    for (d, v) in &t.concentration_time {
        println!("{d:>6} {v:>16.6}");
    }
    println!("\nT*(alpha)");
    for (a, v) in &t.t_star {
        println!("{a:>6} {v:>16.6}");
    }
    Ok(0)
}
