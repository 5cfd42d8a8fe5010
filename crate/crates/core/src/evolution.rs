//! Time integration of the regularized h-equation on the lattice, then the
//! reconstruction of H = h − (∫ M_{1/2}) δ₀, the time change t(τ), G(t) and the
//! condensate balance measure.
//!
//! The default stepper is a conservative exponential scheme: an exponential-Euler
//! predictor, then a corrector that spends the exponential-trapezoid consumption at
//! each node through the weighted process gains of both stages. Each elementary
//! process keeps its energy balance, so M₁ is conserved to rounding. The literal
//! exponential-Euler update is available as `stepper = "exp_euler"`.

use std::collections::VecDeque;
use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{self, envelope_column, moment_column, origin_column, BoundReport, CheckConfig, Verdict};
use crate::error::{NckError, Result};
use crate::measure::{bose_einstein_xmax, Mollified, RadialMeasure, DEFAULT_TAIL_TOL};
use crate::quad::{integrate, integrate_sqrt_left, pairwise_sum, QuadOptions};
use crate::regularized::{rates, weighted_gains, DensityFn, Lattice};
use crate::trajectory::{cumulative_trapezoid, Trajectory};

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialData {
    /// `c√x e^{−βx}` on `(0, x_cut]` with β fitted to the energy, plus an atom at 0
    /// holding `condensate_fraction·N`.
    Maxwellian {
        #[serde(rename = "N")]
        mass: f64,
        #[serde(rename = "E")]
        energy: f64,
        #[serde(default)]
        condensate_fraction: f64,
        #[serde(default)]
        x_cut: Option<f64>,
    },
    /// Bose–Einstein profile plus an atom `c` at 0.
    BoseEinstein {
        beta: f64,
        #[serde(default)]
        mu: f64,
        #[serde(default)]
        c: f64,
    },
    /// Atoms, mollified before projection. `atom0` stays at the origin.
    Atoms {
        #[serde(default)]
        atom0: f64,
        atoms: Vec<(f64, f64)>,
        #[serde(default = "default_mollify_n")]
        mollify_n: u32,
    },
    /// A measure document. Projected as is, or mollified first if `mollify_n` is set.
    MeasureFile {
        path: PathBuf,
        #[serde(default)]
        mollify_n: Option<u32>,
    },
}

fn default_mollify_n() -> u32 {
    3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StepperKind {
    #[default]
    ConservativeExp,
    ExpEuler,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DtauControl {
    #[default]
    Fixed,
    /// Step doubling; `target` bounds the relative L¹ difference per step.
    Adaptive { target: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Lattice nodes per unit length, divided by n. Δ = 1/(refinement·n).
    pub refinement: u32,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { refinement: 4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Largest relative M₁ drift accepted in one step before halving it.
    pub step_drift: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { step_drift: 1e-9 }
    }
}

/// The run document (TOML or JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub initial_data: InitialData,
    pub n: u32,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default = "default_dtau")]
    pub dtau: f64,
    #[serde(default)]
    pub dtau_control: DtauControl,
    pub tau_end: f64,
    #[serde(default)]
    pub t_max: Option<f64>,
    /// With `t_max`, steps are capped at `dt_max·H(τ,{0})` so t advances by at most dt_max.
    #[serde(default = "default_dt_max")]
    pub dt_max: f64,
    /// Condensate proxy threshold; default is the half-width of the first cell.
    #[serde(default)]
    pub xc: Option<f64>,
    /// Include the proxy cells in the subtracted half-moment.
    #[serde(default)]
    pub halfmoment_includes_proxy: bool,
    #[serde(default)]
    pub stepper: StepperKind,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Extra moment orders recorded besides 0, 1, 2, 3.
    #[serde(default)]
    pub alphas: Vec<f64>,
    /// `(R, α)` pairs for the origin-flux columns.
    #[serde(default = "default_origin")]
    pub origin: Vec<(f64, f64)>,
    #[serde(default = "default_radii")]
    pub envelope_radii: Vec<f64>,
    #[serde(default = "one")]
    pub record_every: usize,
    /// Number of uniform t samples for the resampled G table (0 = none).
    #[serde(default)]
    pub t_samples: usize,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default)]
    pub checks: CheckConfig,
    #[serde(default)]
    pub seed: u64,
}

fn default_dtau() -> f64 {
    0.005
}
fn default_dt_max() -> f64 {
    0.05
}
fn default_origin() -> Vec<(f64, f64)> {
    vec![(0.5, 0.0), (0.5, 0.25), (1.0, 0.0), (1.0, 0.25)]
}
fn default_radii() -> Vec<f64> {
    vec![0.05, 0.1, 0.2, 0.4, 0.8]
}
fn one() -> usize {
    1
}
fn default_max_steps() -> usize {
    1_000_000
}

fn cfg_err(field: &str, msg: impl Into<String>) -> NckError {
    NckError::Config { field: field.into(), msg: msg.into() }
}

/// Validated solver settings.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub n: u32,
    pub refinement: u32,
    pub dtau: f64,
    pub control: DtauControl,
    pub tau_end: f64,
    pub t_max: Option<f64>,
    pub dt_max: f64,
    pub xc: f64,
    pub halfmoment_includes_proxy: bool,
    pub stepper: StepperKind,
    pub tolerances: Tolerances,
    pub alphas: Vec<f64>,
    pub origin: Vec<(f64, f64)>,
    pub envelope_radii: Vec<f64>,
    pub record_every: usize,
    pub max_steps: usize,
    pub checks: CheckConfig,
    pub dump_path: Option<PathBuf>,
}

impl SolverConfig {
    pub fn from_run(cfg: &RunConfig) -> Result<Self> {
        if cfg.n == 0 {
            return Err(cfg_err("n", "must be >= 1"));
        }
        if cfg.grid.refinement < 4 {
            return Err(cfg_err("grid.refinement", "must be >= 4"));
        }
        if !(cfg.dtau > 0.0 && cfg.dtau.is_finite()) {
            return Err(cfg_err("dtau", "must be positive"));
        }
        if !(cfg.tau_end > 0.0 && cfg.tau_end.is_finite()) {
            return Err(cfg_err("tau_end", "must be positive"));
        }
        if let Some(t) = cfg.t_max {
            if !(t > 0.0) {
                return Err(cfg_err("t_max", "must be positive"));
            }
        }
        if !(cfg.dt_max > 0.0) {
            return Err(cfg_err("dt_max", "must be positive"));
        }
        if let DtauControl::Adaptive { target } = cfg.dtau_control {
            if !(target > 0.0) {
                return Err(cfg_err("dtau_control.target", "must be positive"));
            }
        }
        let delta = 1.0 / (cfg.grid.refinement as f64 * cfg.n as f64);
        let xc = cfg.xc.unwrap_or(0.5 * delta);
        if !(xc >= 0.5 * delta) || !xc.is_finite() {
            return Err(cfg_err("xc", format!("must be at least the first cell width {}", 0.5 * delta)));
        }
        if cfg.record_every == 0 {
            return Err(cfg_err("record_every", "must be >= 1"));
        }
        for &(r, a) in &cfg.origin {
            if !(r > 0.0) || !(a > -0.5) {
                return Err(cfg_err("origin", format!("pair ({r}, {a}) needs R > 0 and alpha > -1/2")));
            }
        }
        if cfg.envelope_radii.iter().any(|&r| !(r > 0.0)) {
            return Err(cfg_err("envelope_radii", "radii must be positive"));
        }
        let mut alphas = vec![0.0, 1.0, 2.0, 3.0];
        for &a in &cfg.alphas {
            if !(a >= 0.0) || !a.is_finite() {
                return Err(cfg_err("alphas", format!("moment order {a} must be >= 0")));
            }
            if !alphas.contains(&a) {
                alphas.push(a);
            }
        }
        Ok(SolverConfig {
            n: cfg.n,
            refinement: cfg.grid.refinement,
            dtau: cfg.dtau,
            control: cfg.dtau_control,
            tau_end: cfg.tau_end,
            t_max: cfg.t_max,
            dt_max: cfg.dt_max,
            xc,
            halfmoment_includes_proxy: cfg.halfmoment_includes_proxy,
            stepper: cfg.stepper,
            tolerances: cfg.tolerances,
            alphas,
            origin: cfg.origin.clone(),
            envelope_radii: cfg.envelope_radii.clone(),
            record_every: cfg.record_every,
            max_steps: cfg.max_steps,
            checks: cfg.checks.clone(),
            dump_path: None,
        })
    }

    pub fn lattice(&self) -> Result<Lattice> {
        Lattice::with_refinement(self.n, self.refinement)
    }
}

// ---------------------------------------------------------------------------
// Initial data

/// Hat projection of an analytic density on `[lo, hi]`: mass and first moment of each
/// node interval go to its two end nodes, so M₀ and M₁ are kept to quadrature accuracy.
pub fn project_density<F: Fn(f64) -> f64 + Sync>(lat: &Lattice, f: F, lo: f64, hi: f64) -> Result<Vec<f64>> {
    if hi > lat.x_max() * (1.0 + 1e-12) {
        return Err(cfg_err("initial_data", format!("density reaches x={hi}, beyond the lattice end {}", lat.x_max())));
    }
    let opts = QuadOptions::new(1e-15, 1e-12);
    let delta = lat.delta();
    let pieces: Vec<(f64, f64)> = (0..lat.len() - 1)
        .into_par_iter()
        .map(|k| {
            let a = lat.x(k).max(lo);
            let b = lat.x(k + 1).min(hi);
            if b <= a {
                return (0.0, 0.0);
            }
            if a == 0.0 {
                let m = integrate_sqrt_left(&f, a, b, &[], opts).value;
                let v = integrate_sqrt_left(|x| x * f(x), a, b, &[], opts).value;
                (m, v)
            } else {
                let m = integrate(&f, a, b, &[], opts).value;
                let v = integrate(|x| x * f(x), a, b, &[], opts).value;
                (m, v)
            }
        })
        .collect();
    Ok(spread(lat, &pieces, delta))
}

fn spread(lat: &Lattice, pieces: &[(f64, f64)], delta: f64) -> Vec<f64> {
    let mut m = vec![0.0; lat.len()];
    for (k, &(mass, first)) in pieces.iter().enumerate() {
        if mass == 0.0 {
            continue;
        }
        let right = ((first - lat.x(k) * mass) / delta).clamp(0.0, mass);
        m[k] += mass - right;
        m[k + 1] += right;
    }
    m
}

fn maxwellian_beta(mean: f64, x_cut: f64) -> Result<f64> {
    let opts = QuadOptions::new(1e-15, 1e-13);
    let ratio = |beta: f64| {
        let w = |x: f64| (-beta * x).exp();
        let m0 = integrate_sqrt_left(|x| x.sqrt() * w(x), 0.0, x_cut, &[], opts).value;
        let m1 = integrate_sqrt_left(|x| x * x.sqrt() * w(x), 0.0, x_cut, &[], opts).value;
        m1 / m0
    };
    if !(mean < 0.6 * x_cut) {
        return Err(cfg_err("initial_data.E", format!("mean energy {mean} needs x_cut > {}", mean / 0.6)));
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while ratio(hi) > mean {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(NckError::Root("maxwellian temperature not bracketed".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if ratio(mid) > mean {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Node masses of the configured initial data.
pub fn initial_masses(data: &InitialData, lat: &Lattice) -> Result<Vec<f64>> {
    let m = match data {
        InitialData::Maxwellian { mass, energy, condensate_fraction, x_cut } => {
            let f = *condensate_fraction;
            if !(*mass > 0.0 && *energy > 0.0) {
                return Err(cfg_err("initial_data", "N and E must be positive"));
            }
            if !(0.0..1.0).contains(&f) {
                return Err(cfg_err("initial_data.condensate_fraction", "must lie in [0,1)"));
            }
            let x_cut = x_cut.unwrap_or(lat.n() as f64);
            let fluid = mass * (1.0 - f);
            let beta = maxwellian_beta(energy / fluid, x_cut)?;
            let shape = move |x: f64| if x > 0.0 { x.sqrt() * (-beta * x).exp() } else { 0.0 };
            let mut m = project_density(lat, shape, 0.0, x_cut)?;
            // Scale to the exact mass; energy follows because β was fitted to the mean.
            let total: f64 = pairwise_sum(&m);
            for v in m.iter_mut() {
                *v *= fluid / total;
            }
            m[0] += f * mass;
            m
        }
        InitialData::BoseEinstein { beta, mu, c } => {
            if !(*beta > 0.0) || *mu > 0.0 || *c < 0.0 || (*c > 0.0 && *mu < 0.0) {
                return Err(cfg_err("initial_data", "need beta > 0, mu <= 0, c >= 0, and c = 0 unless mu = 0"));
            }
            let x_max = bose_einstein_xmax(*beta, *mu, DEFAULT_TAIL_TOL);
            let (b, u) = (*beta, *mu);
            let mut m =
                project_density(lat, move |x| if x > 0.0 { x.sqrt() / (b * x - u).exp_m1() } else { 0.0 }, 0.0, x_max)?;
            m[0] += c;
            m
        }
        InitialData::Atoms { atom0, atoms, mollify_n } => {
            let mu = RadialMeasure::new(0.0, atoms.clone(), None)?;
            let mut m = project_mollified(lat, &mu, *mollify_n)?;
            if *atom0 < 0.0 {
                return Err(cfg_err("initial_data.atom0", "must be >= 0"));
            }
            m[0] += atom0;
            m
        }
        InitialData::MeasureFile { path, mollify_n } => {
            let text = std::fs::read_to_string(path)?;
            let mu = RadialMeasure::from_json(&text)?;
            match mollify_n {
                None => lat.project(&mu)?,
                Some(k) => {
                    if mu.density.as_ref().is_some_and(|d| d.values.iter().any(|&v| v > 0.0)) {
                        return Err(cfg_err("initial_data.mollify_n", "mollification needs purely atomic data"));
                    }
                    let mut m = project_mollified(lat, &mu.without_atom0(), *k)?;
                    m[0] += mu.atom0;
                    m
                }
            }
        }
    };
    let m0 = pairwise_sum(&m);
    let m1 = pairwise_sum(&m.iter().enumerate().map(|(k, v)| lat.x(k) * v).collect::<Vec<_>>());
    if !(m0 > 0.0 && m1 > 0.0) {
        return Err(NckError::Precondition("initial data needs positive mass and energy".into()));
    }
    Ok(m)
}

fn project_mollified(lat: &Lattice, mu: &RadialMeasure, n: u32) -> Result<Vec<f64>> {
    let mol = Mollified::new(mu, n)?;
    let reach = mu.atoms().iter().fold(0.0f64, |a, &(x, _)| a.max(x)) + 12.0 * mol.width();
    if reach > lat.x_max() {
        return Err(cfg_err(
            "initial_data",
            format!("mollified atoms reach x={reach}, beyond the lattice end {}", lat.x_max()),
        ));
    }
    let pieces: Vec<(f64, f64)> = (0..lat.len() - 1)
        .map(|k| {
            let (a, b) = (lat.x(k), lat.x(k + 1));
            (mol.mass_on(a, b), mol.first_moment_on(a, b).unwrap_or(0.0))
        })
        .collect();
    Ok(spread(lat, &pieces, lat.delta()))
}

// ---------------------------------------------------------------------------
// State and stepping

#[derive(Debug, Clone, Copy, Serialize)]
pub struct StepInfo {
    pub tau: f64,
    pub dtau: f64,
    pub energy_drift: f64,
    pub rejected: usize,
    pub positivity_fixes: usize,
}

const RING: usize = 64;

#[derive(Debug, Clone)]
pub struct SolverState {
    pub tau: f64,
    /// Node masses.
    pub m: Vec<f64>,
    /// Trapezoid accumulation of the subtracted half-moment.
    pub accumulated: f64,
    pub m_proxy: f64,
    /// Subtracted half-moment at `tau`.
    pub r: f64,
    pub diagnostics: VecDeque<StepInfo>,
    /// Step size to try next.
    pub next_dtau: f64,
}

impl SolverState {
    pub fn new(lat: &Lattice, m: Vec<f64>, cfg: &SolverConfig) -> Result<Self> {
        if m.len() != lat.len() || m.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(NckError::Precondition("node masses must be finite and nonnegative".into()));
        }
        let m_proxy = proxy_mass(lat, &m, cfg.xc);
        let r = subtracted_half_moment(lat, &m, cfg);
        Ok(SolverState { tau: 0.0, m, accumulated: 0.0, m_proxy, r, diagnostics: VecDeque::new(), next_dtau: cfg.dtau })
    }

    pub fn h(&self, lat: Arc<Lattice>) -> Result<DensityFn> {
        DensityFn::from_masses(lat, &self.m)
    }

    /// H(τ,{0}).
    pub fn h_atom0(&self) -> f64 {
        self.m_proxy - self.accumulated
    }
}

fn proxy_mass(lat: &Lattice, m: &[f64], xc: f64) -> f64 {
    let k = proxy_end(lat, xc);
    pairwise_sum(&m[..k])
}

/// First node index with x_k ≥ xc.
fn proxy_end(lat: &Lattice, xc: f64) -> usize {
    ((xc / lat.delta()).ceil() as usize).clamp(1, lat.len())
}

fn subtracted_half_moment(lat: &Lattice, m: &[f64], cfg: &SolverConfig) -> f64 {
    let from = if cfg.halfmoment_includes_proxy { 1 } else { proxy_end(lat, cfg.xc).max(1) };
    let top = lat.last_active();
    if from > top {
        return 0.0;
    }
    let terms: Vec<f64> = (from..=top).map(|k| lat.x(k) * lat.psi(k) * m[k]).collect();
    pairwise_sum(&terms)
}

fn energy(lat: &Lattice, m: &[f64]) -> f64 {
    pairwise_sum(&m.iter().enumerate().map(|(k, v)| lat.x(k) * v).collect::<Vec<_>>())
}

/// (e^z − 1)/z.
fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-8 {
        1.0 + 0.5 * z
    } else {
        z.exp_m1() / z
    }
}

fn exp_euler(lat: &Lattice, m: &[f64], dt: f64) -> Vec<f64> {
    let r = rates(lat, m);
    (0..m.len())
        .map(|k| {
            let a = r.loss_coef[k];
            m[k] * (-a * dt).exp() + r.gain[k] * dt * phi1(-a * dt)
        })
        .collect()
}

/// One conservative exponential step. Returns the new masses and the number of
/// nodes whose consumption had to be capped to keep them nonnegative.
fn conservative_exp(lat: &Lattice, m: &[f64], dt: f64) -> (Vec<f64>, usize) {
    let len = m.len();
    let r0 = rates(lat, m);
    let ms: Vec<f64> = (0..len)
        .map(|k| {
            let a = r0.loss_coef[k];
            m[k] * (-a * dt).exp() + r0.gain[k] * dt * phi1(-a * dt)
        })
        .collect();
    let r1 = rates(lat, &ms);
    let mut capped_d = vec![0.0; len];
    let mut d = vec![0.0; len];
    for k in 0..len {
        let a = 0.5 * (r0.loss_coef[k] + r1.loss_coef[k]);
        let g = 0.5 * (r0.gain[k] + r1.gain[k]);
        let keep = -(-a * dt).exp_m1();
        capped_d[k] = m[k] * keep;
        d[k] = capped_d[k] + g * dt * (1.0 - phi1(-a * dt));
    }
    let mut fixes = 0;
    let mut capped = vec![false; len];
    for round in 0..5 {
        let mut q0 = vec![0.0; len];
        let mut q1 = vec![0.0; len];
        for k in 0..len {
            let (c0, c1) = (r0.consumption[k], r1.consumption[k]);
            let dk = if capped[k] || round == 4 { capped_d[k] } else { d[k] };
            let (l0, l1) = match (c0 > 0.0, c1 > 0.0) {
                (true, true) => (0.5 * dk / c0, 0.5 * dk / c1),
                (true, false) => (dk / c0, 0.0),
                (false, true) => (0.0, dk / c1),
                (false, false) => (0.0, 0.0),
            };
            d[k] = if c0 > 0.0 || c1 > 0.0 { dk } else { 0.0 };
            q0[k] = l0 * r0.p[k];
            q1[k] = l1 * r1.p[k];
        }
        let g0 = weighted_gains(lat, &r0.p, &q0);
        let g1 = weighted_gains(lat, &r1.p, &q1);
        let out: Vec<f64> = (0..len).map(|k| m[k] - d[k] + g0[k] + g1[k]).collect();
        let mut bad = false;
        for k in 0..len {
            if out[k] < 0.0 && !capped[k] {
                capped[k] = true;
                fixes += 1;
                bad = true;
            }
        }
        if !bad {
            // Cancellation can leave −ulp residues; those are rounding, not mass.
            return (out.into_iter().map(|v| v.max(0.0)).collect(), fixes);
        }
        if round == 4 {
            // Capped consumption everywhere: m − m(1 − e^{−AΔ}) + gains ≥ 0.
            return (out.into_iter().map(|v| v.max(0.0)).collect(), fixes);
        }
    }
    unreachable!()
}

fn advance(lat: &Lattice, m: &[f64], dt: f64, kind: StepperKind) -> (Vec<f64>, usize) {
    match kind {
        StepperKind::ConservativeExp => conservative_exp(lat, m, dt),
        StepperKind::ExpEuler => (exp_euler(lat, m, dt), 0),
    }
}

fn check_finite(m: &[f64], tau: f64) -> Result<()> {
    if let Some(k) = m.iter().position(|v| !v.is_finite()) {
        return Err(NckError::NonFinite { tau, what: format!("node {k} mass {}", m[k]) });
    }
    Ok(())
}

fn dump_state(cfg: &SolverConfig, state: &SolverState) {
    if let Some(p) = &cfg.dump_path {
        let doc = serde_json::json!({ "tau": state.tau, "accumulated": state.accumulated, "m": state.m });
        // Best effort: the error being reported matters more than the dump.
        let _ = std::fs::write(p, doc.to_string());
    }
}

/// Advance by at most `max_dt` (step size from `state.next_dtau`), rejecting and
/// halving on M₁ drift or, when adaptive, on the step-doubling estimate.
pub fn step(state: &SolverState, lat: &Lattice, cfg: &SolverConfig, max_dt: f64) -> Result<SolverState> {
    let e0 = energy(lat, &state.m);
    let mut dt = state.next_dtau.min(max_dt);
    let mut rejected = 0;
    loop {
        if rejected > 60 || !(dt > 0.0) {
            dump_state(cfg, state);
            return Err(NckError::Consistency(format!("step size collapsed at tau={}", state.tau)));
        }
        let (m_new, fixes, next) = match cfg.control {
            DtauControl::Fixed => {
                let (m, f) = advance(lat, &state.m, dt, cfg.stepper);
                (m, f, cfg.dtau)
            }
            DtauControl::Adaptive { target } => {
                let (full, _) = advance(lat, &state.m, dt, cfg.stepper);
                let (half, f1) = advance(lat, &state.m, 0.5 * dt, cfg.stepper);
                let (two, f2) = advance(lat, &half, 0.5 * dt, cfg.stepper);
                let diff: f64 = pairwise_sum(&full.iter().zip(&two).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>());
                let err = diff / pairwise_sum(&state.m).max(f64::MIN_POSITIVE);
                if !err.is_finite() || err > target {
                    dt *= 0.5;
                    rejected += 1;
                    continue;
                }
                let grow = if err == 0.0 { 2.0 } else { (0.9 * (target / err).powf(1.0 / 3.0)).clamp(0.2, 2.0) };
                (two, f1 + f2, dt * grow)
            }
        };
        if let Err(e) = check_finite(&m_new, state.tau + dt) {
            dump_state(cfg, state);
            return Err(e);
        }
        let e1 = energy(lat, &m_new);
        let drift = (e1 - e0).abs() / e0.abs().max(f64::MIN_POSITIVE);
        if drift > cfg.tolerances.step_drift {
            dt *= 0.5;
            rejected += 1;
            continue;
        }
        let r_new = subtracted_half_moment(lat, &m_new, cfg);
        let mut diagnostics = state.diagnostics.clone();
        if diagnostics.len() == RING {
            diagnostics.pop_front();
        }
        diagnostics.push_back(StepInfo {
            tau: state.tau + dt,
            dtau: dt,
            energy_drift: drift,
            rejected,
            positivity_fixes: fixes,
        });
        return Ok(SolverState {
            tau: state.tau + dt,
            m_proxy: proxy_mass(lat, &m_new, cfg.xc),
            accumulated: state.accumulated + 0.5 * (state.r + r_new) * dt,
            r: r_new,
            m: m_new,
            diagnostics,
            next_dtau: next,
        });
    }
}

// ---------------------------------------------------------------------------
// Records

/// Everything the checks need from one state, in τ.
#[derive(Debug, Clone, PartialEq)]
pub struct TauRecord {
    pub tau: f64,
    pub m_proxy: f64,
    pub accumulated: f64,
    pub r: f64,
    pub half_moment_h: f64,
    /// M_α(h) for each configured α.
    pub moments_h: Vec<f64>,
    /// M_α(g): for α = 0 the mass on [xc, ∞), otherwise all x > 0.
    pub moments_g: Vec<f64>,
    pub origin: Vec<f64>,
    pub envelope: Vec<f64>,
}

fn record(lat: &Lattice, s: &SolverState, cfg: &SolverConfig) -> TauRecord {
    let m = &s.m;
    let pe = proxy_end(lat, cfg.xc);
    let moment = |alpha: f64, from: usize| -> f64 {
        let terms: Vec<f64> =
            (from..m.len()).map(|k| if alpha == 0.0 { m[k] } else { lat.x(k).powf(alpha) * m[k] }).collect();
        pairwise_sum(&terms)
    };
    let moments_h = cfg.alphas.iter().map(|&a| moment(a, 0)).collect();
    let moments_g = cfg.alphas.iter().map(|&a| if a == 0.0 { moment(0.0, pe) } else { moment(a, 1) }).collect();
    let origin = cfg
        .origin
        .iter()
        .map(|&(r, a)| {
            let top = ((r / lat.delta()).floor() as usize).min(m.len() - 1);
            pairwise_sum(&(1..=top).map(|k| lat.x(k).powf(a) * m[k]).collect::<Vec<_>>())
        })
        .collect();
    let envelope = cfg
        .envelope_radii
        .iter()
        .map(|&r| {
            let top = ((r / lat.delta()).floor() as usize).min(m.len() - 1);
            pairwise_sum(&m[..=top])
        })
        .collect();
    let half = pairwise_sum(&(1..m.len()).map(|k| lat.x(k).sqrt() * m[k]).collect::<Vec<_>>());
    TauRecord {
        tau: s.tau,
        m_proxy: s.m_proxy,
        accumulated: s.accumulated,
        r: s.r,
        half_moment_h: half,
        moments_h,
        moments_g,
        origin,
        envelope,
    }
}

/// First record where an in-run bound failed.
#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub name: String,
    pub tau: f64,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub lattice: Arc<Lattice>,
    pub config: SolverConfig,
    pub records: Vec<TauRecord>,
    pub final_state: SolverState,
    pub steps: usize,
    pub first_violation: Option<Violation>,
    pub stop: StopReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TauEnd,
    TMax,
    /// H(τ,{0}) fell below what m_proxy − accumulated resolves, so the capped
    /// step no longer advances τ.
    Resolution,
}

impl RunOutput {
    pub fn failed(&self) -> bool {
        self.first_violation.is_some()
    }
}

fn in_run_checks(rec: &TauRecord, first: &TauRecord, cfg: &SolverConfig) -> Option<Violation> {
    let s = cfg.checks.slack;
    let (n0, e0) = (first.moments_h[0], first.moments_h[1]);
    let mass = rec.moments_h[0];
    let env = (0.5 * e0.sqrt() * rec.tau + n0.sqrt()).powi(2);
    if mass > s * env {
        return Some(Violation { name: "mass_envelope".into(), tau: rec.tau, lhs: mass, rhs: env });
    }
    let drift = (rec.moments_h[1] - e0).abs() / e0;
    if drift > cfg.checks.conservation_tol {
        return Some(Violation {
            name: "energy_conservation".into(),
            tau: rec.tau,
            lhs: drift,
            rhs: cfg.checks.conservation_tol,
        });
    }
    let a = cfg.checks.moment_alpha;
    if a >= 3.0 {
        if let Some(i) = cfg.alphas.iter().position(|&x| x == a) {
            if let Ok(b) = analysis::moment_bound_apriori(first.moments_h[i], e0, a, rec.tau) {
                if rec.moments_h[i] > s * b {
                    return Some(Violation {
                        name: "moment_growth".into(),
                        tau: rec.tau,
                        lhs: rec.moments_h[i],
                        rhs: b,
                    });
                }
            }
        }
    }
    None
}

/// Evolve `m0` to `tau_end` (or until t reaches `t_max`).
pub fn run_h(m0: Vec<f64>, lattice: Arc<Lattice>, cfg: &SolverConfig) -> Result<RunOutput> {
    let lat = &*lattice;
    let mut state = SolverState::new(lat, m0, cfg)?;
    if !(pairwise_sum(&state.m) > 0.0 && energy(lat, &state.m) > 0.0) {
        return Err(NckError::Precondition("run_h needs M0(h0) > 0 and M1(h0) > 0".into()));
    }
    let first = record(lat, &state, cfg);
    let mut records = vec![first.clone()];
    let mut first_violation = None;
    let mut steps = 0;
    let mut t = 0.0;
    let mut stop = StopReason::TauEnd;
    let tau_eps = 1e-12 * cfg.tau_end;
    while state.tau < cfg.tau_end - tau_eps {
        if steps >= cfg.max_steps {
            return Err(NckError::Consistency(format!("max_steps {} reached at tau={}", cfg.max_steps, state.tau)));
        }
        let h_old = state.h_atom0();
        let mut max_dt = cfg.tau_end - state.tau;
        if cfg.t_max.is_some() && h_old > 0.0 {
            max_dt = max_dt.min(cfg.dt_max * h_old);
            if max_dt < 1e-13 * state.tau.max(1.0) || h_old < 1e-13 * state.m_proxy {
                stop = StopReason::Resolution;
                break;
            }
        }
        let next = step(&state, lat, cfg, max_dt)?;
        steps += 1;
        let h_new = next.h_atom0();
        if h_old > 0.0 && h_new > 0.0 {
            t += 0.5 * (1.0 / h_old + 1.0 / h_new) * (next.tau - state.tau);
        } else {
            t = f64::INFINITY;
        }
        state = next;
        let done_tau = state.tau >= cfg.tau_end - tau_eps;
        let done_t = cfg.t_max.is_some_and(|tm| t >= tm);
        if steps % cfg.record_every == 0 || done_tau || done_t {
            let rec = record(lat, &state, cfg);
            if first_violation.is_none() {
                first_violation = in_run_checks(&rec, &first, cfg);
            }
            records.push(rec);
        }
        if done_t {
            stop = StopReason::TMax;
            break;
        }
    }
    Ok(RunOutput { lattice, config: cfg.clone(), records, final_state: state, steps, first_violation, stop })
}

// ---------------------------------------------------------------------------
// Reconstruction

#[derive(Debug, Clone, PartialEq)]
pub struct HRecord {
    pub tau: f64,
    /// H(τ,{0}); may be negative past τ★.
    pub h_atom0: f64,
    pub r: f64,
    /// Moments of the non-condensed part g.
    pub moments_g: Vec<f64>,
}

pub fn reconstruct_h(records: &[TauRecord]) -> Vec<HRecord> {
    records
        .iter()
        .map(|r| HRecord { tau: r.tau, h_atom0: r.m_proxy - r.accumulated, r: r.r, moments_g: r.moments_g.clone() })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeChange {
    /// t(τ_i); +∞ from the first non-positive H onward.
    pub t: Vec<f64>,
    /// First crossing of H(τ,{0}) through 0, linearly interpolated.
    pub tau_star: Option<f64>,
    /// Linear extrapolation of the last two records when no crossing was seen.
    pub tau_star_estimate: f64,
}

/// t = ∫₀^τ dσ / H(σ,{0}) by the trapezoid rule.
pub fn time_change(h: &[HRecord]) -> Result<TimeChange> {
    let Some(h0) = h.first() else {
        return Err(NckError::Precondition("time_change needs at least one record".into()));
    };
    if !(h0.h_atom0 > 0.0) {
        return Err(NckError::Precondition(format!("time_change needs H(0,{{0}}) > 0, got {}", h0.h_atom0)));
    }
    let mut t = vec![0.0];
    let mut tau_star = None;
    for w in h.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let prev = *t.last().unwrap();
        if tau_star.is_some() || b.h_atom0 <= 0.0 {
            if tau_star.is_none() {
                let frac = a.h_atom0 / (a.h_atom0 - b.h_atom0);
                tau_star = Some(a.tau + frac * (b.tau - a.tau));
            }
            t.push(f64::INFINITY);
        } else {
            t.push(prev + 0.5 * (1.0 / a.h_atom0 + 1.0 / b.h_atom0) * (b.tau - a.tau));
        }
    }
    let tau_star_estimate = match tau_star {
        Some(ts) => ts,
        None if h.len() >= 2 => {
            let (a, b) = (&h[h.len() - 2], &h[h.len() - 1]);
            let slope = (b.h_atom0 - a.h_atom0) / (b.tau - a.tau);
            if slope < 0.0 {
                b.tau - b.h_atom0 / slope
            } else {
                f64::INFINITY
            }
        }
        None => f64::INFINITY,
    };
    Ok(TimeChange { t, tau_star, tau_star_estimate })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GRecord {
    pub t: f64,
    pub tau: f64,
    pub n: f64,
    /// M_α(G) = n·[α = 0] + M_α(g).
    pub moments: Vec<f64>,
}

/// Resample H at τ = ξ⁻¹(t) for each t in `t_grid` (linear in τ between records).
pub fn reconstruct_g(h: &[HRecord], xi: &TimeChange, alphas: &[f64], t_grid: &[f64]) -> Vec<GRecord> {
    let mut out = Vec::with_capacity(t_grid.len());
    let mut j = 0;
    for &t in t_grid {
        while j + 1 < xi.t.len() && xi.t[j + 1] < t {
            j += 1;
        }
        if (j + 1 >= xi.t.len() || !xi.t[j + 1].is_finite()) && (xi.t[j] - t).abs() > 0.0 {
            break;
        }
        let (k0, k1) = (j, (j + 1).min(xi.t.len() - 1));
        let span = xi.t[k1] - xi.t[k0];
        let w = if span > 0.0 && span.is_finite() { ((t - xi.t[k0]) / span).clamp(0.0, 1.0) } else { 0.0 };
        let lerp = |a: f64, b: f64| a + w * (b - a);
        let n = lerp(h[k0].h_atom0, h[k1].h_atom0);
        let moments = alphas
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let g = lerp(h[k0].moments_g[i], h[k1].moments_g[i]);
                if a == 0.0 {
                    n + g
                } else {
                    g
                }
            })
            .collect();
        out.push(GRecord { t, tau: lerp(h[k0].tau, h[k1].tau), n, moments });
    }
    out
}

/// μ((0,t]) at each record: n − n(0) + ∫₀^τ M_{1/2}(g) dσ.
pub fn condensate_balance(h: &[HRecord]) -> Vec<f64> {
    let tau: Vec<f64> = h.iter().map(|r| r.tau).collect();
    let n: Vec<f64> = h.iter().map(|r| r.h_atom0).collect();
    let r: Vec<f64> = h.iter().map(|r| r.r).collect();
    analysis::condensate_balance_from(&tau, &n, &r)
}

// ---------------------------------------------------------------------------
// Persisted table

pub fn trajectory_columns(cfg: &SolverConfig) -> Vec<String> {
    let mut c: Vec<String> =
        ["tau", "t", "n", "m_proxy", "accumulated", "R", "M_half_h", "mu"].iter().map(|s| s.to_string()).collect();
    for &a in &cfg.alphas {
        c.push(moment_column(a, "h"));
    }
    for &a in &cfg.alphas {
        c.push(moment_column(a, "G"));
    }
    for &(r, a) in &cfg.origin {
        c.push(origin_column(r, a));
    }
    for &r in &cfg.envelope_radii {
        c.push(envelope_column(r));
    }
    c
}

pub fn build_trajectory(run: &RunOutput, h: &[HRecord], xi: &TimeChange, mu: &[f64]) -> Result<Trajectory> {
    let cfg = &run.config;
    let mut tr = Trajectory::new(trajectory_columns(cfg));
    for (i, rec) in run.records.iter().enumerate() {
        let mut row =
            vec![rec.tau, xi.t[i], h[i].h_atom0, rec.m_proxy, rec.accumulated, rec.r, rec.half_moment_h, mu[i]];
        row.extend(&rec.moments_h);
        for (j, &a) in cfg.alphas.iter().enumerate() {
            row.push(if a == 0.0 { h[i].h_atom0 + rec.moments_g[j] } else { rec.moments_g[j] });
        }
        row.extend(&rec.origin);
        row.extend(&rec.envelope);
        tr.push(row)?;
    }
    Ok(tr)
}

/// Everything a `run` produces.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub run: RunOutput,
    pub h: Vec<HRecord>,
    pub time: TimeChange,
    pub mu: Vec<f64>,
    pub trajectory: Trajectory,
    pub g_samples: Vec<GRecord>,
    pub reports: Vec<BoundReport>,
}

impl Pipeline {
    /// Failed reports plus the in-run violation, if any.
    pub fn failures(&self) -> Vec<String> {
        let mut v: Vec<String> =
            self.reports.iter().filter(|r| r.verdict == Verdict::Fail).map(|r| r.name.clone()).collect();
        if let Some(x) = &self.run.first_violation {
            v.push(format!("in-run {} at tau={}", x.name, x.tau));
        }
        v
    }
}

/// run_h → reconstruct_H → time_change → reconstruct_G → condensate_balance → checks.
pub fn run_pipeline(cfg: &RunConfig, manifest: &str) -> Result<Pipeline> {
    let scfg = SolverConfig::from_run(cfg)?;
    run_pipeline_with(cfg, scfg, manifest)
}

pub fn run_pipeline_with(cfg: &RunConfig, scfg: SolverConfig, manifest: &str) -> Result<Pipeline> {
    let lattice = Arc::new(scfg.lattice()?);
    let m0 = initial_masses(&cfg.initial_data, &lattice)?;
    let run = run_h(m0, lattice, &scfg)?;
    let h = reconstruct_h(&run.records);
    let time = time_change(&h)?;
    let mu = condensate_balance(&h);
    let mut trajectory = build_trajectory(&run, &h, &time, &mu)?;
    trajectory.manifest = manifest.to_string();
    let g_samples = if cfg.t_samples > 0 {
        let t_end = time.t.iter().copied().filter(|t| t.is_finite()).fold(0.0, f64::max);
        let grid: Vec<f64> = (0..cfg.t_samples).map(|i| t_end * i as f64 / (cfg.t_samples - 1).max(1) as f64).collect();
        reconstruct_g(&h, &time, &scfg.alphas, &grid)
    } else {
        Vec::new()
    };
    let reports = analysis::check_trajectory(&trajectory, &scfg.checks)?;
    Ok(Pipeline { run, h, time, mu, trajectory, g_samples, reports })
}

/// Persisted form of the resampled G table.
pub fn g_table(samples: &[GRecord], alphas: &[f64]) -> Result<Trajectory> {
    let mut cols = vec!["t".to_string(), "tau".to_string(), "n".to_string()];
    cols.extend(alphas.iter().map(|&a| moment_column(a, "G")));
    let mut tr = Trajectory::new(cols);
    for g in samples {
        let mut row = vec![g.t, g.tau, g.n];
        row.extend(&g.moments);
        tr.push(row)?;
    }
    Ok(tr)
}

/// Cumulative ∫ n dt in t over the reachable records (equals τ there).
pub fn integral_n_dt(time: &TimeChange, h: &[HRecord]) -> Vec<f64> {
    let idx: Vec<usize> = (0..h.len()).filter(|&i| time.t[i].is_finite()).collect();
    let t: Vec<f64> = idx.iter().map(|&i| time.t[i]).collect();
    let n: Vec<f64> = idx.iter().map(|&i| h[i].h_atom0).collect();
    cumulative_trapezoid(&t, &n)
}
