//! Finite positive radial measures on [0,∞): an atom at the origin, atoms on
//! (0,∞) and a piecewise-constant density holding cell averages.

use std::cmp::Ordering;

use libm::{erf, erfc};
use serde::{Deserialize, Serialize};

use crate::error::{domain, NckError, Result};
use crate::quad::{integrate, QuadOptions};

pub const MEASURE_SCHEMA: &str = "nck-measure/1";

/// Cell edges of a discretization of `[x_min, x_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    edges: Vec<f64>,
}

impl GridSpec {
    pub fn from_edges(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 {
            return domain("grid needs at least two edges");
        }
        if edges[0] < 0.0 || edges.iter().any(|e| !e.is_finite()) {
            return domain("grid edges must be finite and start at x_min >= 0");
        }
        if edges.windows(2).any(|w| w[1] <= w[0]) {
            return domain("grid edges must be strictly increasing");
        }
        Ok(GridSpec { edges })
    }

    pub fn uniform(x_min: f64, x_max: f64, cells: usize) -> Result<Self> {
        if cells == 0 || !(x_max > x_min) {
            return domain("uniform grid needs cells > 0 and x_max > x_min");
        }
        let h = (x_max - x_min) / cells as f64;
        let mut edges: Vec<f64> = (0..=cells).map(|i| x_min + h * i as f64).collect();
        edges[cells] = x_max;
        Self::from_edges(edges)
    }

    /// Edges 0, w, w(1+r), w(1+r+r²), ... up to `x_max` (last edge clipped).
    pub fn geometric(first_width: f64, x_max: f64, ratio: f64) -> Result<Self> {
        if !(first_width > 0.0) || !(ratio >= 1.0) || !(x_max > first_width) {
            return domain("geometric grid needs first_width > 0, ratio >= 1, x_max > first_width");
        }
        let mut edges = vec![0.0];
        let mut w = first_width;
        let mut x = 0.0;
        while x + w < x_max * (1.0 - 1e-12) {
            x += w;
            edges.push(x);
            w *= ratio;
        }
        edges.push(x_max);
        Self::from_edges(edges)
    }

    /// Geometric edges between x_min > 0 and x_max, plus a first cell [0, x_min].
    pub fn log_spaced(x_min: f64, x_max: f64, cells: usize) -> Result<Self> {
        if !(x_min > 0.0) || !(x_max > x_min) || cells < 2 {
            return domain("log_spaced grid needs 0 < x_min < x_max and cells >= 2");
        }
        let r = (x_max / x_min).ln() / (cells - 1) as f64;
        let mut edges = vec![0.0];
        edges.extend((0..cells).map(|i| x_min * (r * i as f64).exp()));
        *edges.last_mut().unwrap() = x_max;
        Self::from_edges(edges)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }
    pub fn cells(&self) -> usize {
        self.edges.len() - 1
    }
    pub fn x_min(&self) -> f64 {
        self.edges[0]
    }
    pub fn x_max(&self) -> f64 {
        *self.edges.last().unwrap()
    }
    pub fn cell(&self, i: usize) -> (f64, f64) {
        (self.edges[i], self.edges[i + 1])
    }
    pub fn first_width(&self) -> f64 {
        self.edges[1] - self.edges[0]
    }

    /// Index of the cell containing x (cells are half-open, the last is closed).
    pub fn locate(&self, x: f64) -> Option<usize> {
        if x < self.x_min() || x > self.x_max() {
            return None;
        }
        let i = self.edges.partition_point(|&e| e <= x);
        Some(i.saturating_sub(1).min(self.cells() - 1))
    }
}

/// A density on [0,∞) that quadrature routines can sample. Implemented by cell
/// averages and by the analytic profiles below.
pub trait Density: Sync {
    fn value(&self, x: f64) -> f64;
    /// Interval outside of which the density vanishes.
    fn support(&self) -> (f64, f64);
    /// Points where the density is not smooth (support ends included).
    fn breakpoints(&self) -> Vec<f64>;
}

/// Piecewise-constant density: `values[i]` is the average over cell i.
#[derive(Debug, Clone, PartialEq)]
pub struct CellDensity {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl CellDensity {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.cells() {
            return domain(format!("density has {} values for {} cells", values.len(), grid.cells()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return domain("density values must be finite and nonnegative");
        }
        Ok(CellDensity { grid, values })
    }

    /// Cell averages of `f` computed by adaptive quadrature.
    pub fn from_fn<F: Fn(f64) -> f64>(grid: GridSpec, f: F) -> Result<Self> {
        let opts = QuadOptions::new(1e-14, 1e-12);
        let values = (0..grid.cells())
            .map(|i| {
                let (l, r) = grid.cell(i);
                integrate(&f, l, r, &[], opts).value / (r - l)
            })
            .collect();
        Self::new(grid, values)
    }

    /// ∫ x^α over the density, per cell with the exact antiderivative.
    pub fn moment(&self, alpha: f64) -> Result<f64> {
        let mut s = 0.0;
        for (i, &c) in self.values.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let (l, r) = self.grid.cell(i);
            s += c * power_integral(l, r, alpha)?;
        }
        Ok(s)
    }

    pub fn mass(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let (l, r) = self.grid.cell(i);
                c * (r - l)
            })
            .sum()
    }
}

impl Density for CellDensity {
    fn value(&self, x: f64) -> f64 {
        match self.grid.locate(x) {
            Some(i) => self.values[i],
            None => 0.0,
        }
    }
    fn support(&self) -> (f64, f64) {
        (self.grid.x_min(), self.grid.x_max())
    }
    fn breakpoints(&self) -> Vec<f64> {
        self.grid.edges().to_vec()
    }
}

/// ∫_l^r x^α dx with the exact antiderivative.
pub fn power_integral(l: f64, r: f64, alpha: f64) -> Result<f64> {
    if alpha == 0.0 {
        return Ok(r - l);
    }
    if alpha <= -1.0 && l <= 0.0 {
        return domain(format!("x^{alpha} is not integrable at 0"));
    }
    if (alpha + 1.0).abs() < 1e-15 {
        return Ok((r / l).ln());
    }
    let p = alpha + 1.0;
    Ok((r.powf(p) - l.powf(p)) / p)
}

/// G = atom0·δ₀ + Σ wᵢ δ_{xᵢ} + density.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialMeasure {
    pub atom0: f64,
    atoms: Vec<(f64, f64)>,
    pub density: Option<CellDensity>,
}

impl RadialMeasure {
    /// Builds the canonical form: atoms sorted, duplicates merged, zero weights dropped.
    pub fn new(atom0: f64, atoms: Vec<(f64, f64)>, density: Option<CellDensity>) -> Result<Self> {
        if !(atom0.is_finite() && atom0 >= 0.0) {
            return domain("atom0 must be finite and nonnegative");
        }
        let mut atoms = atoms;
        for &(x, w) in &atoms {
            if !(x.is_finite() && x > 0.0) {
                return domain(format!("atom position {x} must be finite and positive"));
            }
            if !(w.is_finite() && w >= 0.0) {
                return domain(format!("atom weight {w} must be finite and nonnegative"));
            }
        }
        atoms.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
        for (x, w) in atoms {
            match merged.last_mut() {
                Some(last) if last.0 == x => last.1 += w,
                _ => merged.push((x, w)),
            }
        }
        merged.retain(|a| a.1 > 0.0);
        Ok(RadialMeasure { atom0, atoms: merged, density })
    }

    pub fn zero() -> Self {
        RadialMeasure { atom0: 0.0, atoms: vec![], density: None }
    }

    pub fn dirac0(w: f64) -> Result<Self> {
        Self::new(w, vec![], None)
    }

    pub fn atomic(atoms: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(0.0, atoms, None)
    }

    pub fn from_density(density: CellDensity) -> Self {
        RadialMeasure { atom0: 0.0, atoms: vec![], density: Some(density) }
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn is_atomic(&self) -> bool {
        self.density.as_ref().is_none_or(|d| d.values.iter().all(|&v| v == 0.0))
    }

    /// M_α = Σ wᵢ xᵢ^α + ∫ x^α density + (α = 0 ? atom0 : 0).
    pub fn moment(&self, alpha: f64) -> Result<f64> {
        if !alpha.is_finite() {
            return domain("moment order must be finite");
        }
        if alpha < 0.0 && self.atom0 > 0.0 {
            return domain(format!("moment of order {alpha} is infinite with an atom at 0"));
        }
        let mut s = if alpha == 0.0 { self.atom0 } else { 0.0 };
        for &(x, w) in &self.atoms {
            s += w * x.powf(alpha);
        }
        if let Some(d) = &self.density {
            s += d.moment(alpha)?;
        }
        Ok(s)
    }

    pub fn mass(&self) -> f64 {
        self.moment(0.0).unwrap_or(f64::NAN)
    }

    /// ∫ f dμ with exact atom sums and per-cell adaptive quadrature on the density.
    pub fn integrate_fn<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        let mut s = self.atom0 * if self.atom0 > 0.0 { f(0.0) } else { 0.0 };
        for &(x, w) in &self.atoms {
            s += w * f(x);
        }
        if let Some(d) = &self.density {
            let opts = QuadOptions::new(1e-14, 1e-11);
            for (i, &c) in d.values.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                let (l, r) = d.grid.cell(i);
                s += c * integrate(&f, l, r, &[], opts).value;
            }
        }
        s
    }

    /// Restriction to (0, ∞): the atom at 0 removed.
    pub fn without_atom0(&self) -> Self {
        RadialMeasure { atom0: 0.0, atoms: self.atoms.clone(), density: self.density.clone() }
    }

    pub fn scaled(&self, k: f64) -> Result<Self> {
        if !(k >= 0.0) {
            return domain("scale factor must be nonnegative");
        }
        let density = match &self.density {
            Some(d) => Some(CellDensity::new(d.grid.clone(), d.values.iter().map(|v| v * k).collect())?),
            None => None,
        };
        Self::new(self.atom0 * k, self.atoms.iter().map(|&(x, w)| (x, w * k)).collect(), density)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&MeasureDoc::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: MeasureDoc = serde_json::from_str(s)?;
        doc.try_into()
    }
}

/// On-disk form of a measure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasureDoc {
    pub version: String,
    pub atom0: f64,
    #[serde(default)]
    pub atoms: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridDoc {
    pub edges: Vec<f64>,
}

impl From<&RadialMeasure> for MeasureDoc {
    fn from(m: &RadialMeasure) -> Self {
        MeasureDoc {
            version: MEASURE_SCHEMA.into(),
            atom0: m.atom0,
            atoms: m.atoms.iter().map(|&(x, w)| [x, w]).collect(),
            grid: m.density.as_ref().map(|d| GridDoc { edges: d.grid.edges().to_vec() }),
            density: m.density.as_ref().map(|d| d.values.clone()),
        }
    }
}

impl TryFrom<MeasureDoc> for RadialMeasure {
    type Error = NckError;
    fn try_from(doc: MeasureDoc) -> Result<Self> {
        if doc.version != MEASURE_SCHEMA {
            return domain(format!("unsupported measure version `{}`", doc.version));
        }
        let density = match (doc.grid, doc.density) {
            (Some(g), Some(v)) => Some(CellDensity::new(GridSpec::from_edges(g.edges)?, v)?),
            (None, None) => None,
            _ => return domain("grid and density must be given together"),
        };
        RadialMeasure::new(doc.atom0, doc.atoms.into_iter().map(|a| (a[0], a[1])).collect(), density)
    }
}

/// (n0, g) with n0 = G({0}) and g = G restricted to (0,∞).
pub fn split_atom(g: &RadialMeasure) -> (f64, RadialMeasure) {
    (g.atom0, g.without_atom0())
}

/// Inverse of [`split_atom`].
pub fn recombine(n0: f64, g: &RadialMeasure) -> Result<RadialMeasure> {
    if g.atom0 != 0.0 {
        return Err(NckError::Precondition("g must not carry an atom at 0".into()));
    }
    RadialMeasure::new(n0, g.atoms.clone(), g.density.clone())
}

// ---------------------------------------------------------------------------
// Bose–Einstein equilibria

/// Analytic profile √x / (e^{βx-μ} - 1) truncated at `x_max`.
#[derive(Debug, Clone, Copy)]
pub struct BoseEinsteinDensity {
    pub beta: f64,
    pub mu: f64,
    pub x_max: f64,
}

impl BoseEinsteinDensity {
    fn raw(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return if self.mu < 0.0 { 0.0 } else { f64::INFINITY };
        }
        x.sqrt() / (self.beta * x - self.mu).exp_m1()
    }

    /// √x·density, finite at 0 when μ = 0. Used by the x = u² substitution.
    pub fn sqrt_weighted(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return if self.mu < 0.0 { 0.0 } else { 1.0 / self.beta };
        }
        x / (self.beta * x - self.mu).exp_m1()
    }
}

impl Density for BoseEinsteinDensity {
    fn value(&self, x: f64) -> f64 {
        if x > self.x_max {
            0.0
        } else {
            self.raw(x)
        }
    }
    fn support(&self) -> (f64, f64) {
        (0.0, self.x_max)
    }
    fn breakpoints(&self) -> Vec<f64> {
        vec![0.0, self.x_max]
    }
}

fn check_be_params(beta: f64, mu: f64, c: f64) -> Result<()> {
    if !(beta > 0.0) || !beta.is_finite() {
        return domain("beta must be positive");
    }
    if !(mu <= 0.0) {
        return domain("chemical potential must be <= 0");
    }
    if !(c >= 0.0) {
        return domain("condensate weight must be >= 0");
    }
    if c > 0.0 && mu < 0.0 {
        return Err(NckError::Constraint("c·mu must vanish: a condensate requires mu = 0".into()));
    }
    Ok(())
}

/// ∫_a^b √x/(e^{βx-μ}-1) dx via x = u², which removes the origin singularity.
fn be_mass(beta: f64, mu: f64, a: f64, b: f64) -> f64 {
    let opts = QuadOptions::new(1e-16, 1e-13);
    integrate(
        |u: f64| {
            let x = u * u;
            if x == 0.0 {
                return if mu < 0.0 { 0.0 } else { 2.0 / beta };
            }
            2.0 * x / (beta * x - mu).exp_m1()
        },
        a.sqrt(),
        b.sqrt(),
        &[],
        opts,
    )
    .value
}

/// Mass of the Bose–Einstein profile beyond `x`.
pub fn bose_einstein_tail(beta: f64, mu: f64, x: f64) -> f64 {
    // The integrand is below 2√y e^{-(βy-μ)} past y with βy-μ > 1; e^{-60} is negligible.
    let far = x + (60.0 + mu.abs()) / beta;
    let opts = QuadOptions::new(1e-300, 1e-10);
    let mut pts = vec![x];
    let mut p = x;
    let step = (far - x) / 16.0;
    for _ in 0..16 {
        p += step;
        pts.push(p);
    }
    crate::quad::integrate_points(|y| y.sqrt() / (beta * y - mu).exp_m1(), &pts, opts).value
}

/// Smallest x_max (to 1%) whose tail mass is below `tol`.
pub fn bose_einstein_xmax(beta: f64, mu: f64, tol: f64) -> f64 {
    let mut x = 1.0 / beta;
    while bose_einstein_tail(beta, mu, x) > tol {
        x *= 1.25;
    }
    let (mut lo, mut hi) = (x / 1.25, x);
    while hi - lo > 0.01 * hi {
        let m = 0.5 * (lo + hi);
        if bose_einstein_tail(beta, mu, m) > tol {
            lo = m;
        } else {
            hi = m;
        }
    }
    hi
}

pub const DEFAULT_TAIL_TOL: f64 = 1e-10;

/// G_{β,μ,C} with cell averages on `grid`. Fails if the tail beyond the grid
/// exceeds [`DEFAULT_TAIL_TOL`].
pub fn bose_einstein(beta: f64, mu: f64, c: f64, grid: &GridSpec) -> Result<RadialMeasure> {
    bose_einstein_with_tol(beta, mu, c, grid, DEFAULT_TAIL_TOL)
}

pub fn bose_einstein_with_tol(beta: f64, mu: f64, c: f64, grid: &GridSpec, tail_tol: f64) -> Result<RadialMeasure> {
    check_be_params(beta, mu, c)?;
    let tail = bose_einstein_tail(beta, mu, grid.x_max());
    if tail > tail_tol {
        return Err(NckError::Precondition(format!(
            "grid x_max={} leaves tail mass {tail:.3e} > {tail_tol:.1e}",
            grid.x_max()
        )));
    }
    let values = (0..grid.cells())
        .map(|i| {
            let (l, r) = grid.cell(i);
            be_mass(beta, mu, l, r) / (r - l)
        })
        .collect();
    let density = CellDensity::new(grid.clone(), values)?;
    RadialMeasure::new(c, vec![], Some(density))
}

/// Analytic profile `coef · x^exponent` on (0, x_max].
#[derive(Debug, Clone, Copy)]
pub struct PowerDensity {
    pub coef: f64,
    pub exponent: f64,
    pub x_max: f64,
}

impl Density for PowerDensity {
    fn value(&self, x: f64) -> f64 {
        if x <= 0.0 || x > self.x_max {
            0.0
        } else {
            self.coef * x.powf(self.exponent)
        }
    }
    fn support(&self) -> (f64, f64) {
        (0.0, self.x_max)
    }
    fn breakpoints(&self) -> Vec<f64> {
        vec![0.0, self.x_max]
    }
}

/// Any closure as a density on [lo, hi] with given breakpoints.
pub struct FnDensity<F: Fn(f64) -> f64 + Sync> {
    pub f: F,
    pub lo: f64,
    pub hi: f64,
    pub breaks: Vec<f64>,
}

impl<F: Fn(f64) -> f64 + Sync> Density for FnDensity<F> {
    fn value(&self, x: f64) -> f64 {
        if x < self.lo || x > self.hi {
            0.0
        } else {
            (self.f)(x)
        }
    }
    fn support(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }
    fn breakpoints(&self) -> Vec<f64> {
        let mut b = vec![self.lo, self.hi];
        b.extend(self.breaks.iter().copied());
        b
    }
}

// ---------------------------------------------------------------------------
// Mass- and energy-preserving mollifier

/// f_n(x) = eⁿ ∫ J_{a,b}(eⁿ(x - y(1-e⁻ⁿ))) dμ(y), J_{a,b}(z) = a e^{-bz²} on z ≥ 0,
/// with a = 2√(b/π) and b = π⁻¹(M₀/M₁)².
#[derive(Debug, Clone)]
pub struct Mollified {
    pub n: u32,
    pub b: f64,
    shrink: f64,
    sigma: f64,
    point_masses: Vec<(f64, f64)>,
    cells: Option<CellDensity>,
}

impl Mollified {
    pub fn new(mu: &RadialMeasure, n: u32) -> Result<Self> {
        if n < 1 {
            return domain("mollifier index must be >= 1");
        }
        let m0 = mu.moment(0.0)?;
        let m1 = mu.moment(1.0)?;
        if !(m0 > 0.0) || !(m1 > 0.0) {
            return domain("mollify needs positive mass and positive energy");
        }
        let b = (m0 / m1).powi(2) / std::f64::consts::PI;
        let en = (n as f64).exp();
        let mut point_masses = Vec::with_capacity(mu.atoms().len() + 1);
        if mu.atom0 > 0.0 {
            point_masses.push((0.0, mu.atom0));
        }
        point_masses.extend_from_slice(mu.atoms());
        Ok(Mollified {
            n,
            b,
            shrink: 1.0 - (-(n as f64)).exp(),
            sigma: en * b.sqrt(),
            point_masses,
            cells: mu.density.clone(),
        })
    }

    /// Width scale 1/σ of each mollified bump.
    pub fn width(&self) -> f64 {
        1.0 / self.sigma
    }

    /// Pointwise value f_n(x).
    pub fn value(&self, x: f64) -> f64 {
        let s = self.shrink;
        let sig = self.sigma;
        // eⁿ·a = 2σ/√π.
        let peak = 2.0 * sig / std::f64::consts::PI.sqrt();
        let mut v = 0.0;
        for &(y, w) in &self.point_masses {
            let z = x - s * y;
            if z >= 0.0 {
                v += w * peak * (-(sig * z).powi(2)).exp();
            }
        }
        if let Some(d) = &self.cells {
            for (i, &c) in d.values.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                let (l, r) = d.grid.cell(i);
                if x < s * l {
                    continue;
                }
                let top = r.min(x / s);
                v += c / s * (erf(sig * (x - s * l)) - erf(sig * (x - s * top)));
            }
        }
        v
    }

    /// Mass of f_n on [a, b].
    pub fn mass_on(&self, a: f64, b: f64) -> f64 {
        let s = self.shrink;
        let sig = self.sigma;
        let mut m = 0.0;
        for &(y, w) in &self.point_masses {
            m += w * half_gauss_mass(sig, s * y, a, b);
        }
        if let Some(d) = &self.cells {
            // ∫_l^r erf(σ(B - s y)₊) dy = (H(B - s l) - H(B - s r)) / s.
            let h = |z: f64| -> f64 {
                if z <= 0.0 {
                    return 0.0;
                }
                let u = sig * z;
                (u * erf(u) + ((-u * u).exp() - 1.0) / std::f64::consts::PI.sqrt()) / sig
            };
            for (i, &c) in d.values.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                let (l, r) = d.grid.cell(i);
                let part = |bb: f64| (h(bb - s * l) - h(bb - s * r)) / s;
                m += c * (part(b) - part(a));
            }
        }
        m
    }

    /// First moment of f_n on [a, b]. Point masses only; cell sources return `None`.
    pub fn first_moment_on(&self, a: f64, b: f64) -> Option<f64> {
        if self.cells.as_ref().is_some_and(|d| d.values.iter().any(|&v| v > 0.0)) {
            return None;
        }
        let s = self.shrink;
        let sig = self.sigma;
        let mut m = 0.0;
        for &(y, w) in &self.point_masses {
            let c = s * y;
            let lo = a.max(c);
            if b <= lo {
                continue;
            }
            let mass = half_gauss_mass(sig, c, a, b);
            let tail = ((-(sig * (lo - c)).powi(2)).exp() - (-(sig * (b - c)).powi(2)).exp())
                / (sig * std::f64::consts::PI.sqrt());
            m += w * (c * mass + tail);
        }
        Some(m)
    }

    /// ∫ φ f_n = ∫ I_n(φ)(y) dμ(y), I_n(φ)(y) = ∫ φ(z e⁻ⁿ + y(1-e⁻ⁿ)) J_{a,b}(z) dz.
    pub fn integrate_test<F: Fn(f64) -> f64>(&self, phi: F) -> f64 {
        let en = (-(self.n as f64)).exp();
        let a = 2.0 * (self.b / std::f64::consts::PI).sqrt();
        let zmax = 40.0 / self.b.sqrt();
        let opts = QuadOptions::new(1e-15, 1e-12);
        let i_n = |y: f64| {
            integrate(
                |z| phi(z * en + y * self.shrink) * a * (-self.b * z * z).exp(),
                0.0,
                zmax,
                &[1.0 / self.b.sqrt()],
                opts,
            )
            .value
        };
        let mut s = 0.0;
        for &(y, w) in &self.point_masses {
            s += w * i_n(y);
        }
        if let Some(d) = &self.cells {
            for (i, &c) in d.values.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                let (l, r) = d.grid.cell(i);
                s += c * integrate(i_n, l, r, &[], QuadOptions::new(1e-14, 1e-10)).value;
            }
        }
        s
    }

    /// M_α(f_n) by way of [`Self::integrate_test`].
    pub fn moment(&self, alpha: f64) -> f64 {
        self.integrate_test(|x| if alpha == 0.0 { 1.0 } else { x.powf(alpha) })
    }

    /// Cell averages of f_n on `grid`. The grid must reach far enough for the mass.
    pub fn to_measure(&self, grid: &GridSpec) -> Result<RadialMeasure> {
        let values = (0..grid.cells())
            .map(|i| {
                let (l, r) = grid.cell(i);
                (self.mass_on(l, r) / (r - l)).max(0.0)
            })
            .collect();
        Ok(RadialMeasure::from_density(CellDensity::new(grid.clone(), values)?))
    }
}

/// Mass on [a,b] of the unit half-Gaussian (2σ/√π)e^{-σ²(x-c)²} on x ≥ c.
fn half_gauss_mass(sig: f64, c: f64, a: f64, b: f64) -> f64 {
    let lo = a.max(c);
    if b <= lo {
        return 0.0;
    }
    let (u, v) = (sig * (lo - c), sig * (b - c));
    if u > 3.0 {
        erfc(u) - erfc(v)
    } else {
        erf(v) - erf(u)
    }
}

/// The mollified measure as cell averages on `grid`.
pub fn mollify(mu: &RadialMeasure, n: u32, grid: &GridSpec) -> Result<RadialMeasure> {
    Mollified::new(mu, n)?.to_measure(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moment_examples() {
        let m = RadialMeasure::new(2.0, vec![(1.0, 3.0)], None).unwrap();
        assert_eq!(m.moment(0.0).unwrap(), 5.0);
        let m = RadialMeasure::atomic(vec![(4.0, 1.0)]).unwrap();
        assert_eq!(m.moment(0.5).unwrap(), 2.0);
        let d = CellDensity::new(GridSpec::uniform(0.0, 1.0, 7).unwrap(), vec![1.0; 7]).unwrap();
        let m = RadialMeasure::from_density(d);
        assert!((m.moment(0.5).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn nonintegrable_moment_is_domain_error() {
        let d = CellDensity::new(GridSpec::uniform(0.0, 1.0, 4).unwrap(), vec![1.0; 4]).unwrap();
        let m = RadialMeasure::from_density(d);
        assert!(matches!(m.moment(-1.0), Err(NckError::Domain(_))));
        assert!(m.moment(-0.5).is_ok());
    }

    #[test]
    fn atoms_are_canonical() {
        let m = RadialMeasure::atomic(vec![(2.0, 1.0), (1.0, 1.0), (2.0, 0.5)]).unwrap();
        assert_eq!(m.atoms(), &[(1.0, 1.0), (2.0, 1.5)]);
        assert!(RadialMeasure::atomic(vec![(0.0, 1.0)]).is_err());
        assert!(RadialMeasure::atomic(vec![(1.0, -1.0)]).is_err());
    }

    #[test]
    fn split_roundtrip() {
        let g = RadialMeasure::new(2.0, vec![(1.0, 1.0)], None).unwrap();
        let (n0, rest) = split_atom(&g);
        assert_eq!(n0, 2.0);
        assert_eq!(rest.atoms(), &[(1.0, 1.0)]);
        assert_eq!(rest.atom0, 0.0);
        assert_eq!(recombine(n0, &rest).unwrap(), g);
        let h = RadialMeasure::atomic(vec![(3.0, 1.0)]).unwrap();
        let (n0, rest) = split_atom(&h);
        assert_eq!(n0, 0.0);
        assert_eq!(rest, h);
    }

    #[test]
    fn json_roundtrip() {
        let d = CellDensity::new(GridSpec::uniform(0.0, 2.0, 2).unwrap(), vec![0.5, 0.25]).unwrap();
        let g = RadialMeasure::new(1.5, vec![(3.0, 1.0)], Some(d)).unwrap();
        let s = g.to_json().unwrap();
        assert!(s.contains("nck-measure/1"));
        assert_eq!(RadialMeasure::from_json(&s).unwrap(), g);
        assert!(RadialMeasure::from_json(r#"{"version":"other","atom0":0}"#).is_err());
    }

    #[test]
    fn bose_einstein_constraints() {
        let grid = GridSpec::geometric(1e-6, 40.0, 1.05).unwrap();
        assert!(matches!(bose_einstein(1.0, -0.5, 1.0, &grid), Err(NckError::Constraint(_))));
        let g = bose_einstein(1.0, 0.0, 5.0, &grid).unwrap();
        assert_eq!(g.atom0, 5.0);
        let short = GridSpec::geometric(1e-6, 5.0, 1.05).unwrap();
        assert!(matches!(bose_einstein(1.0, 0.0, 0.0, &short), Err(NckError::Precondition(_))));
    }

    #[test]
    fn mollify_rejects_zero_energy() {
        let grid = GridSpec::uniform(0.0, 2.0, 10).unwrap();
        assert!(mollify(&RadialMeasure::dirac0(1.0).unwrap(), 4, &grid).is_err());
    }

    #[test]
    fn grid_locate() {
        let g = GridSpec::uniform(0.0, 1.0, 4).unwrap();
        assert_eq!(g.locate(0.0), Some(0));
        assert_eq!(g.locate(0.25), Some(1));
        assert_eq!(g.locate(1.0), Some(3));
        assert_eq!(g.locate(1.5), None);
    }
}
