//! Weak-form collision functionals: the three-wave pair 𝒬₃⁽²⁾, 𝒬₃⁽¹⁾, 𝒬̃₃⁽¹⁾,
//! the four-wave 𝒬₄ / 𝒬́₄, and the transfer functional 𝒯.
//!
//! Atoms are summed exactly. Densities are integrated in u = √x, where
//! dx/√x = 2du absorbs the 1/√x weights; the remaining integrands are bounded
//! whenever √x·g is.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{NckError, Result};
use crate::measure::{Density, RadialMeasure};
use crate::quad::{integrate, integrate_sqrt_left, pairwise_sum, QuadOptions};
use crate::testfn::{delta_phi, ell0_kernel, ell_kernel, lambda_kernel, x4, TestFunction};

/// W(x₁,x₂,x₃): w/√(x₁x₂x₃) inside the octant, completed on the boundary so that
/// W·Δφ is continuous.
pub fn big_w(x1: f64, x2: f64, x3: f64) -> f64 {
    if x1 > 0.0 && x2 > 0.0 && x3 > 0.0 {
        let w = x1.min(x2).min(x3).min(x4(x1, x2, x3)).sqrt();
        if w == 0.0 {
            return 0.0;
        }
        w / (x1 * x2 * x3).sqrt()
    } else if x3 == 0.0 && x1 > 0.0 && x2 > 0.0 {
        1.0 / (x1 * x2).sqrt()
    } else if x2 == 0.0 && x1 > x3 && x3 > 0.0 {
        1.0 / (x1 * x3).sqrt()
    } else if x1 == 0.0 && x2 > x3 && x3 > 0.0 {
        1.0 / (x2 * x3).sqrt()
    } else {
        0.0
    }
}

/// Φ_φ = W·Δφ.
pub fn phi_capital(phi: &TestFunction, x1: f64, x2: f64, x3: f64) -> f64 {
    let w = big_w(x1, x2, x3);
    if w == 0.0 {
        0.0
    } else {
        w * delta_phi(phi, x1, x2, x3)
    }
}

/// Contributions of a functional split by the structure of g.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Parts {
    pub atomic: f64,
    pub density: f64,
    pub cross: f64,
}

impl Parts {
    pub fn total(&self) -> f64 {
        self.atomic + self.density + self.cross
    }
}

/// A functional value with its quadrature error estimate (0 for exact sums).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Functional {
    pub value: f64,
    pub tol: f64,
    pub parts: Parts,
}

impl Functional {
    fn from_parts(parts: Parts, tol: f64) -> Self {
        Functional { value: parts.total(), tol, parts }
    }
}

/// A measure on (0,∞) seen as atoms plus an optional density. Lets analytic
/// profiles be used in place of cell averages.
#[derive(Clone, Copy)]
pub struct MeasureView<'a> {
    pub atoms: &'a [(f64, f64)],
    pub density: Option<&'a dyn Density>,
}

impl<'a> MeasureView<'a> {
    /// Fails when g carries an atom at 0, where the three-wave functionals are undefined.
    pub fn of(g: &'a RadialMeasure) -> Result<Self> {
        if g.atom0 != 0.0 {
            return Err(NckError::Precondition(format!(
                "functional is defined on (0,∞); measure has an atom {} at 0",
                g.atom0
            )));
        }
        Ok(MeasureView { atoms: g.atoms(), density: g.density.as_ref().map(|d| d as &dyn Density) })
    }

    pub fn atomic(atoms: &'a [(f64, f64)]) -> Self {
        MeasureView { atoms, density: None }
    }

    pub fn density(d: &'a dyn Density) -> Self {
        MeasureView { atoms: &[], density: Some(d) }
    }

    /// M_{1/2}.
    pub fn half_moment(&self, opts: QuadOptions) -> f64 {
        let a = pairwise_sum(&self.atoms.iter().map(|&(x, w)| w * x.sqrt()).collect::<Vec<_>>());
        let d = match self.density {
            Some(d) => {
                let (lo, hi, ub) = u_frame(d);
                integrate(|u| 2.0 * u * u * d.value(u * u), lo, hi, &ub, opts).value
            }
            None => 0.0,
        };
        a + d
    }
}

/// Tolerances for the nested density quadratures.
#[derive(Debug, Clone, Copy)]
pub struct WeakOptions {
    pub inner: QuadOptions,
    pub outer: QuadOptions,
}

impl Default for WeakOptions {
    fn default() -> Self {
        WeakOptions { inner: QuadOptions::new(1e-14, 1e-11), outer: QuadOptions::new(1e-13, 1e-10) }
    }
}

fn u_frame(d: &dyn Density) -> (f64, f64, Vec<f64>) {
    let (lo, hi) = d.support();
    let ub = d.breakpoints().into_iter().filter(|&b| b > 0.0).map(f64::sqrt).collect();
    (lo.max(0.0).sqrt(), hi.sqrt(), ub)
}

fn push_sqrt(out: &mut Vec<f64>, y: f64) {
    if y > 0.0 && y.is_finite() {
        out.push(y.sqrt());
    }
}

// ---------------------------------------------------------------------------
// Three-wave functionals

/// 𝒬₃⁽²⁾(φ,g) = ∬ Λ(φ)(x,y)/√(xy) g(x)g(y), diagonal included for atoms.
pub fn q3_quadratic(phi: &TestFunction, g: &RadialMeasure) -> Result<Functional> {
    Ok(q3_quadratic_view(phi, MeasureView::of(g)?, WeakOptions::default()))
}

pub fn q3_quadratic_view(phi: &TestFunction, g: MeasureView<'_>, opts: WeakOptions) -> Functional {
    let atoms = g.atoms;
    let rows: Vec<f64> = atoms
        .par_iter()
        .map(|&(xi, wi)| {
            let terms: Vec<f64> =
                atoms.iter().map(|&(xj, wj)| lambda_kernel(phi, xi, xj) / (xi * xj).sqrt() * wi * wj).collect();
            pairwise_sum(&terms)
        })
        .collect();
    let mut parts = Parts { atomic: pairwise_sum(&rows), ..Parts::default() };
    let mut tol = 0.0;
    if let Some(d) = g.density {
        let (dd, e1) = density_density(phi, d, opts);
        let cross: Vec<(f64, f64)> = atoms.par_iter().map(|&(x, w)| atom_density(phi, x, w, d, opts)).collect();
        parts.density = dd;
        parts.cross = pairwise_sum(&cross.iter().map(|c| c.0).collect::<Vec<_>>());
        tol = e1 + cross.iter().map(|c| c.1).sum::<f64>();
    }
    Functional::from_parts(parts, tol)
}

/// 8∫_0^{√X} g(u²) ∫_0^u Λ(φ)(u²,v²) g(v²) dv du: the density×density part, using symmetry.
fn density_density(phi: &TestFunction, d: &dyn Density, opts: WeakOptions) -> (f64, f64) {
    let (lo, hi, ub) = u_frame(d);
    let kinks = phi.kinks();
    let mut outer_breaks = ub.clone();
    for &k in kinks {
        push_sqrt(&mut outer_breaks, k);
        push_sqrt(&mut outer_breaks, 0.5 * k);
    }
    let inner_err = std::cell::Cell::new(0.0);
    let inner = |u: f64| -> f64 {
        let x = u * u;
        let mut vb = ub.clone();
        for &k in kinks {
            push_sqrt(&mut vb, k - x);
            push_sqrt(&mut vb, x - k);
        }
        let phx = phi.eval(x);
        let r = integrate(
            |v| {
                let y = v * v;
                (phi.eval(x + y) + phi.eval(x - y) - 2.0 * phx) * d.value(y)
            },
            lo,
            u,
            &vb,
            opts.inner,
        );
        inner_err.set(inner_err.get() + r.error * r.error);
        r.value
    };
    let r = integrate(
        |u| {
            let gu = d.value(u * u);
            if gu == 0.0 {
                0.0
            } else {
                gu * inner(u)
            }
        },
        lo,
        hi,
        &outer_breaks,
        opts.outer,
    );
    (8.0 * r.value, 8.0 * (r.error + inner_err.get().sqrt()))
}

/// 2·(w/√x)·∫ 2Λ(φ)(x,v²) g(v²) dv: both orderings of an atom against the density.
fn atom_density(phi: &TestFunction, x: f64, w: f64, d: &dyn Density, opts: WeakOptions) -> (f64, f64) {
    let (lo, hi, mut vb) = u_frame(d);
    push_sqrt(&mut vb, x);
    for &k in phi.kinks() {
        push_sqrt(&mut vb, k - x);
        push_sqrt(&mut vb, x - k);
        push_sqrt(&mut vb, x + k);
        push_sqrt(&mut vb, k);
    }
    let r = integrate(|v| 2.0 * lambda_kernel(phi, x, v * v) * d.value(v * v), lo, hi, &vb, opts.outer);
    let c = 2.0 * w / x.sqrt();
    (c * r.value, c * r.error)
}

fn linear_generic<K: Fn(f64) -> f64 + Sync>(
    kernel: K,
    kinks: &[f64],
    g: MeasureView<'_>,
    opts: WeakOptions,
) -> Functional {
    let terms: Vec<f64> = g.atoms.iter().map(|&(x, w)| kernel(x) / x.sqrt() * w).collect();
    let mut parts = Parts { atomic: pairwise_sum(&terms), ..Parts::default() };
    let mut tol = 0.0;
    if let Some(d) = g.density {
        let (lo, hi, mut ub) = u_frame(d);
        for &k in kinks {
            push_sqrt(&mut ub, k);
        }
        let r = integrate(|u| 2.0 * kernel(u * u) * d.value(u * u), lo, hi, &ub, opts.outer);
        parts.density = r.value;
        tol = r.error;
    }
    Functional::from_parts(parts, tol)
}

/// 𝒬₃⁽¹⁾(φ,g) = ∫ 𝓛₀(φ)(x)/√x g(x) dx.
pub fn q3_linear(phi: &TestFunction, g: &RadialMeasure) -> Result<Functional> {
    Ok(q3_linear_view(phi, MeasureView::of(g)?, WeakOptions::default()))
}

pub fn q3_linear_view(phi: &TestFunction, g: MeasureView<'_>, opts: WeakOptions) -> Functional {
    linear_generic(|x| ell0_kernel(phi, x), phi.kinks(), g, opts)
}

/// 𝒬̃₃⁽¹⁾(φ,g) = ∫ 𝓛(φ)(x)/√x g(x) dx.
pub fn q3_linear_tilde(phi: &TestFunction, g: &RadialMeasure) -> Result<Functional> {
    Ok(q3_linear_tilde_view(phi, MeasureView::of(g)?, WeakOptions::default()))
}

pub fn q3_linear_tilde_view(phi: &TestFunction, g: MeasureView<'_>, opts: WeakOptions) -> Functional {
    linear_generic(|x| ell_kernel(phi, x), phi.kinks(), g, opts)
}

/// 𝒬₃ = 𝒬₃⁽²⁾ - 𝒬₃⁽¹⁾ and 𝒬̃₃ = 𝒬₃⁽²⁾ - 𝒬̃₃⁽¹⁾, computed from their own kernels, plus
/// the residual of 𝒬₃ = 𝒬̃₃ - φ(0)M_{1/2}(g).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Q3Value {
    pub q3: f64,
    pub q3_tilde: f64,
    pub quadratic: Functional,
    pub linear: Functional,
    pub linear_tilde: Functional,
    pub half_moment: f64,
    pub identity_residual: f64,
    pub scale: f64,
    pub tol: f64,
}

/// Relative tolerance on the identity for exact (atomic) evaluations.
pub const IDENTITY_RTOL: f64 = 1e-12;

pub fn q3(phi: &TestFunction, g: &RadialMeasure) -> Result<Q3Value> {
    q3_view(phi, MeasureView::of(g)?, WeakOptions::default())
}

pub fn q3_view(phi: &TestFunction, g: MeasureView<'_>, opts: WeakOptions) -> Result<Q3Value> {
    let quadratic = q3_quadratic_view(phi, g, opts);
    let linear = q3_linear_view(phi, g, opts);
    let linear_tilde = q3_linear_tilde_view(phi, g, opts);
    let half_moment = g.half_moment(opts.outer);
    let q3 = quadratic.value - linear.value;
    let q3_tilde = quadratic.value - linear_tilde.value;
    let phi0 = phi.eval(0.0);
    let identity_residual = q3 - (q3_tilde - phi0 * half_moment);
    let scale = quadratic.value.abs() + linear.value.abs() + linear_tilde.value.abs() + (phi0 * half_moment).abs();
    let tol = quadratic.tol + linear.tol + linear_tilde.tol;
    let allowed = IDENTITY_RTOL * scale
        + 10.0 * (linear.tol + linear_tilde.tol)
        + 1e-10 * (phi0 * half_moment).abs() * (g.density.is_some() as u8 as f64);
    if identity_residual.abs() > allowed {
        return Err(NckError::Consistency(format!(
            "q3 identity residual {identity_residual:.3e} exceeds {allowed:.3e} (phi={})",
            phi.name()
        )));
    }
    Ok(Q3Value { q3, q3_tilde, quadratic, linear, linear_tilde, half_moment, identity_residual, scale, tol })
}

/// q3 value only.
pub fn q3_value(phi: &TestFunction, g: &RadialMeasure) -> Result<f64> {
    Ok(q3(phi, g)?.q3)
}

pub fn q3_tilde(phi: &TestFunction, g: &RadialMeasure) -> Result<f64> {
    Ok(q3(phi, g)?.q3_tilde)
}

// ---------------------------------------------------------------------------
// Four-wave functional (atomic measures only)

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Q4Value {
    pub value: f64,
    pub cubic: f64,
    pub quadratic: f64,
    /// Sum of absolute contributions, the natural scale for residuals.
    pub scale: f64,
    pub tol: f64,
}

/// 𝒬₄(φ,G) for atomic G, the atom at 0 included.
pub fn q4_full(phi: &TestFunction, g: &RadialMeasure) -> Result<Q4Value> {
    if g.density.is_some() {
        return Err(NckError::Unsupported("q4 on measures with a density part".into()));
    }
    let mut pts = Vec::with_capacity(g.atoms().len() + 1);
    if g.atom0 > 0.0 {
        pts.push((0.0, g.atom0));
    }
    pts.extend_from_slice(g.atoms());
    Ok(q4_atomic(phi, &pts))
}

/// 𝒬́₄(φ,g) for atomic g on (0,∞).
pub fn q4_script(phi: &TestFunction, g: &RadialMeasure) -> Result<Q4Value> {
    if g.atom0 != 0.0 {
        return Err(NckError::Precondition("q4_script needs g without an atom at 0".into()));
    }
    q4_full(phi, g)
}

fn q4_atomic(phi: &TestFunction, pts: &[(f64, f64)]) -> Q4Value {
    let opts = QuadOptions::new(1e-15, 1e-13);
    // Cubic term, one row per first index.
    let cubic_rows: Vec<(f64, f64)> = pts
        .par_iter()
        .map(|&(x1, w1)| {
            let mut terms = Vec::with_capacity(pts.len() * pts.len());
            for &(x2, w2) in pts {
                for &(x3, w3) in pts {
                    terms.push(w1 * w2 * w3 * phi_capital(phi, x1, x2, x3));
                }
            }
            let abs: f64 = terms.iter().map(|t| t.abs()).sum();
            (pairwise_sum(&terms), abs)
        })
        .collect();
    // Quadratic term: ½ Σ w₁w₂ ∫ √x₃ Φ_φ(x₁,x₂,x₃) dx₃.
    let quad_rows: Vec<(f64, f64, f64)> = pts
        .par_iter()
        .map(|&(x1, w1)| {
            let mut terms = Vec::with_capacity(pts.len());
            let mut abs = 0.0;
            let mut err = 0.0;
            for &(x2, w2) in pts {
                let (v, e) = quadratic_x3(phi, x1, x2, opts);
                terms.push(0.5 * w1 * w2 * v);
                abs += (0.5 * w1 * w2 * v).abs();
                err += 0.5 * w1 * w2 * e;
            }
            (pairwise_sum(&terms), abs, err)
        })
        .collect();
    let cubic = pairwise_sum(&cubic_rows.iter().map(|r| r.0).collect::<Vec<_>>());
    let quadratic = pairwise_sum(&quad_rows.iter().map(|r| r.0).collect::<Vec<_>>());
    let scale = cubic_rows.iter().map(|r| r.1).sum::<f64>() + quad_rows.iter().map(|r| r.1).sum::<f64>();
    let tol = quad_rows.iter().map(|r| r.2).sum();
    Q4Value { value: cubic + quadratic, cubic, quadratic, scale, tol }
}

/// ∫_0^{x₁+x₂} √x₃ Φ_φ(x₁,x₂,x₃) dx₃. The integrand vanishes beyond x₁+x₂ because
/// w carries √x₄. Both ends behave like a square root, so the end panels are
/// integrated after the substitution x = a + u².
fn quadratic_x3(phi: &TestFunction, x1: f64, x2: f64, opts: QuadOptions) -> (f64, f64) {
    let top = x1 + x2;
    if top <= 0.0 {
        return (0.0, 0.0);
    }
    let f = |x3: f64| {
        if x3 <= 0.0 {
            return 0.0;
        }
        x3.sqrt() * phi_capital(phi, x1, x2, x3)
    };
    let mut breaks = vec![x1, x2, 0.5 * top, (x1 - x2).abs()];
    for &k in phi.kinks() {
        breaks.push(k);
        breaks.push(top - k);
    }
    let pts = crate::quad::merge_points(0.0, top, &breaks);
    let n = pts.len() - 1;
    let mut vals = Vec::with_capacity(n);
    let mut err = 0.0;
    for (i, w) in pts.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        let r = if i == 0 {
            integrate_sqrt_left(f, a, b, &[], opts)
        } else if i == n - 1 {
            integrate_sqrt_left(|z| f(top - z), 0.0, b - a, &[], opts)
        } else {
            integrate(f, a, b, &[], opts)
        };
        vals.push(r.value);
        err += r.error;
    }
    (pairwise_sum(&vals), err)
}

// ---------------------------------------------------------------------------
// Transfer functional

#[derive(Debug, Clone, Serialize)]
pub struct TransferEstimate {
    pub eps: Vec<f64>,
    pub estimates: Vec<f64>,
    /// Linear-in-ε Richardson limit from the last two estimates.
    pub extrapolated: f64,
    pub converged: bool,
    /// ε values below the resolution floor, if any.
    pub below_floor: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Resolution floor for ε: three widths of the first density cell. Analytic
/// profiles have none.
pub fn eps_floor(g: &RadialMeasure) -> f64 {
    g.density.as_ref().map_or(0.0, |d| 3.0 * d.grid.first_width())
}

/// 𝒯(g) = lim_{ε→0} 𝒬₃⁽²⁾(φ_ε, g).
pub fn transfer_functional(g: &RadialMeasure, eps: &[f64]) -> Result<TransferEstimate> {
    transfer_functional_view(MeasureView::of(g)?, eps, eps_floor(g), WeakOptions::default())
}

pub fn transfer_functional_view(
    g: MeasureView<'_>,
    eps: &[f64],
    floor: f64,
    opts: WeakOptions,
) -> Result<TransferEstimate> {
    if eps.is_empty() {
        return Err(NckError::Domain("empty eps sequence".into()));
    }
    if eps.windows(2).any(|w| !(w[1] < w[0])) || eps.iter().any(|&e| !(e > 0.0)) {
        return Err(NckError::Domain("eps sequence must be positive and strictly decreasing".into()));
    }
    let mut estimates = Vec::with_capacity(eps.len());
    for &e in eps {
        let phi = TestFunction::phi_eps(e)?;
        estimates.push(q3_quadratic_view(&phi, g, opts).value);
    }
    let below_floor: Vec<f64> = eps.iter().copied().filter(|&e| e < floor).collect();
    let mut warnings = Vec::new();
    if !below_floor.is_empty() {
        warnings.push(format!(
            "{} eps value(s) below the resolution floor {floor:.3e}; those estimates measure the mesh",
            below_floor.len()
        ));
    }
    let k = estimates.len();
    let extrapolated = if k >= 2 {
        richardson_linear(eps[k - 2], estimates[k - 2], eps[k - 1], estimates[k - 1])
    } else {
        estimates[0]
    };
    let diffs: Vec<f64> = estimates.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let scale = estimates.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let converged = diffs.windows(2).all(|d| d[1] <= d[0] * 1.05 + 1e-12 * scale);
    if !converged {
        warnings.push("successive estimates do not contract; limit unreliable".into());
    }
    Ok(TransferEstimate { eps: eps.to_vec(), estimates, extrapolated, converged, below_floor, warnings })
}

/// Value at ε = 0 of the line through (e1,t1), (e2,t2).
pub fn richardson_linear(e1: f64, t1: f64, e2: f64, t2: f64) -> f64 {
    (e1 * t2 - e2 * t1) / (e1 - e2)
}

// ---------------------------------------------------------------------------
// JSON records

#[derive(Debug, Clone, Serialize)]
pub struct FunctionalRecord {
    pub functional: String,
    pub phi: String,
    pub value: f64,
    pub tol: f64,
    pub parts: Parts,
}

impl FunctionalRecord {
    pub fn new(functional: &str, phi: &TestFunction, f: &Functional) -> Self {
        FunctionalRecord {
            functional: functional.into(),
            phi: phi.name().into(),
            value: f.value,
            tol: f.tol,
            parts: f.parts,
        }
    }

    pub fn scalar(functional: &str, phi: &TestFunction, value: f64, tol: f64) -> Self {
        FunctionalRecord {
            functional: functional.into(),
            phi: phi.name().into(),
            value,
            tol,
            parts: Parts { atomic: value, ..Parts::default() },
        }
    }
}
