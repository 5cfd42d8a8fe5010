//! The cutoff layer: φₙ, the strong-form operators Kₙ, Lₙ, Aₙ, J₃,ₙ and the
//! regularized weak form 𝒬̃₃,ₙ, discretized on a uniform lattice.
//!
//! Nodes sit at x_k = kΔ with Δ = 1/(4n). Node k carries the mass m_k of the dual
//! cell [x_k - Δ/2, x_k + Δ/2] (half cells at both ends), and p_k = ψ̄_k m_k where
//! ψ̄_k is the exact cell average of φₙ. The discrete weak form is
//!
//!   Q(φ) = Σ_{i,j≥1} Λ(φ)(x_i,x_j) p_i p_j - Σ_{i≥1} 𝓛_Δ(φ)(x_i) p_i,
//!
//! with 𝓛_Δ using the lattice trapezoid for ∫₀ˣφ, so that 𝓛_Δ(x) ≡ 0 and
//! 𝓛_Δ(1)(x) = -x exactly. Every elementary process removes mass only from its
//! largest node, which is what lets the stepper conserve energy exactly. Node 0
//! never enters the sums: it only receives, and plays the condensate.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{domain, NckError, Result};
use crate::measure::{CellDensity, Density, FnDensity, GridSpec, RadialMeasure};
use crate::quad::pairwise_sum;
use crate::testfn::{lambda_kernel, TestFunction};
use crate::weakops::{q3_view, MeasureView, WeakOptions};

/// Realization tag of φₙ. Every downstream number depends on it.
pub const CUTOFF_VERSION: &str = "phi_n/sqrt-cap+linear-ramp/1";

/// φₙ(x) = √n on [0,1/n], x^{-1/2} on [1/n,n], n^{-1/2}(n+1-x) on [n,n+1], 0 beyond.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cutoff {
    n: u32,
}

impl Cutoff {
    pub fn new(n: u32) -> Result<Self> {
        if n == 0 {
            return domain("cutoff index n must be >= 1");
        }
        Ok(Cutoff { n })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn support_end(&self) -> f64 {
        self.n as f64 + 1.0
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.n as f64;
        if x < 0.0 || x >= n + 1.0 {
            0.0
        } else if x <= 1.0 / n {
            n.sqrt()
        } else if x <= n {
            1.0 / x.sqrt()
        } else {
            (n + 1.0 - x) / n.sqrt()
        }
    }

    /// ∫₀ˣ φₙ, exact.
    pub fn antiderivative(&self, x: f64) -> f64 {
        let n = self.n as f64;
        let sn = n.sqrt();
        if x <= 0.0 {
            0.0
        } else if x <= 1.0 / n {
            sn * x
        } else if x <= n {
            2.0 * x.sqrt() - 1.0 / sn
        } else {
            let xe = x.min(n + 1.0);
            let at_n = 2.0 * sn - 1.0 / sn;
            at_n + ((n + 1.0) * (xe - n) - 0.5 * (xe * xe - n * n)) / sn
        }
    }

    /// Average of φₙ over [a, b].
    pub fn cell_average(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return self.eval(a);
        }
        (self.antiderivative(b) - self.antiderivative(a)) / (b - a)
    }
}

pub fn cutoff_eval(n: u32, x: f64) -> Result<f64> {
    Ok(Cutoff::new(n)?.eval(x))
}

/// Uniform node lattice with dual cells tied to the cutoff scale.
#[derive(Debug, Clone)]
pub struct Lattice {
    cutoff: Cutoff,
    delta: f64,
    /// Nodes with index ≤ `last_active` see φₙ > 0 somewhere in their cell.
    last_active: usize,
    psi: Vec<f64>,
    omega: Vec<f64>,
    grid: GridSpec,
}

impl Lattice {
    /// Δ = 1/(4n), nodes up to 2(n+1), which contains every product of two active nodes.
    pub fn new(n: u32) -> Result<Self> {
        Self::with_refinement(n, 4)
    }

    /// Δ = 1/(r·n), r ≥ 4.
    pub fn with_refinement(n: u32, r: u32) -> Result<Self> {
        if r < 4 {
            return domain("lattice needs at least 4 nodes per 1/n");
        }
        let cutoff = Cutoff::new(n)?;
        let per_unit = (r * n) as usize;
        let delta = 1.0 / per_unit as f64;
        let last_active = per_unit * (n as usize + 1);
        let k_max = 2 * last_active;
        let x = |k: usize| k as f64 * delta;
        let mut edges = Vec::with_capacity(k_max + 2);
        edges.push(0.0);
        for k in 0..k_max {
            edges.push(x(k) + 0.5 * delta);
        }
        edges.push(x(k_max));
        let grid = GridSpec::from_edges(edges)?;
        let omega: Vec<f64> = (0..=k_max).map(|k| grid.cell(k).1 - grid.cell(k).0).collect();
        let psi: Vec<f64> = (0..=k_max)
            .map(|k| {
                if k == 0 || k > last_active {
                    0.0
                } else {
                    let (a, b) = grid.cell(k);
                    cutoff.cell_average(a, b)
                }
            })
            .collect();
        Ok(Lattice { cutoff, delta, last_active, psi, omega, grid })
    }

    pub fn cutoff(&self) -> Cutoff {
        self.cutoff
    }
    pub fn n(&self) -> u32 {
        self.cutoff.n
    }
    pub fn delta(&self) -> f64 {
        self.delta
    }
    /// Number of nodes, node 0 included.
    pub fn len(&self) -> usize {
        self.psi.len()
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    pub fn last_active(&self) -> usize {
        self.last_active
    }
    pub fn x(&self, k: usize) -> f64 {
        k as f64 * self.delta
    }
    pub fn x_max(&self) -> f64 {
        self.x(self.len() - 1)
    }
    /// Width of the dual cell of node k.
    pub fn omega(&self, k: usize) -> f64 {
        self.omega[k]
    }
    /// Cell average of φₙ around node k (0 for node 0 and inert nodes).
    pub fn psi(&self, k: usize) -> f64 {
        self.psi[k]
    }
    /// Dual cells as a grid.
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// p_k = ψ̄_k m_k, zero at node 0.
    pub fn weighted(&self, m: &[f64]) -> Vec<f64> {
        m.iter().zip(&self.psi).map(|(a, b)| a * b).collect()
    }

    /// Node masses of a measure by linear (hat) projection: exact in M₀ and M₁.
    /// The atom at 0 lands on node 0. Mass beyond the lattice is an error.
    pub fn project(&self, mu: &RadialMeasure) -> Result<Vec<f64>> {
        let mut m = vec![0.0; self.len()];
        m[0] += mu.atom0;
        let top = self.x_max();
        let mut put = |mass: f64, mean: f64| -> Result<()> {
            if mass == 0.0 {
                return Ok(());
            }
            if mean > top * (1.0 + 1e-12) {
                return Err(NckError::Config {
                    field: "initial_data".into(),
                    msg: format!("mass at x={mean} lies beyond the lattice end {top}"),
                });
            }
            let s = (mean / self.delta).max(0.0);
            let k = (s.floor() as usize).min(self.len() - 1);
            let t = s - k as f64;
            if k + 1 < self.len() {
                m[k] += mass * (1.0 - t);
                m[k + 1] += mass * t;
            } else {
                m[k] += mass;
            }
            Ok(())
        };
        for &(x, w) in mu.atoms() {
            put(w, x)?;
        }
        if let Some(d) = &mu.density {
            for (i, &c) in d.values.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                let (l, r) = d.grid.cell(i);
                // Split at nodes so each piece projects onto one pair.
                let mut a = l;
                while a < r {
                    let next_node = ((a / self.delta).floor() + 1.0) * self.delta;
                    let b = next_node.min(r);
                    let mass = c * (b - a);
                    put(mass, 0.5 * (a + b))?;
                    a = b;
                }
            }
        }
        Ok(m)
    }
}

/// A nonnegative bounded function on the lattice, stored as dual-cell averages.
#[derive(Debug, Clone)]
pub struct DensityFn {
    lattice: Arc<Lattice>,
    values: Vec<f64>,
}

impl DensityFn {
    pub fn new(lattice: Arc<Lattice>, values: Vec<f64>) -> Result<Self> {
        if values.len() != lattice.len() {
            return domain(format!("{} values for {} nodes", values.len(), lattice.len()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return domain("density values must be finite and nonnegative");
        }
        Ok(DensityFn { lattice, values })
    }

    pub fn from_masses(lattice: Arc<Lattice>, m: &[f64]) -> Result<Self> {
        let values = m.iter().enumerate().map(|(k, &v)| v / lattice.omega(k)).collect();
        Self::new(lattice, values)
    }

    /// Cell averages of `f` over the dual cells.
    pub fn from_fn<F: Fn(f64) -> f64>(lattice: Arc<Lattice>, f: F) -> Result<Self> {
        let d = CellDensity::from_fn(lattice.grid().clone(), f)?;
        Self::new(lattice, d.values)
    }

    pub fn lattice(&self) -> &Arc<Lattice> {
        &self.lattice
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn masses(&self) -> Vec<f64> {
        self.values.iter().enumerate().map(|(k, &v)| v * self.lattice.omega(k)).collect()
    }
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, &v| m.max(v))
    }
    pub fn to_cell_density(&self) -> CellDensity {
        CellDensity { grid: self.lattice.grid().clone(), values: self.values.clone() }
    }
}

/// Signed lattice function (J₃,ₙ can take either sign).
#[derive(Debug, Clone)]
pub struct SignedFn {
    pub lattice: Arc<Lattice>,
    pub values: Vec<f64>,
}

// ---------------------------------------------------------------------------
// Rate engine

/// Weighted gains: every process is scaled by q/p at its largest node, with q = λp.
/// With q = p these are the plain rates. Units: mass per unit τ at each node.
pub fn weighted_gains(lat: &Lattice, p: &[f64], q: &[f64]) -> Vec<f64> {
    let a = lat.last_active();
    let len = lat.len();
    let delta = lat.delta();
    // Suffix sums of q for the linear gains.
    let mut suffix = vec![0.0; len + 1];
    for k in (1..len).rev() {
        suffix[k] = suffix[k + 1] + q[k];
    }
    (0..len)
        .into_par_iter()
        .map(|k| {
            // Coalescence into k: pairs i < j with i + j = k, weight at j.
            let mut conv = 0.0;
            let lo = if k > a { k - a } else { 1 };
            let mut i = lo;
            while 2 * i < k {
                let j = k - i;
                conv += p[i] * q[j];
                i += 1;
            }
            conv *= 2.0;
            if k % 2 == 0 && k / 2 >= 1 && k / 2 <= a {
                conv += q[k / 2] * p[k / 2];
            }
            // Splitting into the difference |i - j| = k, weight at the larger node.
            let mut corr = 0.0;
            if k == 0 {
                for i in 1..=a {
                    corr += q[i] * p[i];
                }
            } else if k < a {
                let mut s = 0.0;
                for j in 1..=(a - k) {
                    s += q[j + k] * p[j];
                }
                corr = 2.0 * s;
            }
            let lin = if k == 0 { delta * suffix[1] } else { 2.0 * delta * suffix[k + 1] + delta * q[k] };
            conv + corr + lin
        })
        .collect()
}

/// Loss rate coefficients A_k = ψ̄_k (x_k + 4Σ_{1≤j<k} p_j + 2p_k), so C_k = A_k m_k.
pub fn loss_coefficients(lat: &Lattice, p: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; lat.len()];
    let mut below = 0.0;
    for k in 1..=lat.last_active() {
        out[k] = lat.psi(k) * (lat.x(k) + 4.0 * below + 2.0 * p[k]);
        below += p[k];
    }
    out
}

/// Gain and loss rates at node masses m.
#[derive(Debug, Clone)]
pub struct Rates {
    pub p: Vec<f64>,
    pub gain: Vec<f64>,
    pub loss_coef: Vec<f64>,
    pub consumption: Vec<f64>,
}

pub fn rates(lat: &Lattice, m: &[f64]) -> Rates {
    let p = lat.weighted(m);
    let gain = weighted_gains(lat, &p, &p);
    let loss_coef = loss_coefficients(lat, &p);
    let consumption = loss_coef.iter().zip(m).map(|(a, b)| a * b).collect();
    Rates { p, gain, loss_coef, consumption }
}

/// Σ x_k p_k: the regularized half-moment, equal to dM₀/dτ.
pub fn half_moment_rate(lat: &Lattice, p: &[f64]) -> f64 {
    let terms: Vec<f64> = (1..=lat.last_active()).map(|k| lat.x(k) * p[k]).collect();
    pairwise_sum(&terms)
}

// ---------------------------------------------------------------------------
// Strong-form operators (density units)

fn check(h: &DensityFn, n: u32) -> Result<()> {
    if h.lattice.n() != n {
        return domain(format!("density lives on the n={} lattice, asked for n={n}", h.lattice.n()));
    }
    Ok(())
}

/// The two integrals of Kₙ separately: coalescence ∫₀ˣ and splitting 2∫ₓ^∞.
#[derive(Debug, Clone)]
pub struct KParts {
    pub coalescence: Vec<f64>,
    pub splitting: Vec<f64>,
}

pub fn k_n_parts(h: &DensityFn, n: u32) -> Result<KParts> {
    check(h, n)?;
    let lat = &*h.lattice;
    let p = lat.weighted(&h.masses());
    let a = lat.last_active();
    let len = lat.len();
    let coalescence: Vec<f64> = (0..len)
        .into_par_iter()
        .map(|k| {
            let mut s = 0.0;
            let lo = if k > a { k - a } else { 1 };
            for i in lo..k {
                if k - i > a {
                    continue;
                }
                s += p[i] * p[k - i];
            }
            s / lat.omega(k)
        })
        .collect();
    let splitting: Vec<f64> = (0..len)
        .into_par_iter()
        .map(|k| {
            if k >= a {
                return 0.0;
            }
            let mut s = 0.0;
            for j in 1..=(a - k) {
                s += p[j + k] * p[j];
            }
            // At k = 0 the pair (j, j) is counted once.
            let f = if k == 0 { 1.0 } else { 2.0 };
            f * s / lat.omega(k)
        })
        .collect();
    Ok(KParts { coalescence, splitting })
}

pub fn k_n(h: &DensityFn, n: u32) -> Result<DensityFn> {
    let parts = k_n_parts(h, n)?;
    let v = parts.coalescence.iter().zip(&parts.splitting).map(|(a, b)| a + b).collect();
    DensityFn::new(h.lattice.clone(), v)
}

/// Lₙ(h)(x) = 2∫ₓ^∞ hφₙ, with the lattice trapezoid.
pub fn l_n(h: &DensityFn, n: u32) -> Result<DensityFn> {
    check(h, n)?;
    let lat = &*h.lattice;
    let p = lat.weighted(&h.masses());
    let mut v = vec![0.0; lat.len()];
    let mut suffix = 0.0;
    for k in (0..lat.len()).rev() {
        let lin = if k == 0 { lat.delta() * suffix } else { 2.0 * lat.delta() * suffix + lat.delta() * p[k] };
        v[k] = lin / lat.omega(k);
        if k >= 1 {
            suffix += p[k];
        }
    }
    DensityFn::new(h.lattice.clone(), v)
}

/// Aₙ(h)(x) = φₙ(x)(x + 4∫₀ˣ hφₙ).
pub fn a_n(h: &DensityFn, n: u32) -> Result<DensityFn> {
    check(h, n)?;
    let lat = &*h.lattice;
    let p = lat.weighted(&h.masses());
    DensityFn::new(h.lattice.clone(), loss_coefficients(lat, &p))
}

/// J₃,ₙ(h) = Kₙ + Lₙ - h·Aₙ.
pub fn j3n(h: &DensityFn, n: u32) -> Result<SignedFn> {
    check(h, n)?;
    let lat = &*h.lattice;
    let m = h.masses();
    let r = rates(lat, &m);
    let values = (0..lat.len()).map(|k| (r.gain[k] - r.consumption[k]) / lat.omega(k)).collect();
    Ok(SignedFn { lattice: h.lattice.clone(), values })
}

/// ∫ φ·J₃,ₙ(h) on the lattice, i.e. Σ φ(x_k)·dm_k/dτ.
pub fn pair_with_strong(phi: &TestFunction, j: &SignedFn) -> f64 {
    let lat = &*j.lattice;
    let terms: Vec<f64> = (0..lat.len()).map(|k| phi.eval(lat.x(k)) * j.values[k] * lat.omega(k)).collect();
    pairwise_sum(&terms)
}

/// The lattice weak form Σ Λ(φ) p p - Σ 𝓛_Δ(φ) p, evaluated directly from its definition.
pub fn q3n_lattice(phi: &TestFunction, h: &DensityFn, n: u32) -> Result<f64> {
    check(h, n)?;
    let lat = &*h.lattice;
    let p = lat.weighted(&h.masses());
    let a = lat.last_active();
    let rows: Vec<f64> = (1..=a)
        .into_par_iter()
        .map(|i| {
            let xi = lat.x(i);
            let terms: Vec<f64> = (1..=a).map(|j| lambda_kernel(phi, xi, lat.x(j)) * p[i] * p[j]).collect();
            pairwise_sum(&terms)
        })
        .collect();
    let quadratic = pairwise_sum(&rows);
    // Lattice trapezoid T_i = Δ(½φ₀ + φ₁ + … + φ_{i-1} + ½φ_i).
    let mut lin = Vec::with_capacity(a);
    let mut acc = 0.0;
    let mut prev = phi.eval(0.0);
    for (i, &pi) in p.iter().enumerate().take(a + 1).skip(1) {
        let cur = phi.eval(lat.x(i));
        acc += 0.5 * lat.delta() * (prev + cur);
        prev = cur;
        let ell = lat.x(i) * cur - 2.0 * acc;
        lin.push(ell * pi);
    }
    Ok(quadratic - pairwise_sum(&lin))
}

/// Continuum 𝒬̃₃,ₙ(φ,h) for an analytic h, by quadrature: the weak-form
/// functional applied to √x·φₙ·h.
pub fn q3n_tilde(phi: &TestFunction, h: &dyn Density, n: u32, opts: WeakOptions) -> Result<f64> {
    let c = Cutoff::new(n)?;
    let (lo, hi) = h.support();
    let hi = hi.min(c.support_end());
    let nn = n as f64;
    let mut breaks = h.breakpoints();
    breaks.extend([1.0 / nn, nn, nn + 1.0]);
    let g = FnDensity { f: |x: f64| x.sqrt() * c.eval(x) * h.value(x), lo, hi, breaks };
    Ok(q3_view(phi, MeasureView::density(&g), opts)?.q3_tilde)
}
