//! Test functions and the three-wave collision kernels.
//!
//! Every test function carries an exact antiderivative, so the linear kernels
//! `𝓛(φ)(x) = xφ(x) - 2∫₀ˣφ` and `𝓛₀(φ)(x) = x(φ(0)+φ(x)) - 2∫₀ˣφ` are closed forms.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{NckError, Result};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Caller-asserted shape properties. They are audited on random points, not proven.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Flags {
    pub bounded: bool,
    pub convex: bool,
    pub concave: bool,
    pub nonincreasing: bool,
    pub nonnegative: bool,
    pub lipschitz_constant: Option<f64>,
}

#[derive(Clone)]
enum Kind {
    One,
    X,
    Pow(f64),
    PhiEps(f64),
    Cap(f64),
    Custom { f: ScalarFn, anti: ScalarFn, d1: Option<ScalarFn>, d2: Option<ScalarFn> },
}

#[derive(Clone)]
pub struct TestFunction {
    name: String,
    kind: Kind,
    flags: Flags,
    sup_norm: Option<f64>,
    d2_sup: Option<f64>,
    kinks: Vec<f64>,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction").field("name", &self.name).field("flags", &self.flags).finish()
    }
}

impl TestFunction {
    /// φ ≡ 1.
    pub fn one() -> Self {
        TestFunction {
            name: "one".into(),
            kind: Kind::One,
            flags: Flags {
                bounded: true,
                convex: true,
                concave: true,
                nonincreasing: true,
                nonnegative: true,
                lipschitz_constant: Some(0.0),
            },
            sup_norm: Some(1.0),
            d2_sup: Some(0.0),
            kinks: vec![],
        }
    }

    /// φ(x) = x.
    pub fn x() -> Self {
        TestFunction {
            name: "x".into(),
            kind: Kind::X,
            flags: Flags {
                convex: true,
                concave: true,
                nonnegative: true,
                lipschitz_constant: Some(1.0),
                ..Flags::default()
            },
            sup_norm: None,
            d2_sup: Some(0.0),
            kinks: vec![],
        }
    }

    /// φ(x) = x^α with α > 0.
    pub fn pow(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(NckError::Domain(format!("pow exponent must be positive, got {alpha}")));
        }
        if alpha == 1.0 {
            return Ok(Self::x());
        }
        let d2_sup = if alpha == 2.0 { Some(2.0) } else { None };
        Ok(TestFunction {
            name: format!("pow:{alpha}"),
            kind: Kind::Pow(alpha),
            flags: Flags { convex: alpha >= 1.0, concave: alpha <= 1.0, nonnegative: true, ..Flags::default() },
            sup_norm: None,
            d2_sup,
            kinks: vec![],
        })
    }

    /// φ_ε(x) = (1 - x/ε)²₊.
    pub fn phi_eps(eps: f64) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(NckError::Domain(format!("phi_eps needs eps > 0, got {eps}")));
        }
        Ok(TestFunction {
            name: format!("phi_eps:{eps}"),
            kind: Kind::PhiEps(eps),
            flags: Flags {
                bounded: true,
                convex: true,
                nonincreasing: true,
                nonnegative: true,
                lipschitz_constant: Some(2.0 / eps),
                ..Flags::default()
            },
            sup_norm: Some(1.0),
            d2_sup: Some(2.0 / (eps * eps)),
            kinks: vec![eps],
        })
    }

    /// Concave cap: x on [0,k), x - (x-k)²/4 on [k,k+2), k+1 afterwards.
    pub fn cap(k: f64) -> Result<Self> {
        if !(k > 0.0) || !k.is_finite() {
            return Err(NckError::Domain(format!("cap needs k > 0, got {k}")));
        }
        Ok(TestFunction {
            name: format!("cap:{k}"),
            kind: Kind::Cap(k),
            flags: Flags {
                bounded: true,
                concave: true,
                nonnegative: true,
                lipschitz_constant: Some(1.0),
                ..Flags::default()
            },
            sup_norm: Some(k + 1.0),
            d2_sup: Some(0.5),
            kinks: vec![k, k + 2.0],
        })
    }

    /// A user function with its exact antiderivative. Flags default to none.
    pub fn custom(name: impl Into<String>, f: ScalarFn, anti: ScalarFn) -> Self {
        TestFunction {
            name: name.into(),
            kind: Kind::Custom { f, anti, d1: None, d2: None },
            flags: Flags::default(),
            sup_norm: None,
            d2_sup: None,
            kinks: vec![],
        }
    }

    pub fn with_derivatives(mut self, d1: Option<ScalarFn>, d2: Option<ScalarFn>) -> Self {
        if let Kind::Custom { d1: a, d2: b, .. } = &mut self.kind {
            *a = d1;
            *b = d2;
        }
        self
    }

    pub fn with_flags(mut self, flags: Flags) -> Self {
        self.flags = flags;
        self
    }

    pub fn with_norms(mut self, sup_norm: Option<f64>, d2_sup: Option<f64>) -> Self {
        self.sup_norm = sup_norm;
        self.d2_sup = d2_sup;
        self
    }

    pub fn with_kinks(mut self, kinks: Vec<f64>) -> Self {
        self.kinks = kinks;
        self
    }

    /// Parse a built-in family: `one`, `x`, `pow:α`, `phi_eps:ε`, `cap:k`.
    pub fn from_name(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        let (head, arg) = match spec.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (spec, None),
        };
        let num = |a: Option<&str>| -> Result<f64> {
            let a = a.ok_or_else(|| NckError::Domain(format!("test function `{spec}` needs a parameter")))?;
            a.trim().parse::<f64>().map_err(|_| NckError::Domain(format!("bad parameter in test function `{spec}`")))
        };
        match head {
            "one" => Ok(Self::one()),
            "x" => Ok(Self::x()),
            "pow" => Self::pow(num(arg)?),
            "phi_eps" => Self::phi_eps(num(arg)?),
            "cap" => Self::cap(num(arg)?),
            _ => Err(NckError::Domain(format!("unknown test function `{spec}`"))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn flags(&self) -> Flags {
        self.flags
    }
    /// ‖φ‖_∞ when bounded.
    pub fn sup_norm(&self) -> Option<f64> {
        self.sup_norm
    }
    pub fn lipschitz(&self) -> Option<f64> {
        self.flags.lipschitz_constant
    }
    /// ‖φ''‖_∞ when known.
    pub fn d2_sup(&self) -> Option<f64> {
        self.d2_sup
    }
    /// Points where φ'' may jump. Quadrature callers split there.
    pub fn kinks(&self) -> &[f64] {
        &self.kinks
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match &self.kind {
            Kind::One => 1.0,
            Kind::X => x,
            Kind::Pow(a) => x.powf(*a),
            Kind::PhiEps(e) => {
                let t = 1.0 - x / e;
                if t > 0.0 {
                    t * t
                } else {
                    0.0
                }
            }
            Kind::Cap(k) => {
                if x < *k {
                    x
                } else if x < k + 2.0 {
                    let d = x - k;
                    x - 0.25 * d * d
                } else {
                    k + 1.0
                }
            }
            Kind::Custom { f, .. } => f(x),
        }
    }

    /// Exact ∫₀ˣ φ.
    pub fn antiderivative(&self, x: f64) -> f64 {
        match &self.kind {
            Kind::One => x,
            Kind::X => 0.5 * x * x,
            Kind::Pow(a) => x.powf(a + 1.0) / (a + 1.0),
            Kind::PhiEps(e) => {
                if x < *e {
                    let t = 1.0 - x / e;
                    e / 3.0 * (1.0 - t * t * t)
                } else {
                    e / 3.0
                }
            }
            Kind::Cap(k) => {
                if x < *k {
                    0.5 * x * x
                } else if x < k + 2.0 {
                    let d = x - k;
                    0.5 * x * x - d * d * d / 12.0
                } else {
                    let top = k + 2.0;
                    0.5 * top * top - 2.0 / 3.0 + (k + 1.0) * (x - top)
                }
            }
            Kind::Custom { anti, .. } => anti(x),
        }
    }

    pub fn d1(&self, x: f64) -> Option<f64> {
        Some(match &self.kind {
            Kind::One => 0.0,
            Kind::X => 1.0,
            Kind::Pow(a) => a * x.powf(a - 1.0),
            Kind::PhiEps(e) => {
                let t = 1.0 - x / e;
                if t > 0.0 {
                    -2.0 * t / e
                } else {
                    0.0
                }
            }
            Kind::Cap(k) => {
                if x < *k {
                    1.0
                } else if x < k + 2.0 {
                    1.0 - 0.5 * (x - k)
                } else {
                    0.0
                }
            }
            Kind::Custom { d1, .. } => return d1.as_ref().map(|g| g(x)),
        })
    }

    pub fn d2(&self, x: f64) -> Option<f64> {
        Some(match &self.kind {
            Kind::One | Kind::X => 0.0,
            Kind::Pow(a) => a * (a - 1.0) * x.powf(a - 2.0),
            Kind::PhiEps(e) => {
                if x < *e {
                    2.0 / (e * e)
                } else {
                    0.0
                }
            }
            Kind::Cap(k) => {
                if x >= *k && x < k + 2.0 {
                    -0.5
                } else {
                    0.0
                }
            }
            Kind::Custom { d2, .. } => return d2.as_ref().map(|g| g(x)),
        })
    }

    /// Spot-check the antiderivative and every asserted flag on random points.
    /// Any violation is an error.
    pub fn audit(&self, seed: u64, samples: usize, x_max: f64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fail = |msg: String| Err(NckError::Audit { name: self.name.clone(), msg });
        if self.antiderivative(0.0).abs() > 1e-14 {
            return fail("antiderivative(0) != 0".into());
        }
        for _ in 0..samples {
            let x = rng.gen_range(1e-3..x_max);
            let h = 1e-5 * x.max(1e-2);
            let fd = (self.antiderivative(x + h) - self.antiderivative(x - h)) / (2.0 * h);
            let v = self.eval(x);
            if (fd - v).abs() > 1e-6 * v.abs().max(1.0) {
                return fail(format!("antiderivative inconsistent at x={x}: fd={fd}, phi={v}"));
            }
            let y = rng.gen_range(0.0..x_max);
            let (lo, hi) = if x < y { (x, y) } else { (y, x) };
            let mid = 0.5 * (lo + hi);
            let (flo, fhi, fmid) = (self.eval(lo), self.eval(hi), self.eval(mid));
            let tol = 1e-12 * (flo.abs() + fhi.abs() + 1.0);
            if self.flags.convex && fmid > 0.5 * (flo + fhi) + tol {
                return fail(format!("convexity fails on [{lo}, {hi}]"));
            }
            if self.flags.concave && fmid < 0.5 * (flo + fhi) - tol {
                return fail(format!("concavity fails on [{lo}, {hi}]"));
            }
            if self.flags.nonincreasing && fhi > flo + tol {
                return fail(format!("not nonincreasing on [{lo}, {hi}]"));
            }
            if self.flags.nonnegative && flo < -tol {
                return fail(format!("negative value at {lo}"));
            }
            if let Some(s) = self.sup_norm {
                if flo.abs() > s * (1.0 + 1e-12) {
                    return fail(format!("|phi({lo})| exceeds sup norm {s}"));
                }
            }
            if let Some(l) = self.flags.lipschitz_constant {
                if hi > lo && (fhi - flo).abs() > l * (hi - lo) * (1.0 + 1e-9) + tol {
                    return fail(format!("Lipschitz constant {l} exceeded on [{lo}, {hi}]"));
                }
            }
        }
        Ok(())
    }
}

/// Λ(φ)(x,y) = φ(x+y) + φ(|x-y|) - 2φ(max{x,y}).
#[inline]
pub fn lambda_kernel(phi: &TestFunction, x: f64, y: f64) -> f64 {
    phi.eval(x + y) + phi.eval((x - y).abs()) - 2.0 * phi.eval(x.max(y))
}

/// 𝓛(φ)(x) = xφ(x) - 2∫₀ˣφ.
#[inline]
pub fn ell_kernel(phi: &TestFunction, x: f64) -> f64 {
    x * phi.eval(x) - 2.0 * phi.antiderivative(x)
}

/// 𝓛₀(φ)(x) = x(φ(0) + φ(x)) - 2∫₀ˣφ.
#[inline]
pub fn ell0_kernel(phi: &TestFunction, x: f64) -> f64 {
    x * (phi.eval(0.0) + phi.eval(x)) - 2.0 * phi.antiderivative(x)
}

/// x₄ = (x₁ + x₂ - x₃)₊.
#[inline]
pub fn x4(x1: f64, x2: f64, x3: f64) -> f64 {
    (x1 + x2 - x3).max(0.0)
}

/// Δφ = φ(x₄) + φ(x₃) - φ(x₂) - φ(x₁).
#[inline]
pub fn delta_phi(phi: &TestFunction, x1: f64, x2: f64, x3: f64) -> f64 {
    phi.eval(x4(x1, x2, x3)) + phi.eval(x3) - phi.eval(x2) - phi.eval(x1)
}

/// The four-term bound min{4‖φ‖, 2‖φ'‖|x₁-x₃|, 2‖φ'‖|x₂-x₃|, ‖φ''‖|x₁-x₃||x₂-x₃|},
/// using whichever norms are known. `None` when no norm is known.
pub fn delta_phi_bound(phi: &TestFunction, x1: f64, x2: f64, x3: f64) -> Option<f64> {
    let mut best: Option<f64> = None;
    let mut take = |v: f64| best = Some(best.map_or(v, |b: f64| b.min(v)));
    if let Some(s) = phi.sup_norm() {
        take(4.0 * s);
    }
    if let Some(l) = phi.lipschitz() {
        take(2.0 * l * (x1 - x3).abs());
        take(2.0 * l * (x2 - x3).abs());
    }
    if let Some(d2) = phi.d2_sup() {
        take(d2 * (x1 - x3).abs() * (x2 - x3).abs());
    }
    best
}
