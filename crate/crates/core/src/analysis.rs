//! Closed-form constants and inequality evaluators, plus the checks that compare
//! them with a persisted trajectory table.

use serde::{Deserialize, Serialize};

use crate::error::{domain, NckError, Result};
use crate::trajectory::{cumulative_trapezoid, Trajectory};

// Riemann zeta values to 12 decimals, from the standard tables
// (DLMF 25.6 / OEIS A078434 and A084404).
pub const ZETA_3_2: f64 = 2.612375348685;
pub const ZETA_5_2: f64 = 1.341487257250;

/// A-priori growth envelope for `M_α(h(τ))`, `α ≥ 3`.
pub fn moment_bound_apriori(m_alpha0: f64, e: f64, alpha: f64, tau: f64) -> Result<f64> {
    if !(alpha >= 3.0) {
        return domain(format!("moment_bound_apriori needs alpha >= 3, got {alpha}"));
    }
    if m_alpha0 < 0.0 || e < 0.0 || tau < 0.0 {
        return domain("moment_bound_apriori needs nonnegative M_alpha0, E, tau");
    }
    let p = 2.0 / (alpha - 1.0);
    let base = m_alpha0.powf(p) + alpha * 2f64.powf(alpha - 1.0) * e.powf((alpha + 1.0) / (alpha - 1.0)) * tau;
    Ok(base.powf((alpha - 1.0) / 2.0))
}

/// Residual of the defining equation for the uniform-in-time constant, and its scale.
pub fn uniform_constant_residual(alpha: f64, e: f64, c: f64) -> (f64, f64) {
    let k = 2f64.powf(alpha - 2.0) * (alpha + 1.0) * e.powf((2.0 * alpha + 3.0) / (2.0 * (alpha - 1.0)));
    let p = (2.0 * alpha - 1.0) / (2.0 * (alpha - 1.0));
    let lhs = k * (1.0 + c);
    let rhs = c.powf(p);
    (lhs - rhs, lhs.abs().max(rhs.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UniformConstants {
    pub c: f64,
    pub gamma: f64,
    pub residual: f64,
}

/// `(C, γ)` of the uniform moment bound. The residual `k(1+C) − C^p` is positive at 0,
/// concave-down past its maximum and tends to −∞, so the positive root is unique.
pub fn uniform_moment_constants(alpha: f64, e: f64) -> Result<UniformConstants> {
    if !(alpha >= 3.0) || !(e > 0.0) || !e.is_finite() {
        return domain(format!("uniform_moment_constants needs alpha >= 3 and E > 0, got ({alpha}, {e})"));
    }
    let f = |c: f64| uniform_constant_residual(alpha, e, c).0;
    let mut hi = 1.0;
    let mut widen = 0;
    while f(hi) > 0.0 {
        hi *= 2.0;
        widen += 1;
        if widen > 2000 || !hi.is_finite() {
            return Err(NckError::Root(format!("no sign change for alpha={alpha}, E={e}")));
        }
    }
    let mut lo = if widen == 0 { 0.0 } else { hi / 2.0 };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Newton polish, kept inside the bracket.
    let k = 2f64.powf(alpha - 2.0) * (alpha + 1.0) * e.powf((2.0 * alpha + 3.0) / (2.0 * (alpha - 1.0)));
    let p = (2.0 * alpha - 1.0) / (2.0 * (alpha - 1.0));
    let mut c = 0.5 * (lo + hi);
    for _ in 0..3 {
        let d = k - p * c.powf(p - 1.0);
        if d == 0.0 {
            break;
        }
        let next = c - f(c) / d;
        if next >= lo && next <= hi {
            c = next;
        }
    }
    let (res, scale) = uniform_constant_residual(alpha, e, c);
    if res.abs() > 1e-10 * scale {
        return Err(NckError::Root(format!("residual {res:e} too large at C={c}")));
    }
    let gamma = (c / e).powf(1.0 / (2.0 * (alpha - 1.0))) / (2.0 * (alpha + 1.0));
    Ok(UniformConstants { c, gamma, residual: res })
}

/// Uniform-in-time envelope `C (1 − e^{−γτ})^{−2(α−1)}`.
pub fn uniform_moment_bound(alpha: f64, e: f64, tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return domain(format!("uniform_moment_bound needs tau > 0, got {tau}"));
    }
    let k = uniform_moment_constants(alpha, e)?;
    Ok(k.c * (-(-k.gamma * tau).exp_m1()).powf(-2.0 * (alpha - 1.0)))
}

/// Threshold `C(α)`: moments decay once `E > C(α) N^{5/3}`.
pub fn decay_threshold(alpha: f64) -> Result<f64> {
    if !(alpha > 1.0 && alpha <= 3.0) {
        return domain(format!("decay_threshold needs alpha in (1,3], got {alpha}"));
    }
    if alpha <= 2.0 {
        Ok(((2f64.powf(alpha) - 2.0) * (alpha + 1.0) / (alpha - 1.0)).powf(2.0 / 3.0))
    } else {
        Ok((alpha * (alpha + 1.0)).powf(2.0 / 3.0))
    }
}

/// `b` in `E/N^{5/3} = b T/T_c`.
pub fn critical_constant_b() -> f64 {
    3.0 * (2.0 * std::f64::consts::PI).powf(-1.0 / 3.0) * ZETA_5_2 / ZETA_3_2.powf(5.0 / 3.0)
}

pub fn temperature_ratio(n: f64, e: f64) -> Result<f64> {
    if !(n > 0.0) {
        return domain("temperature_ratio needs N > 0");
    }
    Ok(e / (critical_constant_b() * n.powf(5.0 / 3.0)))
}

/// Whether `E > C(α) N^{5/3}`.
pub fn decay_condition(n: f64, e: f64, alpha: f64) -> Result<bool> {
    Ok(e > decay_threshold(alpha)? * n.powf(5.0 / 3.0))
}

/// Denominator of the decay constant; positive exactly when [`decay_condition`] holds.
pub fn decay_denominator(n: f64, e: f64, alpha: f64) -> Result<f64> {
    decay_threshold(alpha)?;
    let c1 = if alpha <= 2.0 { 2f64.powf(alpha) - 2.0 } else { alpha * (alpha - 1.0) };
    Ok((alpha - 1.0) / (alpha + 1.0) * e.powf((2.0 * alpha + 1.0) / 2.0) * n.powf((1.0 - 2.0 * alpha) / 2.0)
        - c1 * n.powf(3.0 - alpha) * e.powf(alpha - 1.0))
}

/// Bound on `∫_{t0}^∞ n dt` given `M_α(G(t0))`. `None` when the decay condition fails.
pub fn decay_integral_bound(n: f64, e: f64, alpha: f64, m_alpha_t0: f64) -> Result<Option<f64>> {
    if !(n > 0.0 && e > 0.0) {
        return domain("decay_integral_bound needs N, E > 0");
    }
    if !decay_condition(n, e, alpha)? {
        return Ok(None);
    }
    let d = decay_denominator(n, e, alpha)?;
    if !(d > 0.0) {
        // Only reachable at the threshold itself, where rounding decides.
        return Ok(None);
    }
    Ok(Some(m_alpha_t0 / d))
}

/// Bound on `∫ n(t) ∫_{(0,R]} x^α G dx dt` given `∫ n dt` over the same window.
pub fn origin_flux_bound(n: f64, e: f64, r: f64, alpha: f64, int_n_dt: f64) -> Result<f64> {
    if !(alpha > -0.5) {
        return domain(format!("origin_flux_bound needs alpha > -1/2, got {alpha}"));
    }
    if !(r > 0.0) || n < 0.0 || e < 0.0 || int_n_dt < 0.0 {
        return domain("origin_flux_bound needs R > 0 and nonnegative N, E, integral");
    }
    let s = 0.5 + alpha;
    let pre = 2.0 * r.powf(s) / (1.0 - (2.0f64 / 3.0).powf(s));
    Ok(pre * int_n_dt.sqrt() * (0.5 * e.sqrt() * int_n_dt + n.sqrt()))
}

/// `T0(δ) = 64/δ³ (1 − δ/2)`.
pub fn concentration_time(delta: f64) -> Result<f64> {
    // δ = 1 is where the closed form is quoted, so the interval is taken closed on the right.
    if !(delta > 0.0 && delta <= 1.0) {
        return domain(format!("concentration_time needs delta in (0,1], got {delta}"));
    }
    Ok(64.0 / delta.powi(3) * (1.0 - delta / 2.0))
}

/// `T★(α) = T0(1 − 2^{−α}) / (1 − 2^{−(1−α)})`.
pub fn t_star(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return domain(format!("t_star needs alpha in (0,1), got {alpha}"));
    }
    let delta = 1.0 - 2f64.powf(-alpha);
    Ok(concentration_time(delta)? / (1.0 - 2f64.powf(-(1.0 - alpha))))
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Pass,
    Fail,
    NotApplicable,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::NotApplicable => "NOT_APPLICABLE",
        })
    }
}

/// `lhs ≤ slack·rhs + abs_tol` (or `<` when `strict`) at the worst sampled point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub name: String,
    pub reference: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub abs_tol: f64,
    pub strict: bool,
    pub verdict: Verdict,
    /// `"tau"` or `"t"`.
    pub axis: String,
    pub location: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

impl BoundReport {
    pub fn holds(&self) -> bool {
        if self.strict {
            self.lhs < self.slack * self.rhs + self.abs_tol
        } else {
            self.lhs <= self.slack * self.rhs + self.abs_tol
        }
    }

    fn not_applicable(name: &str, reference: &str, slack: f64, note: String) -> Self {
        BoundReport {
            name: name.into(),
            reference: reference.into(),
            lhs: f64::NAN,
            rhs: f64::NAN,
            slack,
            abs_tol: 0.0,
            strict: false,
            verdict: Verdict::NotApplicable,
            axis: "tau".into(),
            location: f64::NAN,
            note: Some(note),
        }
    }
}

struct Pointwise<'a> {
    name: &'a str,
    reference: &'a str,
    slack: f64,
    abs_tol: f64,
    axis: &'a str,
}

impl Pointwise<'_> {
    /// Worst point by normalized margin; empty input is not applicable.
    fn eval(&self, loc: &[f64], lhs: &[f64], rhs: &[f64]) -> BoundReport {
        let mut worst: Option<(usize, f64)> = None;
        for i in 0..loc.len() {
            let m = if lhs[i].is_nan() || rhs[i].is_nan() {
                f64::INFINITY
            } else {
                (lhs[i] - self.slack * rhs[i] - self.abs_tol) / rhs[i].abs().max(1e-300)
            };
            if worst.is_none_or(|(_, w)| m > w) {
                worst = Some((i, m));
            }
        }
        let Some((i, _)) = worst else {
            return BoundReport::not_applicable(self.name, self.reference, self.slack, "no sampled points".into());
        };
        let mut r = BoundReport {
            name: self.name.into(),
            reference: self.reference.into(),
            lhs: lhs[i],
            rhs: rhs[i],
            slack: self.slack,
            abs_tol: self.abs_tol,
            strict: false,
            verdict: Verdict::Fail,
            axis: self.axis.into(),
            location: loc[i],
            note: None,
        };
        if r.holds() {
            r.verdict = Verdict::Pass;
        }
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckConfig {
    pub slack: f64,
    pub conservation_tol: f64,
    pub abs_tol: f64,
    /// Moment order for the growth and uniform bounds (needs a matching column).
    pub moment_alpha: f64,
    pub tau_floor: f64,
    pub decay_alpha: f64,
    /// Start of the decay window in `t`; default is the time `n` peaks.
    pub decay_t0: Option<f64>,
    pub envelope_alpha: f64,
    pub envelope_tau0: Option<f64>,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            slack: 1.01,
            conservation_tol: 1e-3,
            abs_tol: 1e-9,
            moment_alpha: 3.0,
            tau_floor: 0.1,
            decay_alpha: 2.0,
            decay_t0: None,
            envelope_alpha: 0.4,
            envelope_tau0: None,
        }
    }
}

/// Column names shared with the writer in `evolution`.
pub fn moment_column(alpha: f64, of: &str) -> String {
    format!("M{alpha}_{of}")
}

pub fn origin_column(r: f64, alpha: f64) -> String {
    format!("origin:{r}:{alpha}")
}

pub fn envelope_column(r: f64) -> String {
    format!("env:{r}")
}

fn parse_origin(name: &str) -> Option<(f64, f64)> {
    let mut it = name.strip_prefix("origin:")?.split(':');
    let r = it.next()?.parse().ok()?;
    let a = it.next()?.parse().ok()?;
    Some((r, a))
}

struct Rows {
    tau: Vec<f64>,
    t: Vec<f64>,
    n: Vec<f64>,
    r: Vec<f64>,
}

fn finite_t(rows: &Rows) -> Vec<usize> {
    (0..rows.t.len()).filter(|&i| rows.t[i].is_finite() && rows.n[i] > 0.0).collect()
}

fn pick(v: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| v[i]).collect()
}

/// Every check the table supports. Pure function of the table and `cfg`.
pub fn check_trajectory(tr: &Trajectory, cfg: &CheckConfig) -> Result<Vec<BoundReport>> {
    if tr.is_empty() {
        return Err(NckError::Precondition("empty trajectory".into()));
    }
    let rows = Rows { tau: tr.col("tau")?, t: tr.col("t")?, n: tr.col("n")?, r: tr.col("R")? };
    let m0h = tr.col(&moment_column(0.0, "h"))?;
    let m1h = tr.col(&moment_column(1.0, "h"))?;
    let big_n = m0h[0];
    let big_e = m1h[0];
    let s = cfg.slack;
    let tol = cfg.abs_tol;
    let mut out = Vec::new();

    // Conservation: relative drift against a fixed tolerance.
    let drift = |v: &[f64], base: f64| v.iter().map(|x| (x - base).abs() / base.abs()).collect::<Vec<_>>();
    let ctol = vec![cfg.conservation_tol; tr.len()];
    out.push(
        Pointwise {
            name: "energy_conservation",
            reference: "energy of h is conserved",
            slack: 1.0,
            abs_tol: 0.0,
            axis: "tau",
        }
        .eval(&rows.tau, &drift(&m1h, big_e), &ctol),
    );
    let m0g = tr.col(&moment_column(0.0, "G"))?;
    let m1g = tr.col(&moment_column(1.0, "G"))?;
    out.push(
        Pointwise {
            name: "mass_of_H",
            reference: "total mass of H is conserved",
            slack: 1.0,
            abs_tol: 0.0,
            axis: "tau",
        }
        .eval(&rows.tau, &drift(&m0g, big_n), &ctol),
    );
    out.push(
        Pointwise { name: "energy_of_H", reference: "energy of H is conserved", slack: 1.0, abs_tol: 0.0, axis: "tau" }
            .eval(&rows.tau, &drift(&m1g, big_e), &ctol),
    );

    // Quadratic mass envelope.
    let env: Vec<f64> = rows.tau.iter().map(|&tau| (0.5 * big_e.sqrt() * tau + big_n.sqrt()).powi(2)).collect();
    out.push(
        Pointwise {
            name: "mass_envelope",
            reference: "M0(h) <= (sqrt(E)/2 tau + sqrt(N))^2",
            slack: s,
            abs_tol: tol,
            axis: "tau",
        }
        .eval(&rows.tau, &m0h, &env),
    );

    // Moment growth and uniform bounds.
    let a = cfg.moment_alpha;
    if let Ok(ma) = tr.col(&moment_column(a, "h")) {
        let growth =
            rows.tau.iter().map(|&tau| moment_bound_apriori(ma[0], big_e, a, tau)).collect::<Result<Vec<_>>>()?;
        out.push(
            Pointwise {
                name: "moment_growth",
                reference: "a-priori growth of M_alpha(h)",
                slack: s,
                abs_tol: tol,
                axis: "tau",
            }
            .eval(&rows.tau, &ma, &growth),
        );
        let idx: Vec<usize> = (0..tr.len()).filter(|&i| rows.tau[i] >= cfg.tau_floor).collect();
        let uni = idx.iter().map(|&i| uniform_moment_bound(a, big_e, rows.tau[i])).collect::<Result<Vec<_>>>()?;
        out.push(
            Pointwise {
                name: "moment_uniform",
                reference: "uniform-in-time bound on M_alpha(h)",
                slack: s,
                abs_tol: tol,
                axis: "tau",
            }
            .eval(&pick(&rows.tau, &idx), &pick(&ma, &idx), &uni),
        );
    }

    let reach = finite_t(&rows);

    // t strictly increasing where defined.
    {
        let mut lhs = Vec::new();
        let mut rhs = Vec::new();
        let mut loc = Vec::new();
        for w in reach.windows(2) {
            lhs.push(rows.t[w[0]]);
            rhs.push(rows.t[w[1]]);
            loc.push(rows.tau[w[1]]);
        }
        let mut r = Pointwise {
            name: "time_change_monotone",
            reference: "t(tau) strictly increasing",
            slack: 1.0,
            abs_tol: 0.0,
            axis: "tau",
        }
        .eval(&loc, &lhs, &rhs);
        r.strict = true;
        if r.verdict != Verdict::NotApplicable {
            r.verdict = if lhs.iter().zip(&rhs).all(|(a, b)| a < b) { Verdict::Pass } else { Verdict::Fail };
        }
        out.push(r);
    }

    // n(t) > 0 on every reachable row.
    {
        let defined: Vec<usize> = (0..tr.len()).filter(|&i| rows.t[i].is_finite()).collect();
        let lhs = vec![0.0; defined.len()];
        let rhs = pick(&rows.n, &defined);
        let mut r = Pointwise {
            name: "condensate_positive",
            reference: "n(t) > 0 when n(0) > 0",
            slack: 1.0,
            abs_tol: 0.0,
            axis: "t",
        }
        .eval(&pick(&rows.t, &defined), &lhs, &rhs);
        r.strict = true;
        if r.verdict != Verdict::NotApplicable {
            r.verdict = if rhs.iter().all(|&v| v > 0.0) { Verdict::Pass } else { Verdict::Fail };
        }
        out.push(r);
    }

    // Condensate lower bound: ln n + ∫ R/H dτ nondecreasing.
    {
        let tau = pick(&rows.tau, &reach);
        let rate: Vec<f64> = reach.iter().map(|&i| rows.r[i] / rows.n[i]).collect();
        let integ = cumulative_trapezoid(&tau, &rate);
        let mut best = f64::NEG_INFINITY;
        let mut best_i = 0;
        let mut lhs = Vec::new();
        let mut rhs = Vec::new();
        let mut loc = Vec::new();
        for (j, &i) in reach.iter().enumerate() {
            let phi = rows.n[i].ln() + integ[j];
            if j > 0 {
                // n(t0) e^{-∫_{t0}^{t} M_1/2} with the best earlier t0.
                lhs.push(rows.n[reach[best_i]] * (integ[best_i] - integ[j]).exp());
                rhs.push(rows.n[i]);
                loc.push(rows.t[i]);
            }
            if phi > best {
                best = phi;
                best_i = j;
            }
        }
        out.push(
            Pointwise {
                name: "condensate_lower_bound",
                reference: "n(t) >= n(t0) exp(-int M_1/2(g))",
                slack: s,
                abs_tol: tol,
                axis: "t",
            }
            .eval(&loc, &lhs, &rhs),
        );
    }

    // Balance measure: nondecreasing and positive for t > 0.
    {
        let mu = condensate_balance_from(&rows.tau, &rows.n, &rows.r);
        let mut lhs = Vec::new();
        let mut rhs = Vec::new();
        let mut loc = Vec::new();
        let mut run_max = f64::NEG_INFINITY;
        for &i in &reach {
            if run_max.is_finite() {
                lhs.push(run_max);
                rhs.push(mu[i]);
                loc.push(rows.t[i]);
            }
            run_max = run_max.max(mu[i]);
        }
        // Absolute tolerance: μ starts at 0, so a relative slack means nothing there.
        out.push(
            Pointwise {
                name: "balance_measure_monotone",
                reference: "mu((0,t]) nondecreasing",
                slack: 1.0,
                abs_tol: tol,
                axis: "t",
            }
            .eval(&loc, &lhs, &rhs),
        );
        let pos: Vec<usize> = reach.iter().copied().filter(|&i| rows.t[i] > 0.0).collect();
        let rhs = pick(&mu, &pos);
        let mut r = Pointwise {
            name: "balance_measure_positive",
            reference: "mu((0,t]) > 0 for t > 0",
            slack: 1.0,
            abs_tol: 0.0,
            axis: "t",
        }
        .eval(&pick(&rows.t, &pos), &vec![0.0; pos.len()], &rhs);
        r.strict = true;
        if r.verdict != Verdict::NotApplicable {
            r.verdict = if rhs.iter().all(|&v| v > 0.0) { Verdict::Pass } else { Verdict::Fail };
        }
        out.push(r);
    }

    out.extend(decay_checks(tr, &rows, &reach, big_n, big_e, cfg)?);

    // Origin flux, τ-form: ∫ n dt over [0, t] is τ.
    for name in tr.columns_with_prefix("origin:") {
        let Some((r, alpha)) = parse_origin(&name) else { continue };
        let col = tr.col(&name)?;
        let lhs = cumulative_trapezoid(&rows.tau, &col);
        let rhs =
            rows.tau.iter().map(|&tau| origin_flux_bound(big_n, big_e, r, alpha, tau)).collect::<Result<Vec<_>>>()?;
        let label = format!("origin_flux[R={r},alpha={alpha}]");
        out.push(
            Pointwise {
                name: &label,
                reference: "time-integrated mass near the origin",
                slack: s,
                abs_tol: tol,
                axis: "tau",
            }
            .eval(&rows.tau, &lhs, &rhs),
        );
    }

    out.extend(envelope_propagation(tr, &rows, cfg)?);
    out.push(lower_envelope_check(tr, cfg.envelope_alpha, cfg.envelope_tau0.unwrap_or(0.0))?);
    Ok(out)
}

/// `μ((0,τ]) = n(τ) − n(0) + ∫_0^τ M_{1/2}(g) dσ`, trapezoid in τ (which is `∫ n M_{1/2} dt`).
pub fn condensate_balance_from(tau: &[f64], n: &[f64], r: &[f64]) -> Vec<f64> {
    let integ = cumulative_trapezoid(tau, r);
    (0..tau.len()).map(|i| n[i] - n[0] + integ[i]).collect()
}

fn decay_checks(
    tr: &Trajectory,
    rows: &Rows,
    reach: &[usize],
    big_n: f64,
    big_e: f64,
    cfg: &CheckConfig,
) -> Result<Vec<BoundReport>> {
    let a = cfg.decay_alpha;
    let names = ["moment_decay", "condensate_decay", "decay_integral"];
    let reference = "decay regime above the critical ratio";
    let gate = decay_condition(big_n, big_e, a)?;
    let col = tr.col(&moment_column(a, "G"));
    if !gate || col.is_err() {
        let why = if !gate {
            format!("E = {big_e} <= C({a}) N^(5/3) = {}", decay_threshold(a)? * big_n.powf(5.0 / 3.0))
        } else {
            format!("no column {}", moment_column(a, "G"))
        };
        return Ok(names.iter().map(|n| BoundReport::not_applicable(n, reference, cfg.slack, why.clone())).collect());
    }
    let ma = col?;
    let s = cfg.slack;
    let mut out = Vec::new();
    let t = pick(&rows.t, reach);
    let m = pick(&ma, reach);
    let mut lhs = Vec::new();
    let mut rhs = Vec::new();
    let mut running = f64::INFINITY;
    for &v in &m {
        lhs.push(v);
        rhs.push(running.min(v));
        running = running.min(v);
    }
    out.push(
        Pointwise {
            name: names[0],
            reference: "M_alpha(G(t)) nonincreasing",
            slack: s,
            abs_tol: cfg.abs_tol,
            axis: "t",
        }
        .eval(&t, &lhs, &rhs),
    );

    let nvals = pick(&rows.n, reach);
    let i0 = match cfg.decay_t0 {
        Some(t0) => t.iter().position(|&x| x >= t0).unwrap_or(t.len().saturating_sub(1)),
        None => (0..nvals.len()).fold(0, |b, i| if nvals[i] > nvals[b] { i } else { b }),
    };
    let mut lhs = Vec::new();
    let mut rhs = Vec::new();
    let mut loc = Vec::new();
    let mut running = f64::INFINITY;
    for j in i0..nvals.len() {
        running = running.min(nvals[j]);
        lhs.push(nvals[j]);
        rhs.push(running);
        loc.push(t[j]);
    }
    let mut r = Pointwise {
        name: names[1],
        reference: "n(t) decreasing after the transient",
        slack: s,
        abs_tol: cfg.abs_tol,
        axis: "t",
    }
    .eval(&loc, &lhs, &rhs);
    r.note = Some(format!("window starts at t0 = {}", t.get(i0).copied().unwrap_or(f64::NAN)));
    out.push(r);

    let tau = pick(&rows.tau, reach);
    let last = tau.len() - 1;
    let integral = tau[last] - tau[i0];
    let bound = decay_integral_bound(big_n, big_e, a, m[i0])?.unwrap_or(f64::NAN);
    let mut r = Pointwise {
        name: names[2],
        reference: "int_{t0}^{T} n dt <= C(N,E,alpha) M_alpha(G(t0))",
        slack: s,
        abs_tol: cfg.abs_tol,
        axis: "t",
    }
    .eval(&[t[last]], &[integral], &[bound]);
    r.note = Some(format!("t0 = {}", t[i0]));
    out.push(r);
    Ok(out)
}

fn envelope_radii(tr: &Trajectory) -> Result<Vec<(f64, Vec<f64>)>> {
    let mut v = Vec::new();
    for name in tr.columns_with_prefix("env:") {
        if let Ok(r) = name["env:".len()..].parse::<f64>() {
            v.push((r, tr.col(&name)?));
        }
    }
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(v)
}

/// `∫_{[0,r]} h(τ) ≥ (1−θ) ∫_{[0,θr]} h(τ0)` for every sampled radius pair and τ0 ≤ τ.
fn envelope_propagation(tr: &Trajectory, rows: &Rows, cfg: &CheckConfig) -> Result<Vec<BoundReport>> {
    let radii = envelope_radii(tr)?;
    if radii.len() < 2 {
        return Ok(vec![]);
    }
    let mut lhs = Vec::new();
    let mut rhs = Vec::new();
    let mut loc = Vec::new();
    for (a, (rs, small)) in radii.iter().enumerate() {
        for (rb, big) in &radii[a + 1..] {
            let theta = rs / rb;
            let mut best = f64::NEG_INFINITY;
            for i in 0..tr.len() {
                best = best.max(small[i]);
                lhs.push((1.0 - theta) * best);
                rhs.push(big[i]);
                loc.push(rows.tau[i]);
            }
        }
    }
    Ok(vec![Pointwise {
        name: "mass_near_origin_persists",
        reference: "int_[0,r] h(tau) >= (1-theta) int_[0,theta r] h(tau0)",
        slack: cfg.slack,
        abs_tol: cfg.abs_tol,
        axis: "tau",
    }
    .eval(&loc, &lhs, &rhs)])
}

/// Descriptive power-law floor `∫_{[0,r]} h ≥ C r^α` for `r ≤ R★`, `τ ≥ τ0`. Reports the
/// largest sampled `R★` with a positive floor and the fitted small-`r` exponent at the
/// last row. Never fails: no positive floor is NOT_APPLICABLE.
pub fn lower_envelope_check(tr: &Trajectory, alpha: f64, tau0: f64) -> Result<BoundReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return domain(format!("lower_envelope_check needs alpha in (0,1), got {alpha}"));
    }
    let name = "lower_envelope";
    let reference = "power-law floor near the origin";
    let tau = tr.col("tau")?;
    let radii = envelope_radii(tr)?;
    let rows: Vec<usize> = (0..tau.len()).filter(|&i| tau[i] >= tau0).collect();
    if radii.is_empty() || rows.is_empty() {
        return Ok(BoundReport::not_applicable(name, reference, 1.0, "no envelope columns in window".into()));
    }
    // Largest prefix of radii on which every sampled mass is positive.
    let mut r_star = None;
    let mut c = f64::INFINITY;
    let mut c_loc = f64::NAN;
    for (r, col) in &radii {
        let mut cr = f64::INFINITY;
        let mut at = f64::NAN;
        for &i in &rows {
            let v = col[i] / r.powf(alpha);
            if v < cr {
                cr = v;
                at = tau[i];
            }
        }
        if !(cr > 0.0) {
            break;
        }
        if cr < c {
            c = cr;
            c_loc = at;
        }
        r_star = Some(*r);
    }
    let Some(r_star) = r_star else {
        return Ok(BoundReport::not_applicable(name, reference, 1.0, "no mass near the origin in the window".into()));
    };
    let last = *rows.last().unwrap();
    let pts: Vec<(f64, f64)> =
        radii.iter().filter(|(_, col)| col[last] > 0.0).take(3).map(|(r, col)| (r.ln(), col[last].ln())).collect();
    let slope =
        if pts.len() >= 2 { (pts[pts.len() - 1].1 - pts[0].1) / (pts[pts.len() - 1].0 - pts[0].0) } else { f64::NAN };
    Ok(BoundReport {
        name: name.into(),
        reference: reference.into(),
        lhs: c * r_star.powf(alpha),
        rhs: c * r_star.powf(alpha),
        slack: 1.0,
        abs_tol: 0.0,
        strict: false,
        verdict: Verdict::Pass,
        axis: "tau".into(),
        location: c_loc,
        note: Some(format!("C = {c}, R* = {r_star}, fitted exponent at last row = {slope}")),
    })
}
