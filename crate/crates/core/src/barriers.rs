//! Barrier profiles and the sub- and supersolutions built from them.
//!
//! `χ` solves `χ'' = C (χ')^β₁ (1 + χ')^β₂` with `χ = 0` on `s <= 0` and
//! blows up at a finite abscissa `b`; `ξ` solves
//! `ξ'' = -C (1 - ξ')^η₁ (ξ')^η₂` with `ξ(s) = s` on `s <= 0` and increases
//! to a finite limit `M`. Both initial value problems are non-unique at
//! `s = 0`; the nontrivial branch is selected by seeding from the separable
//! small-`s` asymptotics at [`SEED`]. Slopes are integrated in logarithmic
//! form so that branches with `β₁` close to 1 (slopes far below the
//! smallest double) stay representable.

use serde::{Deserialize, Serialize};

use crate::ergodic::ErgodicPair;
use crate::error::{config, Error, Result};
use crate::grid::Grid;
use crate::model::ProblemSpec;
use crate::ode::{integrate, Control, OdeOptions, Profile};
use crate::quadrature;
use crate::report::InequalityReport;

/// Abscissa at which the nontrivial branches are seeded.
pub const SEED: f64 = 1e-8;
/// Default slope cap for `χ`.
pub const DEFAULT_CAP: f64 = 1e8;
/// Tolerance of the barrier inequality suites.
pub const INEQUALITY_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiParams {
    pub c: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for ChiParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            beta1: 0.5,
            beta2: 1.5,
        }
    }
}

impl ChiParams {
    pub fn validate(&self) -> Result<()> {
        let Self { c, beta1, beta2 } = *self;
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Rejected(format!("C must be positive, got {c}")));
        }
        if !(beta1 > 0.0 && beta1 < 1.0) {
            return Err(Error::Rejected(format!(
                "beta1 must lie in (0, 1), got {beta1}"
            )));
        }
        if !(beta2 > 1.0 && beta2 < 2.0) {
            return Err(Error::Rejected(format!(
                "beta2 must lie in (1, 2), got {beta2}"
            )));
        }
        Ok(())
    }

    fn curvature(&self, g: f64) -> f64 {
        self.c * g.powf(self.beta1) * (1.0 + g).powf(self.beta2)
    }

    fn log_curvature(&self, log_g: f64) -> f64 {
        self.c.ln() + self.beta1 * log_g + self.beta2 * log_g.exp().ln_1p()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct XiParams {
    pub c: f64,
    pub eta1: f64,
    pub eta2: f64,
}

impl Default for XiParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            eta1: 0.5,
            eta2: 1.0,
        }
    }
}

impl XiParams {
    pub fn validate(&self) -> Result<()> {
        let Self { c, eta1, eta2 } = *self;
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Rejected(format!("C must be positive, got {c}")));
        }
        if !(eta1 > 0.0 && eta1 < 1.0) {
            return Err(Error::Rejected(format!(
                "eta1 must lie in (0, 1), got {eta1}"
            )));
        }
        if !(eta2 > 0.0 && eta1 + eta2 > 1.0) {
            return Err(Error::Rejected(format!(
                "eta2 must be positive with eta1 + eta2 > 1, got eta2 = {eta2}"
            )));
        }
        if eta2 >= 2.0 {
            return Err(Error::Rejected(format!(
                "eta2 = {eta2} >= 2 makes the limit M infinite"
            )));
        }
        Ok(())
    }
}

/// Tabulated `χ` on `[SEED, s_end]` with `χ'(s_end) = cap`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChiBarrier {
    pub params: ChiParams,
    pub cap: f64,
    /// Extrapolated blow-up abscissa.
    pub b: f64,
    /// `(cap_i, s_i)`: abscissae where `χ'` reached the intermediate caps.
    pub stops: Vec<(f64, f64)>,
    table: Profile,
    log_slope: Vec<f64>,
}

/// Cubic Hermite interpolation of a tabulated `y` with slopes `dy(i)`,
/// falling back to linear where a node value or slope is not finite.
fn log_interp(x: &[f64], y: &[f64], dy: impl Fn(usize) -> f64, s: f64) -> f64 {
    let i = x.partition_point(|&v| v <= s).clamp(1, x.len() - 1) - 1;
    let h = x[i + 1] - x[i];
    let w = (s - x[i]) / h;
    let (d0, d1) = (dy(i), dy(i + 1));
    if !(y[i].is_finite() && y[i + 1].is_finite() && d0.is_finite() && d1.is_finite()) {
        return (1.0 - w) * y[i] + w * y[i + 1];
    }
    let (w2, w3) = (w * w, w * w * w);
    (2.0 * w3 - 3.0 * w2 + 1.0) * y[i]
        + (w3 - 2.0 * w2 + w) * h * d0
        + (-2.0 * w3 + 3.0 * w2) * y[i + 1]
        + (w3 - w2) * h * d1
}

impl ChiBarrier {
    fn seed_log_slope(&self, s: f64) -> f64 {
        let p = &self.params;
        ((1.0 - p.beta1) * p.c * s).ln() / (1.0 - p.beta1)
    }

    /// `s_end`, the end of the table (`χ'(s_end) = cap`).
    pub fn s_end(&self) -> f64 {
        self.table.last()
    }

    pub fn table(&self) -> &Profile {
        &self.table
    }

    /// `χ(s)`; `+∞` beyond the table.
    pub fn value(&self, s: f64) -> f64 {
        if s <= 0.0 {
            0.0
        } else if s < self.table.first() {
            let g = self.seed_log_slope(s).exp();
            s * g * (1.0 - self.params.beta1) / (2.0 - self.params.beta1)
        } else {
            self.table.eval(s).map_or(f64::INFINITY, |v| v.0)
        }
    }

    /// `χ'(s)`; `+∞` beyond the table.
    pub fn slope(&self, s: f64) -> f64 {
        if s <= 0.0 {
            0.0
        } else if s < self.table.first() {
            self.seed_log_slope(s).exp()
        } else {
            self.table.eval(s).map_or(f64::INFINITY, |v| v.1)
        }
    }

    /// `χ''(s)` from the ODE.
    pub fn curvature(&self, s: f64) -> f64 {
        if s <= 0.0 {
            0.0
        } else {
            self.params.curvature(self.slope(s))
        }
    }

    /// `ln χ'(s)` for `0 < s <= s_end`.
    pub fn log_slope(&self, s: f64) -> f64 {
        if s <= 0.0 {
            f64::NEG_INFINITY
        } else if s < self.table.first() {
            self.seed_log_slope(s)
        } else if s > self.s_end() {
            f64::INFINITY
        } else {
            {
                let p = self.params;
                let l = &self.log_slope;
                log_interp(
                    &self.table.x,
                    l,
                    |i| (p.log_curvature(l[i]) - l[i]).exp(),
                    s,
                )
            }
        }
    }
}

fn barrier_options(max_step: f64) -> OdeOptions {
    OdeOptions {
        rtol: 1e-13,
        atol: 1e-300,
        first_step: 1e-3 * SEED,
        max_step,
        ..Default::default()
    }
}

/// Integrates `χ` until `χ'` reaches `cap`, and estimates the blow-up
/// abscissa `b` by Aitken extrapolation of the abscissae where `χ'` reaches
/// `cap/10^4`, `cap/10^2` and `cap`.
pub fn integrate_chi(params: ChiParams, cap: f64) -> Result<ChiBarrier> {
    params.validate()?;
    if !(cap > 1e4 && cap.is_finite()) {
        return Err(Error::Rejected(format!("cap must exceed 1e4, got {cap}")));
    }
    let p = params;
    let mut table = Profile::default();
    let mut log_slope = Vec::new();
    let mut push = |table: &mut Profile, s: f64, chi: f64, l: f64| {
        let before = table.len();
        table.push(s, chi, l.exp(), p.log_curvature(l).exp());
        if table.len() > before {
            log_slope.push(l);
        }
    };

    // phase 1: in s, state (χ, ln χ') until χ' reaches 1
    let l0 = ((1.0 - p.beta1) * p.c * SEED).ln() / (1.0 - p.beta1);
    let chi0 = SEED * l0.exp() * (1.0 - p.beta1) / (2.0 - p.beta1);
    let end = integrate(
        |_, y: &[f64; 2]| [y[1].exp(), (p.log_curvature(y[1]) - y[1]).exp()],
        SEED,
        [chi0, l0],
        1e9,
        &barrier_options(5e-3),
        |s, y, _| {
            push(&mut table, s, y[0], y[1]);
            if y[1] >= 0.0 {
                Control::Stop
            } else {
                Control::Continue
            }
        },
    )?;
    if !end.stopped {
        return Err(Error::Integration("χ' never reached 1".into()));
    }

    // phase 2: in ℓ = ln χ', state (s, χ)
    let rhs = |l: f64, _: &[f64; 2]| {
        let ds = (l - p.log_curvature(l)).exp();
        [ds, l.exp() * ds]
    };
    let mut state = [end.t, end.y[0]];
    let mut l = end.y[1];
    let mut stops = Vec::new();
    for target in [cap * 1e-4, cap * 1e-2, cap] {
        let done = integrate(
            rhs,
            l,
            state,
            target.ln(),
            &barrier_options(1e-2),
            |l, y, _| {
                push(&mut table, y[0], y[1], l);
                Control::Continue
            },
        )?;
        state = done.y;
        l = done.t;
        stops.push((target, state[0]));
    }
    let (s1, s2, s3) = (stops[0].1, stops[1].1, stops[2].1);
    let (d1, d2) = (s2 - s1, s3 - s2);
    let b = if d2 != d1 {
        s3 - d2 * d2 / (d2 - d1)
    } else {
        s3
    };
    Ok(ChiBarrier {
        params,
        cap,
        b,
        stops,
        table,
        log_slope,
    })
}

/// Tabulated `ξ` on `[SEED, s_max]`.
#[derive(Clone, Debug, PartialEq)]
pub struct XiBarrier {
    pub params: XiParams,
    pub s_max: f64,
    /// Limit `M = lim ξ(s)`: `ξ(s_max)` plus the integrated tail.
    pub limit: f64,
    /// `∫_{s_max}^∞ ξ'`.
    pub tail: f64,
    /// Abscissa where `ξ'` reached zero, when it does so in finite time.
    pub saturation: Option<f64>,
    table: Profile,
    log_h: Vec<f64>,
    log_w: Vec<f64>,
}

impl XiBarrier {
    fn seed_log_h(&self, s: f64) -> f64 {
        let p = &self.params;
        ((1.0 - p.eta1) * p.c * s).ln() / (1.0 - p.eta1)
    }

    pub fn table(&self) -> &Profile {
        &self.table
    }

    /// `ξ(s)`; NaN beyond `s_max` unless `ξ` has saturated.
    pub fn value(&self, s: f64) -> f64 {
        if s <= 0.0 {
            s
        } else if s < self.table.first() {
            let h = self.seed_log_h(s).exp();
            s - s * h * (1.0 - self.params.eta1) / (2.0 - self.params.eta1)
        } else if let Some(v) = self.table.eval(s) {
            v.0
        } else if self.saturation.is_some() {
            self.limit
        } else {
            f64::NAN
        }
    }

    /// `ξ'(s)`; NaN beyond `s_max` unless `ξ` has saturated.
    pub fn slope(&self, s: f64) -> f64 {
        if s <= 0.0 {
            1.0
        } else if s < self.table.first() {
            -self.seed_log_h(s).exp_m1()
        } else if let Some(v) = self.table.eval(s) {
            v.1
        } else if self.saturation.is_some() {
            0.0
        } else {
            f64::NAN
        }
    }

    /// `(ln(1 - ξ'), ln ξ')` for `0 < s <= s_max`.
    pub fn log_slopes(&self, s: f64) -> (f64, f64) {
        if s < self.table.first() {
            let lh = self.seed_log_h(s);
            (lh, (-lh.exp()).ln_1p())
        } else {
            let s = s.min(self.table.last());
            let p = self.params;
            let (lh, lw) = (&self.log_h, &self.log_w);
            // (ln h)' = C h^(η₁-1) w^η₂, (ln w)' = -C h^η₁ w^(η₂-1)
            let dh = |i: usize| p.c * ((p.eta1 - 1.0) * lh[i] + p.eta2 * lw[i]).exp();
            let dw = |i: usize| -p.c * (p.eta1 * lh[i] + (p.eta2 - 1.0) * lw[i]).exp();
            (
                log_interp(&self.table.x, lh, dh, s),
                log_interp(&self.table.x, lw, dw, s),
            )
        }
    }

    /// Whether `s` lies where `ξ` is known.
    pub fn covers(&self, s: f64) -> bool {
        s <= self.s_max || self.saturation.is_some()
    }
}

/// Integrates `ξ` on `[0, s_max]` and estimates `M` from the tail
/// `∫_{s_max}^∞ ξ' = ∫_0^{ξ'(s_max)} w^(1-η₂) (1-w)^(-η₁) / C dw`
/// (finite for `η₂ < 2`).
pub fn integrate_xi(params: XiParams, s_max: f64) -> Result<XiBarrier> {
    params.validate()?;
    if !(s_max > 1e-6 && s_max.is_finite()) {
        return Err(Error::Rejected(format!(
            "s_max must be positive, got {s_max}"
        )));
    }
    let p = params;
    let mut table = Profile::default();
    let mut log_h = Vec::new();
    let mut log_w = Vec::new();
    let mut push = |table: &mut Profile, s: f64, xi: f64, lh: f64, lw: f64| {
        let before = table.len();
        let curvature = -(p.c.ln() + p.eta1 * lh + p.eta2 * lw).exp();
        table.push(s, xi, lw.exp(), curvature);
        if table.len() > before {
            log_h.push(lh);
            log_w.push(lw);
        }
    };
    let ln_one_minus_exp = |l: f64| (-l.exp()).ln_1p();

    // phase 1: state (ξ, ln h) with h = 1 - ξ', until h = 1/2
    let lh0 = ((1.0 - p.eta1) * p.c * SEED).ln() / (1.0 - p.eta1);
    let xi0 = SEED - SEED * lh0.exp() * (1.0 - p.eta1) / (2.0 - p.eta1);
    let end = integrate(
        |_, y: &[f64; 2]| {
            let lw = ln_one_minus_exp(y[1]);
            [lw.exp(), p.c * ((p.eta1 - 1.0) * y[1] + p.eta2 * lw).exp()]
        },
        SEED,
        [xi0, lh0],
        s_max,
        &barrier_options(5e-3),
        |s, y, _| {
            push(&mut table, s, y[0], y[1], ln_one_minus_exp(y[1]));
            if y[1] >= -std::f64::consts::LN_2 {
                Control::Stop
            } else {
                Control::Continue
            }
        },
    )?;
    let mut saturation = None;
    let (xi_end, lh_end, lw_end) = if end.stopped && end.t < s_max {
        // phase 2: state (ξ, ln w) with w = ξ'
        let lw0 = ln_one_minus_exp(end.y[1]);
        const FLOOR: f64 = -700.0;
        let done = integrate(
            |_, y: &[f64; 2]| {
                let lh = ln_one_minus_exp(y[1]);
                [
                    y[1].exp(),
                    -p.c * (p.eta1 * lh + (p.eta2 - 1.0) * y[1]).exp(),
                ]
            },
            end.t,
            [end.y[0], lw0],
            s_max,
            &barrier_options(1e-2),
            |s, y, _| {
                if y[1] < FLOOR {
                    return Control::Stop;
                }
                push(&mut table, s, y[0], ln_one_minus_exp(y[1]), y[1]);
                Control::Continue
            },
        )?;
        if done.stopped {
            saturation = Some(done.t);
            let xi = table.y[table.len() - 1];
            table.push(s_max, xi, 0.0, 0.0);
            log_h.push(0.0);
            log_w.push(f64::NEG_INFINITY);
            (xi, 0.0, f64::NEG_INFINITY)
        } else {
            (done.y[0], ln_one_minus_exp(done.y[1]), done.y[1])
        }
    } else {
        (end.y[0], end.y[1], ln_one_minus_exp(end.y[1]))
    };
    let tail = if lw_end == f64::NEG_INFINITY {
        0.0
    } else {
        // y = (1 - w)^(1-η₁) removes the singularity at w = 1
        let q = 1.0 - p.eta1;
        let y_lo = (q * lh_end).exp();
        let inner = quadrature::integrate(
            |y: f64| (1.0 - y.powf(1.0 / q)).powf(1.0 - p.eta2),
            y_lo,
            1.0,
            1e-15,
            1e-12,
        )?;
        inner / (p.c * q)
    };
    Ok(XiBarrier {
        params,
        s_max,
        limit: xi_end + tail,
        tail,
        saturation,
        table,
        log_h,
        log_w,
    })
}

/// `ln((m-2)/m) + m/(m-2) (ln num - (2/m) ln den)`: the log of the
/// left-hand side of both barrier inequalities.
fn log_lhs(m: f64, log_num: f64, log_den: f64) -> f64 {
    ((m - 2.0) / m).ln() + m / (m - 2.0) * (log_num - 2.0 / m * log_den)
}

fn record_logs(report: &mut InequalityReport, log_l: f64, log_r: f64, witness: &[f64]) {
    let excess = log_l.exp() - log_r.exp();
    report.record(excess, witness);
    report.record_ratio((log_l - log_r).exp());
}

/// `n` points log-spaced on `[a, b]`.
fn log_space(a: f64, b: f64, n: usize) -> impl Iterator<Item = f64> {
    let (la, lb) = (a.ln(), b.ln());
    (0..n).map(move |i| (la + (lb - la) * i as f64 / (n.max(2) - 1) as f64).exp())
}

/// Checks `((m-2)/m) (χ'' / [(1+χ')^m - (1+χ')]^(2/m))^(m/(m-2)) <= (χ')^β`
/// on `samples` points, log-spaced in `s` near 0 and in `s_end - s` near the
/// blow-up. Witness: `(s, χ')`.
pub fn verify_chi_inequality(
    chi: &ChiBarrier,
    m: f64,
    beta: f64,
    samples: usize,
) -> InequalityReport {
    let mut report = InequalityReport::new("chi barrier inequality", INEQUALITY_TOLERANCE);
    let end = chi.s_end();
    let near_zero = samples / 2;
    let points = log_space(SEED, 0.5 * end, near_zero)
        .chain(log_space(1e-9 * end, 0.5 * end, samples - near_zero).map(|d| end - d));
    for s in points {
        let l = chi.log_slope(s);
        let g = l.exp();
        let log_den = if l < -600.0 {
            (m - 1.0).ln() + l
        } else {
            g.ln_1p() + ((m - 1.0) * g.ln_1p()).exp_m1().ln()
        };
        let log_l = log_lhs(m, chi.params.log_curvature(l), log_den);
        record_logs(&mut report, log_l, beta * l, &[s, g]);
    }
    report
}

/// Checks `((m-2)/m) (-ξ'' / [ξ' - (ξ')^m]^(2/m))^(m/(m-2)) <= (1-ξ')^β`
/// on `samples` points log-spaced on `[SEED, s_max]`. Witness: `(s, ξ')`.
pub fn verify_xi_inequality(xi: &XiBarrier, m: f64, beta: f64, samples: usize) -> InequalityReport {
    let mut report = InequalityReport::new("xi barrier inequality", INEQUALITY_TOLERANCE);
    let p = xi.params;
    let end = xi.saturation.unwrap_or(xi.s_max);
    for s in log_space(SEED, end, samples) {
        let (lh, lw) = xi.log_slopes(s);
        if lw == f64::NEG_INFINITY {
            // saturated: left side vanishes
            record_logs(&mut report, f64::NEG_INFINITY, beta * lh, &[s, 0.0]);
            continue;
        }
        // ln(w - w^m) = ln w + ln(1 - w^(m-1)), with 1 - w^(m-1) from h where h is small
        let log_gap = if lh < -700.0 {
            (m - 1.0).ln() + lh
        } else if lh < lw {
            (-((m - 1.0) * (-lh.exp()).ln_1p()).exp_m1()).ln()
        } else {
            (-((m - 1.0) * lw).exp_m1()).ln()
        };
        let log_den = lw + log_gap;
        let log_num = p.c.ln() + p.eta1 * lh + p.eta2 * lw;
        let log_l = log_lhs(m, log_num, log_den);
        record_logs(&mut report, log_l, beta * lh, &[s, lw.exp()]);
    }
    report
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AssemblyKind {
    /// `V = φ + ĉ + χ(φ + ĉ - (t + t0)) + ψ(t)`.
    Super,
    /// `U = t + t0 + ξ(φ + ĉ - (t + t0)) - ψ(t)`.
    Sub,
    /// `V_R = φ + ĉ + χ(φ + ĉ - (t + R)) + ∫_R^{t+R} (τ^α̂ + 1)^(-β̂) dτ + 1/R`.
    SuperShifted,
    /// `U_R = t + R + ξ(φ + ĉ - (t + R)) - ∫_R^{t+R} (τ^α̂ + 1)^(-β̂) dτ - 1/R`.
    SubShifted,
}

impl AssemblyKind {
    pub fn is_super(self) -> bool {
        matches!(self, AssemblyKind::Super | AssemblyKind::SuperShifted)
    }

    pub fn is_shifted(self) -> bool {
        matches!(self, AssemblyKind::SuperShifted | AssemblyKind::SubShifted)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BarrierCurve {
    Chi(ChiBarrier),
    Xi(XiBarrier),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssemblyParams {
    /// `t0` (plain kinds) or `R` (shifted kinds).
    pub shift: f64,
    pub beta: f64,
    pub alpha_hat: f64,
    #[serde(default)]
    pub c_hat: f64,
}

/// A space-time barrier `W(x, t) = F(φ(x), t)` built on an ergodic pair.
#[derive(Clone, Debug, PartialEq)]
pub struct BarrierAssembly {
    pub kind: AssemblyKind,
    pub pair: ErgodicPair,
    pub curve: BarrierCurve,
    pub params: AssemblyParams,
    pub beta_hat: f64,
    /// Limit of the time term as `t → ∞` (`σ` for the unshifted kinds).
    pub sigma: f64,
}

/// Scalar record of an assembly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssemblySummary {
    pub kind: AssemblyKind,
    pub shift: f64,
    pub beta: f64,
    pub alpha_hat: f64,
    pub beta_hat: f64,
    pub c_hat: f64,
    pub sigma: f64,
    /// `b` for `χ`-based kinds, `M` for `ξ`-based kinds.
    pub curve_constant: f64,
}

/// `∫_0^t ((τ + shift)^α̂ + 1)^(-β̂) dτ`.
fn time_integral(shift: f64, alpha_hat: f64, beta_hat: f64, t: f64) -> Result<f64> {
    quadrature::integrate(
        |tau: f64| ((tau + shift).powf(alpha_hat) + 1.0).powf(-beta_hat),
        0.0,
        t,
        1e-15,
        1e-12,
    )
}

/// `∫_0^∞ ((τ + shift)^α̂ + 1)^(-β̂) dτ`, with `α̂ β̂ > 1`.
fn time_integral_infinite(shift: f64, alpha_hat: f64, beta_hat: f64) -> Result<f64> {
    let decay = alpha_hat * beta_hat - 1.0;
    let head = time_integral(shift, alpha_hat, beta_hat, 1.0)?;
    // τ + shift = e^y on [ln(1 + shift), y_end]; the rest bounded by ∫ τ^(-α̂β̂)
    let y0 = (1.0 + shift).ln();
    let y_end = y0.max((1e-16 * decay).ln() / -decay) + 1.0;
    let body = quadrature::integrate(
        |y: f64| {
            let e = y.exp();
            (e.powf(alpha_hat) + 1.0).powf(-beta_hat) * e
        },
        y0,
        y_end,
        1e-16,
        1e-12,
    )?;
    let rest = (-decay * y_end).exp() / decay;
    Ok(head + body + rest)
}

impl BarrierAssembly {
    fn argument(&self, phi: f64, t: f64) -> f64 {
        phi + self.params.c_hat - (t + self.params.shift)
    }

    /// The additive time term: `ψ(t)` or `∫_R^{t+R} ... + 1/R`.
    pub fn time_term(&self, t: f64) -> Result<f64> {
        let p = &self.params;
        let integral = time_integral(p.shift, p.alpha_hat, self.beta_hat, t)?;
        Ok(if self.kind.is_shifted() {
            integral + 1.0 / p.shift
        } else {
            (1.0 - p.beta) * integral
        })
    }

    /// `ψ(t) = (1-β) ∫_0^t ((τ + t0)^α̂ + 1)^(-β̂) dτ`.
    pub fn psi(&self, t: f64) -> Result<f64> {
        let p = &self.params;
        Ok((1.0 - p.beta) * time_integral(p.shift, p.alpha_hat, self.beta_hat, t)?)
    }

    /// Whether `(x, t)` with `φ(x) = phi` lies in `Q` (always for sub kinds).
    pub fn contains(&self, phi: f64, t: f64) -> bool {
        match &self.curve {
            BarrierCurve::Chi(chi) => self.argument(phi, t) < chi.s_end(),
            BarrierCurve::Xi(xi) => xi.covers(self.argument(phi, t)),
        }
    }

    /// `W` as a function of `φ(x)` and `t`, given the time term; `+∞`
    /// outside `Q` for super kinds.
    pub fn profile_value(&self, phi: f64, t: f64, time_term: f64) -> f64 {
        let s = self.argument(phi, t);
        let p = &self.params;
        match (&self.curve, self.kind.is_super()) {
            (BarrierCurve::Chi(chi), true) => {
                let c = chi.value(s);
                if c.is_finite() {
                    phi + p.c_hat + c + time_term
                } else {
                    f64::INFINITY
                }
            }
            (BarrierCurve::Xi(xi), false) => t + p.shift + xi.value(s) - time_term,
            _ => f64::NAN,
        }
    }

    /// `W(x_node, t)`.
    pub fn value(&self, node: usize, t: f64) -> Result<f64> {
        let tt = self.time_term(t)?;
        Ok(self.profile_value(self.pair.phi.at(node), t, tt))
    }

    pub fn summary(&self) -> AssemblySummary {
        let p = &self.params;
        AssemblySummary {
            kind: self.kind,
            shift: p.shift,
            beta: p.beta,
            alpha_hat: p.alpha_hat,
            beta_hat: self.beta_hat,
            c_hat: p.c_hat,
            sigma: self.sigma,
            curve_constant: match &self.curve {
                BarrierCurve::Chi(chi) => chi.b,
                BarrierCurve::Xi(xi) => xi.limit,
            },
        }
    }
}

/// Builds a barrier of `kind` on `pair`, checking that the compact set
/// `compact` (node indices) lies in `Q_0` for super kinds and that the `ξ`
/// table covers every argument reached on the grid for sub kinds.
pub fn assemble(
    kind: AssemblyKind,
    pair: &ErgodicPair,
    curve: BarrierCurve,
    params: AssemblyParams,
    problem: &ProblemSpec,
    compact: &[usize],
) -> Result<BarrierAssembly> {
    let AssemblyParams {
        shift,
        beta,
        alpha_hat,
        c_hat,
    } = params;
    if !(beta > 0.0 && beta < 1.0) {
        return config(format!("beta must lie in (0, 1), got {beta}"));
    }
    if !(shift > 0.0 && shift.is_finite()) {
        return config(format!("time shift must be positive, got {shift}"));
    }
    if !(alpha_hat > 0.0) {
        return config(format!("alpha_hat must be positive, got {alpha_hat}"));
    }
    if let Some(env) = &problem.envelope {
        let m = problem.m;
        let limit = env.alpha * m / (env.alpha + m);
        if alpha_hat >= limit {
            return config(format!(
                "alpha_hat = {alpha_hat} must be below alpha m / (alpha + m) = {limit}"
            ));
        }
    }
    let beta_hat = beta / (1.0 - beta);
    if alpha_hat * beta_hat <= 1.0 {
        return config(format!(
            "alpha_hat * beta_hat = {} <= 1: the time integral diverges",
            alpha_hat * beta_hat
        ));
    }
    let phi = &pair.phi;
    match (&curve, kind.is_super()) {
        (BarrierCurve::Chi(chi), true) => {
            let top = compact
                .iter()
                .map(|&k| phi.at(k))
                .fold(f64::NEG_INFINITY, f64::max);
            let minimal = top + c_hat - chi.b;
            if shift <= minimal {
                return Err(Error::ShiftTooSmall { t0: shift, minimal });
            }
        }
        (BarrierCurve::Xi(xi), false) => {
            let need = phi.max() + c_hat - shift;
            if !xi.covers(need) {
                return config(format!(
                    "xi table ends at {} but arguments reach {need}",
                    xi.s_max
                ));
            }
        }
        _ => return config("super kinds need the chi profile, sub kinds the xi profile"),
    }
    let integral = time_integral_infinite(shift, alpha_hat, beta_hat)?;
    let sigma = if kind.is_shifted() {
        integral + 1.0 / shift
    } else {
        (1.0 - beta) * integral
    };
    Ok(BarrierAssembly {
        kind,
        pair: pair.clone(),
        curve,
        params,
        beta_hat,
        sigma,
    })
}

/// Outcome of [`residual_check`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// Signed excess: `-residual` for super kinds, `residual` for sub kinds.
    pub report: InequalityReport,
    /// `ε_resid = C (h + dt) + e_erg`.
    pub epsilon: f64,
    /// Sup over the checked nodes of the centered residual of the pair.
    pub ergodic_residual: f64,
    /// Smallest (super) or largest (sub) residual found.
    pub worst_residual: f64,
    /// Samples where the barrier profile is active (argument above 0).
    pub active: usize,
}

/// Constant `C` of `ε_resid`.
pub const RESIDUAL_CONSTANT: f64 = 1.0;

fn stencil(grid: &Grid, k: usize, reach: usize) -> Option<Vec<usize>> {
    let n = grid.per_axis();
    let mut nodes = vec![k];
    for axis in 0..grid.dim() {
        let i = grid.axis_index(k, axis);
        if i < reach || i + reach >= n {
            return None;
        }
        let s = grid.stride(axis);
        for d in 1..=reach {
            nodes.push(k - d * s);
            nodes.push(k + d * s);
        }
    }
    Some(nodes)
}

/// Discrete residual `W_t - Δ W + |DW|^m - f + λ` of the assembly
/// (centered differences in `x`, forward difference of size `dt` in `t`)
/// at every node and time whose stencil stays `2h` inside `Q` and off the
/// junction `φ + ĉ = t + shift`.
pub fn residual_check(
    assembly: &BarrierAssembly,
    problem: &ProblemSpec,
    times: &[f64],
    dt: f64,
) -> Result<ResidualReport> {
    if !(dt > 0.0) {
        return config(format!("time step must be positive, got {dt}"));
    }
    let pair = &assembly.pair;
    let grid = *pair.grid();
    let h = grid.spacing();
    let phi = pair.phi.values();
    let f = problem.source.sample(&grid)?.into_values();
    let m = problem.m;
    let lambda = pair.lambda;

    let centered = |w: &dyn Fn(usize) -> f64, k: usize| -> (f64, f64) {
        let mut lap = 0.0;
        let mut grad_sq = 0.0;
        for axis in 0..grid.dim() {
            let s = grid.stride(axis);
            let (a, c, b) = (w(k - s), w(k), w(k + s));
            lap += (a - 2.0 * c + b) / (h * h);
            grad_sq += ((b - a) / (2.0 * h)).powi(2);
        }
        (lap, grad_sq)
    };

    let candidates: Vec<usize> = (0..grid.len())
        .filter(|&k| stencil(&grid, k, 2).is_some())
        .collect();
    let mut ergodic_residual: f64 = 0.0;
    for &k in &candidates {
        let (lap, g2) = centered(&|j| phi[j], k);
        ergodic_residual = ergodic_residual.max((lambda - lap + g2.powf(0.5 * m) - f[k]).abs());
    }
    let epsilon = RESIDUAL_CONSTANT * (h + dt) + ergodic_residual;
    let name = if assembly.kind.is_super() {
        "super residual >= -eps"
    } else {
        "sub residual <= eps"
    };
    let mut report = InequalityReport::new(name, epsilon);
    let mut worst = if assembly.kind.is_super() {
        f64::INFINITY
    } else {
        f64::NEG_INFINITY
    };
    let mut active_samples = 0;
    for &t in times {
        let now = assembly.time_term(t)?;
        let next = assembly.time_term(t + dt)?;
        for &k in &candidates {
            let wide = stencil(&grid, k, 2).expect("candidate");
            let inside = wide
                .iter()
                .all(|&j| assembly.contains(phi[j], t) && assembly.contains(phi[j], t + dt));
            if !inside {
                continue;
            }
            let args = stencil(&grid, k, 1)
                .expect("candidate")
                .into_iter()
                .flat_map(|j| {
                    [t, t + dt]
                        .map(|tt| phi[j] + assembly.params.c_hat - tt - assembly.params.shift)
                });
            let (lo, hi) = args.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), a| {
                (lo.min(a), hi.max(a))
            });
            if lo <= 0.0 && hi >= 0.0 {
                continue;
            }
            let active = lo > 0.0;
            let w = |j: usize| assembly.profile_value(phi[j], t, now);
            let (lap, g2) = centered(&w, k);
            let w_t = (assembly.profile_value(phi[k], t + dt, next) - w(k)) / dt;
            let r = w_t - lap + g2.powf(0.5 * m) - f[k] + lambda;
            if !r.is_finite() {
                continue;
            }
            active_samples += usize::from(active);
            let point = grid.point(k);
            if assembly.kind.is_super() {
                worst = worst.min(r);
                report.record(-r, &[point[0], point[1], t]);
            } else {
                worst = worst.max(r);
                report.record(r, &[point[0], point[1], t]);
            }
        }
    }
    if report.samples == 0 {
        return config("no admissible nodes: Q does not meet the grid with the required margin");
    }
    Ok(ResidualReport {
        report,
        epsilon,
        ergodic_residual,
        worst_residual: worst,
        active: active_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridField;
    use crate::model::{GrowthEnvelope, InitialData, RadialPolynomial};
    use approx::assert_abs_diff_eq;

    fn chi_closed(s: f64) -> f64 {
        -s + ((2.0 + s) / (2.0 - s)).ln()
    }

    #[test]
    fn chi_matches_closed_form() {
        let chi = integrate_chi(ChiParams::default(), DEFAULT_CAP).unwrap();
        assert!((chi.b - 2.0).abs() < 1e-3, "b = {}", chi.b);
        assert_abs_diff_eq!(chi.value(1.0), 3f64.ln() - 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(chi.slope(1.0), 1.0 / 3.0, epsilon = 1e-6);
        assert_abs_diff_eq!(chi.curvature(1.0), 8.0 / 9.0, epsilon = 1e-6);
        for i in 0..=1900 {
            let s = i as f64 * 1e-3;
            assert!((chi.value(s) - chi_closed(s)).abs() < 1e-6, "s = {s}");
        }
        for s in [-3.0, -1e-3, 0.0] {
            assert_eq!(chi.value(s), 0.0);
            assert_eq!(chi.slope(s), 0.0);
        }
    }

    #[test]
    fn xi_matches_closed_form() {
        let xi = integrate_xi(XiParams::default(), 10.0).unwrap();
        assert!((xi.limit - 2.0).abs() < 1e-3, "M = {}", xi.limit);
        assert_abs_diff_eq!(xi.value(2.0), 1.523188, epsilon = 1e-6);
        assert_abs_diff_eq!(xi.slope(2.0), 1.0 / 1f64.cosh().powi(2), epsilon = 1e-6);
        for i in 0..=1000 {
            let s = i as f64 * 1e-2;
            assert!(
                (xi.value(s) - 2.0 * (s / 2.0).tanh()).abs() < 1e-6,
                "s = {s}"
            );
        }
        for s in [-3.0, -1e-3] {
            assert_eq!(xi.value(s), s);
        }
    }

    #[test]
    fn admissible_parameters_pass_both_suites() {
        let chi = integrate_chi(
            ChiParams {
                c: 1.0,
                beta1: 0.9,
                beta2: 1.1,
            },
            DEFAULT_CAP,
        )
        .unwrap();
        let r = verify_chi_inequality(&chi, 3.0, 0.6, 10_000);
        assert!(r.passed(), "{r:?}");
        let xi = integrate_xi(
            XiParams {
                c: 1.0,
                eta1: 0.9,
                eta2: 1.0,
            },
            60.0,
        )
        .unwrap();
        let r = verify_xi_inequality(&xi, 3.0, 0.6, 10_000);
        assert!(r.passed(), "{r:?}");
        // log-variable seeding keeps β₁ close to 1 usable
        let chi = integrate_chi(
            ChiParams {
                c: 1.0,
                beta1: 0.99,
                beta2: 1.01,
            },
            DEFAULT_CAP,
        )
        .unwrap();
        assert!(verify_chi_inequality(&chi, 3.0, 0.95, 10_000).passed());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]

        // ∫_0^∞ dg / (C g^β₁ (1+g)^(2-β₁)) = 1 / (C (1-β₁))
        #[test]
        fn chi_blow_up_abscissa(beta1 in 0.2f64..0.95, c in 0.2f64..4.0) {
            let chi = integrate_chi(ChiParams { c, beta1, beta2: 2.0 - beta1 }, DEFAULT_CAP).unwrap();
            let b = 1.0 / (c * (1.0 - beta1));
            proptest::prop_assert!((chi.b - b).abs() < 1e-6 * b, "{} vs {}", chi.b, b);
        }

        // ∫_0^1 dw / (C (1-w)^η₁) = 1 / (C (1-η₁))
        #[test]
        fn xi_limit(eta1 in 0.2f64..0.95, c in 0.2f64..4.0) {
            let xi = integrate_xi(XiParams { c, eta1, eta2: 1.0 }, 20.0).unwrap();
            let limit = 1.0 / (c * (1.0 - eta1));
            proptest::prop_assert!((xi.limit - limit).abs() < 1e-6 * limit, "{} vs {}", xi.limit, limit);
            proptest::prop_assert!(xi.value(20.0) <= xi.limit);
        }
    }

    #[test]
    fn rejects_parameters_outside_ranges() {
        for p in [
            ChiParams {
                c: 1.0,
                beta1: 1.0,
                beta2: 1.5,
            },
            ChiParams {
                c: 1.0,
                beta1: 0.5,
                beta2: 2.5,
            },
            ChiParams {
                c: 0.0,
                beta1: 0.5,
                beta2: 1.5,
            },
        ] {
            assert!(matches!(
                integrate_chi(p, DEFAULT_CAP),
                Err(Error::Rejected(_))
            ));
        }
        let p = XiParams {
            c: 1.0,
            eta1: 0.5,
            eta2: 0.4,
        };
        assert!(matches!(integrate_xi(p, 10.0), Err(Error::Rejected(_))));
    }

    #[test]
    fn chi_inequality_at_one() {
        // left ≈ 0.218, right = (1/3)^0.9 ≈ 0.372
        let chi = integrate_chi(ChiParams::default(), DEFAULT_CAP).unwrap();
        let g: f64 = 1.0 / 3.0;
        let den = (1.0 + g).powi(3) - (1.0 + g);
        let left = (1.0 / 3.0) * ((8.0 / 9.0) / den.powf(2.0 / 3.0)).powi(3);
        assert_abs_diff_eq!(left, 0.218, epsilon = 1e-3);
        let l = chi.log_slope(1.0);
        let log_den = g.ln_1p() + (2.0 * g.ln_1p()).exp_m1().ln();
        let log_l = log_lhs(3.0, chi.params.log_curvature(l), log_den);
        assert_abs_diff_eq!(log_l.exp(), left, epsilon = 1e-6);
        assert!(log_l.exp() < g.powf(0.9));
    }

    #[test]
    fn designed_to_fail_pair_violates_near_zero() {
        let chi = integrate_chi(ChiParams::default(), DEFAULT_CAP).unwrap();
        let report = verify_chi_inequality(&chi, 3.0, 0.999, 10_000);
        assert!(!report.passed());
        assert!(report.witness[0] < 0.1, "witness {:?}", report.witness);
    }

    #[test]
    fn xi_inequality_holds_at_large_s() {
        let xi = integrate_xi(XiParams::default(), 40.0).unwrap();
        let mut report = InequalityReport::new("tail", INEQUALITY_TOLERANCE);
        for s in log_space(5.0, 40.0, 1000) {
            let (lh, lw) = xi.log_slopes(s);
            let log_den = lw + (-((2.0) * lw).exp_m1()).ln();
            let log_l = log_lhs(3.0, lh * 0.5 + lw, log_den);
            record_logs(&mut report, log_l, 0.5 * lh, &[s]);
        }
        assert!(report.passed(), "{report:?}");
    }

    fn quadratic_pair(h: f64) -> (ProblemSpec, ErgodicPair) {
        let p = ProblemSpec::manufactured(
            RadialPolynomial::monomial(1.0, 2.0),
            2.0,
            3.0,
            1,
            6.0,
            InitialData::zero(),
        )
        .unwrap()
        .with_envelope(GrowthEnvelope::power(3.0, 1.0, 8.0).unwrap());
        let grid = p.grid(h).unwrap();
        let pair = ErgodicPair::manufactured(&p, &grid, [0.0, 0.0]).unwrap();
        (p, pair)
    }

    fn params(shift: f64) -> AssemblyParams {
        AssemblyParams {
            shift,
            beta: 0.6,
            alpha_hat: 1.0,
            c_hat: 0.0,
        }
    }

    #[test]
    fn super_assembly_outside_active_region_is_phi_plus_psi() {
        let (p, pair) = quadratic_pair(0.05);
        let chi = integrate_chi(
            ChiParams {
                c: 1.0,
                beta1: 0.9,
                beta2: 1.1,
            },
            DEFAULT_CAP,
        )
        .unwrap();
        let compact = pair.grid().nodes_where(|x| x[0].abs() <= 2.0);
        let a = assemble(
            AssemblyKind::Super,
            &pair,
            BarrierCurve::Chi(chi),
            params(4.0),
            &p,
            &compact,
        )
        .unwrap();
        let k = pair.grid().nearest_node([1.0, 0.0]);
        for t in [0.0, 0.5, 3.0] {
            let psi = a.psi(t).unwrap();
            assert_eq!(a.value(k, t).unwrap(), pair.phi.at(k) + psi);
        }
        // V -> φ + σ on a compact set
        let far = a.value(k, 1e6).unwrap();
        assert!((far - (pair.phi.at(k) + a.sigma)).abs() < 1e-2);
        // blow-up wall: V grows without bound towards ∂Q
        let grid = pair.grid();
        let mut last = 0.0;
        let b = match &a.curve {
            BarrierCurve::Chi(c) => c.b,
            _ => unreachable!(),
        };
        for d in [1e-1, 1e-3, 1e-5, 1e-7] {
            let v = a.profile_value(4.0 + b - d, 0.0, 0.0);
            assert!(v > last);
            last = v;
        }
        assert!(last > 20.0);
        let _ = grid;
    }

    #[test]
    fn shift_too_small_is_reported() {
        let (p, pair) = quadratic_pair(0.05);
        let chi = integrate_chi(
            ChiParams {
                c: 1.0,
                beta1: 0.9,
                beta2: 1.1,
            },
            DEFAULT_CAP,
        )
        .unwrap();
        let compact = pair.grid().nodes_where(|x| x[0].abs() <= 5.0);
        let err = assemble(
            AssemblyKind::Super,
            &pair,
            BarrierCurve::Chi(chi),
            params(1.0),
            &p,
            &compact,
        )
        .unwrap_err();
        match err {
            Error::ShiftTooSmall { minimal, .. } => assert!((minimal - (25.0 - 10.0)).abs() < 0.1),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn sub_assembly_bounds_and_limits() {
        let (p, pair) = quadratic_pair(0.05);
        let xi = integrate_xi(
            XiParams {
                c: 1.0,
                eta1: 0.9,
                eta2: 1.0,
            },
            60.0,
        )
        .unwrap();
        let m_limit = xi.limit;
        let a = assemble(
            AssemblyKind::Sub,
            &pair,
            BarrierCurve::Xi(xi),
            params(4.0),
            &p,
            &[],
        )
        .unwrap();
        for k in (0..pair.grid().len()).step_by(7) {
            for t in [0.0, 1.0, 10.0] {
                assert!(a.value(k, t).unwrap() <= t + 4.0 + m_limit + 1e-12);
            }
        }
        let k = pair.grid().nearest_node([1.0, 0.0]);
        let far = a.value(k, 1e6).unwrap();
        assert!((far - (pair.phi.at(k) - a.sigma)).abs() < 1e-2);
    }

    #[test]
    fn assemblies_are_monotone_in_time() {
        let (p, pair) = quadratic_pair(0.05);
        let chi = integrate_chi(
            ChiParams {
                c: 1.0,
                beta1: 0.9,
                beta2: 1.1,
            },
            DEFAULT_CAP,
        )
        .unwrap();
        let xi = integrate_xi(
            XiParams {
                c: 1.0,
                eta1: 0.9,
                eta2: 1.0,
            },
            60.0,
        )
        .unwrap();
        let shifted = AssemblyParams {
            shift: 8.0,
            ..params(8.0)
        };
        let v = assemble(
            AssemblyKind::SuperShifted,
            &pair,
            BarrierCurve::Chi(chi.clone()),
            shifted,
            &p,
            &[],
        )
        .unwrap();
        let u = assemble(
            AssemblyKind::SubShifted,
            &pair,
            BarrierCurve::Xi(xi.clone()),
            shifted,
            &p,
            &[],
        )
        .unwrap();
        for k in (0..pair.grid().len()).step_by(5) {
            let phi = pair.phi.at(k);
            let mut prev_chi = f64::INFINITY;
            let mut prev_xi = f64::NEG_INFINITY;
            for i in 0..40 {
                let t = i as f64 * 0.25;
                if v.contains(phi, t) {
                    let c = chi.value(phi - (t + 8.0));
                    assert!(c <= prev_chi);
                    prev_chi = c;
                }
                let x = t + 8.0 + xi.value(phi - (t + 8.0));
                assert!(x >= prev_xi - 1e-12);
                prev_xi = x;
            }
        }
        let _ = u;
    }

    #[test]
    fn residual_signs_in_inactive_regions() {
        let (p, pair) = quadratic_pair(0.05);
        let chi = integrate_chi(
            ChiParams {
                c: 1.0,
                beta1: 0.9,
                beta2: 1.1,
            },
            DEFAULT_CAP,
        )
        .unwrap();
        let compact = pair.grid().nodes_where(|x| x[0].abs() <= 1.0);
        let v = assemble(
            AssemblyKind::Super,
            &pair,
            BarrierCurve::Chi(chi),
            params(40.0),
            &p,
            &compact,
        )
        .unwrap();
        // φ <= 36 < t0: χ inactive everywhere, residual = ψ'(t) > 0
        let r = residual_check(&v, &p, &[0.0, 1.0], 1e-3).unwrap();
        assert!(r.worst_residual > 0.0, "{r:?}");
        let xi = integrate_xi(
            XiParams {
                c: 1.0,
                eta1: 0.9,
                eta2: 1.0,
            },
            10.0,
        )
        .unwrap();
        let u = assemble(
            AssemblyKind::Sub,
            &pair,
            BarrierCurve::Xi(xi),
            params(40.0),
            &p,
            &[],
        )
        .unwrap();
        let r = residual_check(&u, &p, &[0.0, 1.0], 1e-3).unwrap();
        assert!(r.worst_residual < 0.0, "{r:?}");
        let _ = GridField::constant(*pair.grid(), 0.0);
    }
}
