//! Problem instances: exponent, dimension, source term, initial data,
//! truncation radius, and the growth-envelope hypothesis on the source.
//!
//! Closed-form expressions are parsed with `evalexpr`; they may use the
//! variables `x`, `y` and `r = |(x, y)|` and the `math::*` builtins. Note
//! that `evalexpr` does integer arithmetic on integer literals, so write
//! `1.0 / 2.0` rather than `1 / 2`.

use std::sync::Arc;

use evalexpr::{ContextWithMutableVariables, DefaultNumericTypes, HashMapContext, Node, Value};
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::grid::{Grid, GridField};

/// One term `coef * r^exponent` of a radial polynomial.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerTerm {
    pub coef: f64,
    pub exponent: f64,
}

impl PowerTerm {
    pub fn new(coef: f64, exponent: f64) -> Self {
        Self { coef, exponent }
    }
}

/// A radial function `phi(r) = sum coef * r^exponent`, the closed-form family
/// used for manufactured targets and polynomial initial data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RadialPolynomial {
    pub terms: Vec<PowerTerm>,
}

fn rpow(r: f64, k: f64) -> f64 {
    if k == 0.0 {
        1.0
    } else if k.fract() == 0.0 && k.abs() <= 32.0 {
        r.powi(k as i32)
    } else {
        r.powf(k)
    }
}

impl RadialPolynomial {
    pub fn new(terms: Vec<PowerTerm>) -> Self {
        Self { terms }
    }

    /// `c * r^k`.
    pub fn monomial(coef: f64, exponent: f64) -> Self {
        Self::new(vec![PowerTerm::new(coef, exponent)])
    }

    pub fn value(&self, r: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| t.coef * rpow(r, t.exponent))
            .sum()
    }

    /// First radial derivative.
    pub fn derivative(&self, r: f64) -> f64 {
        self.terms
            .iter()
            .filter(|t| t.exponent != 0.0)
            .map(|t| t.coef * t.exponent * rpow(r, t.exponent - 1.0))
            .sum()
    }

    /// Second radial derivative.
    pub fn second_derivative(&self, r: f64) -> f64 {
        self.terms
            .iter()
            .filter(|t| t.exponent != 0.0 && t.exponent != 1.0)
            .map(|t| t.coef * t.exponent * (t.exponent - 1.0) * rpow(r, t.exponent - 2.0))
            .sum()
    }

    /// Laplacian of `x -> phi(|x|)` in `dim` dimensions:
    /// `sum coef * k * (k + dim - 2) * r^(k-2)`.
    pub fn laplacian(&self, r: f64, dim: usize) -> f64 {
        let n = dim as f64;
        self.terms
            .iter()
            .filter(|t| t.exponent != 0.0 && t.exponent + n - 2.0 != 0.0)
            .map(|t| t.coef * t.exponent * (t.exponent + n - 2.0) * rpow(r, t.exponent - 2.0))
            .sum()
    }

    /// Radial derivative of the Laplacian.
    pub fn laplacian_derivative(&self, r: f64, dim: usize) -> f64 {
        let n = dim as f64;
        self.terms
            .iter()
            .filter(|t| t.exponent != 0.0 && t.exponent != 2.0 && t.exponent + n - 2.0 != 0.0)
            .map(|t| {
                let k = t.exponent;
                t.coef * k * (k + n - 2.0) * (k - 2.0) * rpow(r, k - 3.0)
            })
            .sum()
    }

    /// The term of highest degree.
    pub fn leading(&self) -> Option<PowerTerm> {
        self.terms
            .iter()
            .copied()
            .filter(|t| t.coef != 0.0)
            .max_by(|a, b| a.exponent.total_cmp(&b.exponent))
    }
}

/// A compiled closed-form expression in `x`, `y`, `r`.
#[derive(Clone, Debug)]
pub struct Expression {
    text: String,
    tree: Arc<Node<DefaultNumericTypes>>,
}

impl PartialEq for Expression {
    fn eq(&self, other: &Self) -> bool {
        self.text == other.text
    }
}

impl Expression {
    pub fn parse(text: &str) -> Result<Self> {
        let tree = evalexpr::build_operator_tree::<DefaultNumericTypes>(text)
            .map_err(|e| Error::Config(format!("cannot parse expression {text:?}: {e}")))?;
        for var in tree.iter_read_variable_identifiers() {
            if !matches!(var, "x" | "y" | "r") {
                return config(format!(
                    "expression {text:?} uses unknown variable {var:?} (allowed: x, y, r)"
                ));
            }
        }
        Ok(Self {
            text: text.to_owned(),
            tree: Arc::new(tree),
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// True if the expression only reads `r`.
    pub fn is_radial(&self) -> bool {
        self.tree.iter_read_variable_identifiers().all(|v| v == "r")
    }

    pub fn eval(&self, point: [f64; 2]) -> Result<f64> {
        let mut ctx = HashMapContext::<DefaultNumericTypes>::new();
        let r = point[0].hypot(point[1]);
        for (name, v) in [("x", point[0]), ("y", point[1]), ("r", r)] {
            ctx.set_value(name.into(), Value::Float(v))
                .map_err(|e| Error::Evaluation {
                    point,
                    reason: e.to_string(),
                })?;
        }
        let v = self
            .tree
            .eval_number_with_context(&ctx)
            .map_err(|e| Error::Evaluation {
                point,
                reason: format!("{}: {e}", self.text),
            })?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Evaluation {
                point,
                reason: format!("{} evaluates to {v}", self.text),
            })
        }
    }
}

/// Configuration form of a source term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "kebab-case")]
pub enum SourceSpec {
    /// `f(x) = a * |x|_eps^exponent + b` with `|x|_eps = sqrt(|x|^2 + eps^2)`.
    RadialPower {
        a: f64,
        exponent: f64,
        #[serde(default)]
        b: f64,
        #[serde(default)]
        smoothing: f64,
    },
    /// `f = lambda - Laplacian(phi) + |D phi|^m` for a radial polynomial `phi`.
    Manufactured {
        target: RadialPolynomial,
        lambda: f64,
    },
    /// Closed form for `f` and optionally for `|Df|`.
    Expression {
        f: String,
        #[serde(default)]
        df: Option<String>,
        #[serde(default)]
        lower_bound: Option<f64>,
    },
}

#[derive(Clone, Debug, PartialEq)]
enum SourceKind {
    RadialPower {
        a: f64,
        exponent: f64,
        b: f64,
        smoothing: f64,
    },
    Manufactured {
        target: RadialPolynomial,
        lambda: f64,
    },
    Expression {
        f: Expression,
        df: Option<Expression>,
    },
}

/// The source term `f`, ready for evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceTerm {
    kind: SourceKind,
    m: f64,
    dim: usize,
    offset: f64,
    lower_bound: Option<f64>,
}

impl SourceTerm {
    pub fn from_spec(spec: &SourceSpec, m: f64, dim: usize) -> Result<Self> {
        match spec {
            &SourceSpec::RadialPower {
                a,
                exponent,
                b,
                smoothing,
            } => Self::radial_power(a, exponent, b, smoothing, dim),
            SourceSpec::Manufactured { target, lambda } => {
                manufacture_source(target, *lambda, m, dim)
            }
            SourceSpec::Expression { f, df, lower_bound } => {
                let f = Expression::parse(f)?;
                let df = df.as_deref().map(Expression::parse).transpose()?;
                Ok(Self {
                    kind: SourceKind::Expression { f, df },
                    m,
                    dim,
                    offset: 0.0,
                    lower_bound: *lower_bound,
                })
            }
        }
    }

    /// `a * |x|^exponent + b`, with optional smoothing of `|x|` near the origin.
    pub fn radial_power(a: f64, exponent: f64, b: f64, smoothing: f64, dim: usize) -> Result<Self> {
        if !(a.is_finite() && exponent.is_finite() && b.is_finite() && smoothing.is_finite()) {
            return config("radial-power parameters must be finite");
        }
        if a < 0.0 {
            return config(format!(
                "radial-power coefficient a = {a} makes f unbounded below"
            ));
        }
        if exponent < 0.0 {
            return config(format!(
                "radial-power exponent must be >= 0, got {exponent}"
            ));
        }
        if smoothing < 0.0 {
            return config(format!("smoothing must be >= 0, got {smoothing}"));
        }
        Ok(Self {
            kind: SourceKind::RadialPower {
                a,
                exponent,
                b,
                smoothing,
            },
            m: f64::NAN,
            dim,
            offset: 0.0,
            lower_bound: Some(b + a * rpow(smoothing, exponent)),
        })
    }

    pub fn expression(f: &str, df: Option<&str>, dim: usize) -> Result<Self> {
        Self::from_spec(
            &SourceSpec::Expression {
                f: f.into(),
                df: df.map(Into::into),
                lower_bound: None,
            },
            f64::NAN,
            dim,
        )
    }

    /// `f + c`.
    pub fn shifted(&self, c: f64) -> Self {
        let mut s = self.clone();
        s.offset += c;
        s.lower_bound = s.lower_bound.map(|l| l + c);
        s
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The manufactured pair `(lambda, phi)` if this source was built from one.
    pub fn manufactured_pair(&self) -> Option<(f64, &RadialPolynomial)> {
        match &self.kind {
            SourceKind::Manufactured { target, lambda } => Some((lambda + self.offset, target)),
            _ => None,
        }
    }

    /// True when `f` depends on `|x|` only.
    pub fn is_radial(&self) -> bool {
        match &self.kind {
            SourceKind::Expression { f, .. } => f.is_radial(),
            _ => true,
        }
    }

    fn radial_core(&self, r: f64) -> Option<f64> {
        match &self.kind {
            &SourceKind::RadialPower {
                a,
                exponent,
                b,
                smoothing,
            } => {
                let re = if smoothing > 0.0 {
                    r.hypot(smoothing)
                } else {
                    r
                };
                Some(a * rpow(re, exponent) + b)
            }
            SourceKind::Manufactured { target, lambda } => {
                let g = target.derivative(r).abs();
                Some(lambda - target.laplacian(r, self.dim) + g.powf(self.m))
            }
            SourceKind::Expression { .. } => None,
        }
    }

    /// `f` as a function of the radius (radial sources only).
    pub fn radial_value(&self, r: f64) -> Result<f64> {
        if let Some(v) = self.radial_core(r) {
            return Ok(v + self.offset);
        }
        match &self.kind {
            SourceKind::Expression { f, .. } if f.is_radial() => {
                Ok(f.eval([r, 0.0])? + self.offset)
            }
            _ => config("source is not radial"),
        }
    }

    pub fn eval(&self, point: [f64; 2]) -> Result<f64> {
        let r = point[0].hypot(point[1]);
        let v = match &self.kind {
            SourceKind::Expression { f, .. } => f.eval(point)?,
            _ => self.radial_core(r).unwrap_or(f64::NAN),
        } + self.offset;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Evaluation {
                point,
                reason: format!("source evaluates to {v}"),
            })
        }
    }

    /// `|Df(x)|` when a closed form is available.
    pub fn gradient_norm(&self, point: [f64; 2]) -> Option<Result<f64>> {
        let r = point[0].hypot(point[1]);
        match &self.kind {
            &SourceKind::RadialPower {
                a,
                exponent,
                smoothing,
                ..
            } => {
                if exponent == 0.0 {
                    return Some(Ok(0.0));
                }
                let re = if smoothing > 0.0 {
                    r.hypot(smoothing)
                } else {
                    r
                };
                Some(Ok((a * exponent * rpow(re, exponent - 2.0) * r).abs()))
            }
            SourceKind::Manufactured { target, .. } => {
                let d1 = target.derivative(r);
                let d2 = target.second_derivative(r);
                let m = self.m;
                let ham = m * d1.abs().powf(m - 1.0) * d1.signum() * d2;
                Some(Ok((ham - target.laplacian_derivative(r, self.dim)).abs()))
            }
            SourceKind::Expression { df, .. } => df.as_ref().map(|e| e.eval(point).map(f64::abs)),
        }
    }

    /// `f` sampled on every node of `grid`.
    pub fn sample(&self, grid: &Grid) -> Result<GridField> {
        let values = (0..grid.len())
            .map(|k| self.eval(grid.point(k)))
            .collect::<Result<Vec<_>>>()?;
        GridField::new(*grid, values)
    }

    /// Analytic lower bound when known.
    pub fn lower_bound(&self) -> Option<f64> {
        self.lower_bound
    }

    /// Analytic lower bound, else the minimum over the nodes of `grid`.
    pub fn lower_bound_on(&self, grid: &Grid) -> Result<f64> {
        match self.lower_bound {
            Some(l) => Ok(l),
            None => Ok(self.sample(grid)?.min()),
        }
    }
}

/// Builds `f = lambda - Laplacian(phi) + |D phi|^m` for a radial polynomial
/// target `phi`, so that `(lambda, phi)` solves the ergodic problem exactly.
pub fn manufacture_source(
    target: &RadialPolynomial,
    lambda: f64,
    m: f64,
    dim: usize,
) -> Result<SourceTerm> {
    if !(m > 2.0) {
        return config(format!("exponent m must exceed 2, got {m}"));
    }
    if dim != 1 && dim != 2 {
        return config(format!("dimension must be 1 or 2, got {dim}"));
    }
    if !lambda.is_finite()
        || target
            .terms
            .iter()
            .any(|t| !t.coef.is_finite() || !t.exponent.is_finite())
    {
        return config("manufactured target coefficients must be finite");
    }
    for t in &target.terms {
        if t.coef != 0.0 && t.exponent != 0.0 && t.exponent < 2.0 {
            return Err(Error::Rejected(format!(
                "term {} r^{} is not twice differentiable at the origin",
                t.coef, t.exponent
            )));
        }
    }
    match target.leading() {
        Some(lead) if lead.exponent >= 2.0 && lead.coef > 0.0 => {}
        _ => {
            return Err(Error::Rejected(
                "target is not coercive: |D phi|^m cannot dominate the Laplacian at infinity, \
                 so the resulting f is not coercive"
                    .into(),
            ))
        }
    }
    Ok(SourceTerm {
        kind: SourceKind::Manufactured {
            target: target.clone(),
            lambda,
        },
        m,
        dim,
        offset: 0.0,
        lower_bound: None,
    })
}

/// Configuration form of the initial data.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "kebab-case")]
pub enum InitialSpec {
    #[default]
    Zero,
    /// `constant + sum coef * |x|^exponent`.
    Polynomial {
        terms: RadialPolynomial,
        #[serde(default)]
        constant: f64,
    },
    /// `amplitude * (exp(rate * |x|) - 1)`.
    ExponentialGrowth {
        amplitude: f64,
        rate: f64,
    },
    /// An ergodic potential plus a constant.
    ShiftedErgodic {
        #[serde(default)]
        shift: f64,
    },
    Expression {
        u0: String,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitialData {
    spec: InitialSpec,
    expr: Option<Expression>,
    offset: f64,
}

impl InitialData {
    pub fn new(spec: InitialSpec) -> Result<Self> {
        let expr = match &spec {
            InitialSpec::Expression { u0 } => Some(Expression::parse(u0)?),
            InitialSpec::ExponentialGrowth { amplitude, rate }
                if !(amplitude.is_finite() && rate.is_finite()) =>
            {
                return config("exponential-growth parameters must be finite")
            }
            _ => None,
        };
        Ok(Self {
            spec,
            expr,
            offset: 0.0,
        })
    }

    pub fn zero() -> Self {
        Self {
            spec: InitialSpec::Zero,
            expr: None,
            offset: 0.0,
        }
    }

    pub fn polynomial(terms: RadialPolynomial, constant: f64) -> Self {
        Self {
            spec: InitialSpec::Polynomial { terms, constant },
            expr: None,
            offset: 0.0,
        }
    }

    pub fn shifted_ergodic(shift: f64) -> Self {
        Self {
            spec: InitialSpec::ShiftedErgodic { shift },
            expr: None,
            offset: 0.0,
        }
    }

    pub fn spec(&self) -> &InitialSpec {
        &self.spec
    }

    /// `u0 + c`.
    pub fn shifted(&self, c: f64) -> Self {
        let mut s = self.clone();
        s.offset += c;
        s
    }

    /// Analytic lower bound when known.
    pub fn lower_bound(&self) -> Option<f64> {
        let base = match &self.spec {
            InitialSpec::Zero => Some(0.0),
            InitialSpec::Polynomial { terms, constant } => terms
                .terms
                .iter()
                .all(|t| t.coef >= 0.0)
                .then_some(*constant),
            InitialSpec::ExponentialGrowth { amplitude, rate } => {
                (*amplitude >= 0.0 && *rate >= 0.0).then_some(0.0)
            }
            _ => None,
        };
        base.map(|b| b + self.offset)
    }

    /// Samples `u0` on `grid`. The shifted-ergodic family needs the potential
    /// `phi` on the same grid.
    pub fn sample(&self, grid: &Grid, phi: Option<&GridField>) -> Result<GridField> {
        let values = match &self.spec {
            InitialSpec::ShiftedErgodic { shift } => {
                let phi = phi.ok_or_else(|| {
                    Error::Config("shifted-ergodic initial data needs an ergodic potential".into())
                })?;
                if phi.grid() != grid {
                    return config("ergodic potential lives on a different grid");
                }
                phi.values().iter().map(|v| v + shift).collect()
            }
            _ => (0..grid.len())
                .map(|k| self.eval_plain(grid.point(k)))
                .collect::<Result<Vec<_>>>()?,
        };
        GridField::new(
            *grid,
            values.into_iter().map(|v: f64| v + self.offset).collect(),
        )
    }

    fn eval_plain(&self, point: [f64; 2]) -> Result<f64> {
        let r = point[0].hypot(point[1]);
        match &self.spec {
            InitialSpec::Zero => Ok(0.0),
            InitialSpec::Polynomial { terms, constant } => Ok(constant + terms.value(r)),
            InitialSpec::ExponentialGrowth { amplitude, rate } => {
                Ok(amplitude * (rate * r).exp_m1())
            }
            InitialSpec::Expression { .. } => self.expr.as_ref().expect("parsed").eval(point),
            InitialSpec::ShiftedErgodic { .. } => unreachable!("handled by sample"),
        }
    }
}

/// The growth envelope: an increasing `env` with constants `alpha`, `phi0`,
/// `f0` controlling `f` from both sides.
#[derive(Clone, Debug, PartialEq)]
pub struct GrowthEnvelope {
    pub alpha: f64,
    pub phi0: f64,
    pub f0: f64,
    shape: Option<Expression>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeSpec {
    pub alpha: f64,
    pub phi0: f64,
    pub f0: f64,
    /// Expression in `r`; defaults to `r^alpha`.
    #[serde(default)]
    pub envelope: Option<String>,
}

impl GrowthEnvelope {
    /// Envelope `r -> r^alpha`.
    pub fn power(alpha: f64, phi0: f64, f0: f64) -> Result<Self> {
        Self::from_spec(&EnvelopeSpec {
            alpha,
            phi0,
            f0,
            envelope: None,
        })
    }

    pub fn from_spec(spec: &EnvelopeSpec) -> Result<Self> {
        for (name, v) in [("alpha", spec.alpha), ("phi0", spec.phi0), ("f0", spec.f0)] {
            if !(v > 0.0 && v.is_finite()) {
                return config(format!("envelope.{name} must be positive, got {v}"));
            }
        }
        let shape = spec
            .envelope
            .as_deref()
            .map(Expression::parse)
            .transpose()?;
        if let Some(e) = &shape {
            if !e.is_radial() {
                return config("envelope expression may only use r");
            }
        }
        Ok(Self {
            alpha: spec.alpha,
            phi0: spec.phi0,
            f0: spec.f0,
            shape,
        })
    }

    pub fn with_f0(&self, f0: f64) -> Self {
        Self { f0, ..self.clone() }
    }

    pub fn value(&self, r: f64) -> Result<f64> {
        match &self.shape {
            None => Ok(r.powf(self.alpha)),
            Some(e) => e.eval([r, 0.0]),
        }
    }
}

/// Outcome of the envelope check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub passed: bool,
    /// Largest signed violation over all samples and the three inequalities
    /// (negative means every inequality holds with room to spare).
    pub max_violation: f64,
    pub witness: [f64; 2],
    pub inequality: &'static str,
    pub samples: usize,
}

const H1_SLACK: f64 = 1e-12;

/// Sample radii: the origin, `per_decade` log-spaced radii per decade over
/// six decades below `radius`, and `per_decade` uniform radii.
fn envelope_radii(radius: f64, per_decade: usize) -> Vec<f64> {
    let decades = 6;
    let mut radii = vec![0.0];
    let n_log = per_decade * decades;
    for i in 0..=n_log {
        let e = -(decades as f64) + decades as f64 * i as f64 / n_log as f64;
        radii.push(radius * 10f64.powf(e));
    }
    for i in 1..=per_decade {
        radii.push(radius * i as f64 / per_decade as f64);
    }
    radii.sort_by(f64::total_cmp);
    radii.dedup();
    radii
}

/// Checks both growth-envelope inequalities on a dense sample of `B_R`:
/// `r^alpha / phi0 <= env(r)` and `env(r) / f0 - f0 <= f(x) <= f0 (env(r) + 1)`.
/// `samples` is the number of radii per decade.
pub fn validate_h1(
    source: &SourceTerm,
    env: &GrowthEnvelope,
    radius: f64,
    samples: usize,
) -> Result<ValidationReport> {
    if samples < 100 {
        return config(format!(
            "envelope check needs at least 100 samples, got {samples}"
        ));
    }
    if !(radius > 0.0) {
        return config(format!("radius must be positive, got {radius}"));
    }
    let radii = envelope_radii(radius, samples);
    let angles: Vec<[f64; 2]> = if source.dim() == 1 {
        vec![[1.0, 0.0], [-1.0, 0.0]]
    } else {
        (0..8)
            .map(|k| {
                let th = std::f64::consts::TAU * k as f64 / 8.0;
                [th.cos(), th.sin()]
            })
            .collect()
    };
    let mut worst = (f64::NEG_INFINITY, [0.0; 2], "");
    let mut prev: Option<(f64, f64)> = None;
    let mut count = 0;
    for &r in &radii {
        let e = env.value(r)?;
        if let Some((rp, ep)) = prev {
            if e < ep - H1_SLACK * ep.abs().max(1.0) {
                return Err(Error::Envelope {
                    r_before: rp,
                    r_after: r,
                    before: ep,
                    after: e,
                });
            }
        }
        prev = Some((r, e));
        let v0 = r.powf(env.alpha) / env.phi0 - e;
        if v0 > worst.0 {
            worst = (v0, [r, 0.0], "envelope lower bound");
        }
        for dir in &angles {
            let x = [r * dir[0], r * dir[1]];
            let f = source.eval(x).map_err(|e| match e {
                Error::Evaluation { point, reason } => {
                    Error::Config(format!("source not evaluable at {point:?}: {reason}"))
                }
                other => other,
            })?;
            count += 1;
            let lo = e / env.f0 - env.f0 - f;
            let hi = f - env.f0 * (e + 1.0);
            if lo > worst.0 {
                worst = (lo, x, "source lower bound");
            }
            if hi > worst.0 {
                worst = (hi, x, "source upper bound");
            }
        }
    }
    Ok(ValidationReport {
        passed: worst.0 <= H1_SLACK,
        max_violation: worst.0,
        witness: worst.1,
        inequality: worst.2,
        samples: count,
    })
}

/// A full problem instance.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSpec {
    pub m: f64,
    pub dim: usize,
    pub radius: f64,
    pub source: SourceTerm,
    pub initial: InitialData,
    pub envelope: Option<GrowthEnvelope>,
}

impl ProblemSpec {
    pub fn new(
        m: f64,
        dim: usize,
        radius: f64,
        source: SourceTerm,
        initial: InitialData,
    ) -> Result<Self> {
        if !(m > 2.0 && m.is_finite()) {
            return config(format!("exponent m must exceed 2, got {m}"));
        }
        if dim != 1 && dim != 2 {
            return config(format!("dimension must be 1 or 2, got {dim}"));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return config(format!("radius must be positive, got {radius}"));
        }
        if source.dim() != dim {
            return config(format!(
                "source built for dimension {} but problem has dimension {dim}",
                source.dim()
            ));
        }
        Ok(Self {
            m,
            dim,
            radius,
            source,
            initial,
            envelope: None,
        })
    }

    /// The manufactured problem `f = lambda - Laplacian(phi) + |D phi|^m`.
    pub fn manufactured(
        target: RadialPolynomial,
        lambda: f64,
        m: f64,
        dim: usize,
        radius: f64,
        initial: InitialData,
    ) -> Result<Self> {
        let source = manufacture_source(&target, lambda, m, dim)?;
        Self::new(m, dim, radius, source, initial)
    }

    pub fn with_envelope(mut self, env: GrowthEnvelope) -> Self {
        self.envelope = Some(env);
        self
    }

    pub fn with_radius(&self, radius: f64) -> Result<Self> {
        let mut p = self.clone();
        if !(radius > 0.0) {
            return config(format!("radius must be positive, got {radius}"));
        }
        p.radius = radius;
        Ok(p)
    }

    pub fn with_initial(&self, initial: InitialData) -> Self {
        Self {
            initial,
            ..self.clone()
        }
    }

    pub fn with_source(&self, source: SourceTerm) -> Self {
        Self {
            source,
            ..self.clone()
        }
    }

    /// Grid of spacing `h` on `[-R, R]^dim`.
    pub fn grid(&self, h: f64) -> Result<Grid> {
        Grid::new(self.dim, self.radius, h)
    }

    /// Initial data on `grid`. For the shifted-ergodic family the potential
    /// comes from `phi` or, failing that, from the manufactured target.
    pub fn initial_field(&self, grid: &Grid, phi: Option<&GridField>) -> Result<GridField> {
        if let (InitialSpec::ShiftedErgodic { .. }, None) = (self.initial.spec(), phi) {
            if let Some((_, target)) = self.source.manufactured_pair() {
                let target = target.clone();
                let field = GridField::from_fn(*grid, |p| target.value(p[0].hypot(p[1])))?;
                let field = field.shifted(-field.at(grid.nearest_node([0.0, 0.0])));
                return self.initial.sample(grid, Some(&field));
            }
        }
        self.initial.sample(grid, phi)
    }

    /// Checks the growth envelope with `samples` radii per decade.
    pub fn validate_h1(&self, samples: usize) -> Result<ValidationReport> {
        let env = self
            .envelope
            .as_ref()
            .ok_or_else(|| Error::Config("problem has no growth envelope".into()))?;
        validate_h1(&self.source, env, self.radius, samples)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn x2() -> RadialPolynomial {
        RadialPolynomial::monomial(1.0, 2.0)
    }

    #[test]
    fn manufactured_examples() {
        let f = manufacture_source(&x2(), 2.0, 3.0, 1).unwrap();
        for x in [-3.0, -0.5, 0.0, 1.0, 2.5] {
            assert_relative_eq!(
                f.eval([x, 0.0]).unwrap(),
                8.0 * f64::abs(x).powi(3),
                epsilon = 1e-12
            );
        }
        let f4 = manufacture_source(&RadialPolynomial::monomial(1.0, 4.0), 0.0, 3.0, 1).unwrap();
        for x in [-2.0f64, 0.3, 1.7] {
            let expect = 64.0 * x.abs().powi(9) - 12.0 * x * x;
            assert_relative_eq!(f4.eval([x, 0.0]).unwrap(), expect, max_relative = 1e-12);
        }
        let f0 = manufacture_source(&x2(), 0.0, 3.0, 1).unwrap();
        assert_relative_eq!(
            f0.eval([1.5, 0.0]).unwrap(),
            8.0 * 1.5f64.powi(3) - 2.0,
            epsilon = 1e-12
        );
        // in the plane the Laplacian of r^2 is 4
        let f2 = manufacture_source(&x2(), 4.0, 3.0, 2).unwrap();
        assert_relative_eq!(f2.eval([0.6, 0.8]).unwrap(), 8.0, epsilon = 1e-12);
    }

    #[test]
    fn manufacture_rejects_bad_targets() {
        let linear = RadialPolynomial::monomial(1.0, 1.0);
        assert!(matches!(
            manufacture_source(&linear, 0.0, 3.0, 1),
            Err(Error::Rejected(_))
        ));
        let concave = RadialPolynomial::monomial(-1.0, 2.0);
        assert!(matches!(
            manufacture_source(&concave, 0.0, 3.0, 1),
            Err(Error::Rejected(_))
        ));
        let flat = RadialPolynomial::monomial(3.0, 0.0);
        assert!(matches!(
            manufacture_source(&flat, 0.0, 3.0, 1),
            Err(Error::Rejected(_))
        ));
        assert!(manufacture_source(&x2(), 0.0, 2.0, 1).is_err());
    }

    #[test]
    fn source_gradient_matches_finite_differences() {
        let sources = [
            manufacture_source(&x2(), 2.0, 3.0, 1).unwrap(),
            manufacture_source(&RadialPolynomial::monomial(1.0, 4.0), 0.0, 3.0, 1).unwrap(),
            manufacture_source(&x2(), 4.0, 3.0, 2).unwrap(),
            SourceTerm::radial_power(2.0, 3.0, 1.0, 0.0, 1).unwrap(),
        ];
        for s in &sources {
            for r in [0.4, 1.0, 2.3] {
                let h = 1e-6;
                let fd =
                    (s.radial_value(r + h).unwrap() - s.radial_value(r - h).unwrap()) / (2.0 * h);
                let g = s.gradient_norm([r, 0.0]).unwrap().unwrap();
                assert_relative_eq!(g, fd.abs(), max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn expression_source() {
        let s = SourceTerm::expression("8.0 * math::abs(x)^3 + y", None, 2).unwrap();
        assert_relative_eq!(s.eval([-1.0, 0.5]).unwrap(), 8.5);
        assert!(!s.is_radial());
        assert!(s.gradient_norm([0.0, 0.0]).is_none());
        assert!(SourceTerm::expression("z + 1", None, 1).is_err());
        let bad = SourceTerm::expression("math::ln(x)", None, 1).unwrap();
        assert!(matches!(
            bad.eval([-1.0, 0.0]),
            Err(Error::Evaluation { .. })
        ));
    }

    #[test]
    fn h1_examples() {
        let f = SourceTerm::radial_power(8.0, 3.0, 0.0, 0.0, 1).unwrap();
        let env = GrowthEnvelope::power(3.0, 1.0, 8.0).unwrap();
        assert!(validate_h1(&f, &env, 6.0, 200).unwrap().passed);

        let sin = SourceTerm::expression("math::sin(x)", None, 1).unwrap();
        let env1 = GrowthEnvelope::power(1.0, 1.0, 1.0).unwrap();
        let rep = validate_h1(&sin, &env1, 6.0, 200).unwrap();
        assert!(!rep.passed);
        assert_eq!(rep.inequality, "source lower bound");

        let sq = SourceTerm::radial_power(1.0, 2.0, 0.0, 0.0, 1).unwrap();
        let env2 = GrowthEnvelope::power(2.0, 1.0, 1.0).unwrap();
        assert!(validate_h1(&sq, &env2, 6.0, 200).unwrap().passed);

        assert!(validate_h1(&sq, &env2, 6.0, 10).is_err());
    }

    #[test]
    fn h1_detects_decreasing_envelope() {
        let sq = SourceTerm::radial_power(1.0, 2.0, 0.0, 0.0, 1).unwrap();
        let env = GrowthEnvelope::from_spec(&EnvelopeSpec {
            alpha: 1.0,
            phi0: 1.0,
            f0: 1.0,
            envelope: Some("math::sin(r)".into()),
        })
        .unwrap();
        assert!(matches!(
            validate_h1(&sq, &env, 6.0, 100),
            Err(Error::Envelope { .. })
        ));
    }

    #[test]
    fn h1_rejects_unevaluable_source() {
        let s = SourceTerm::expression("math::ln(r - 1.0)", None, 1).unwrap();
        let env = GrowthEnvelope::power(1.0, 1.0, 1.0).unwrap();
        assert!(matches!(
            validate_h1(&s, &env, 3.0, 100),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn problem_validation() {
        let f = SourceTerm::radial_power(1.0, 2.0, 0.0, 0.0, 1).unwrap();
        assert!(ProblemSpec::new(2.0, 1, 1.0, f.clone(), InitialData::zero()).is_err());
        assert!(ProblemSpec::new(3.0, 3, 1.0, f.clone(), InitialData::zero()).is_err());
        assert!(ProblemSpec::new(3.0, 1, 0.0, f.clone(), InitialData::zero()).is_err());
        assert!(ProblemSpec::new(3.0, 2, 1.0, f.clone(), InitialData::zero()).is_err());
        assert!(ProblemSpec::new(3.0, 1, 1.0, f, InitialData::zero()).is_ok());
    }

    #[test]
    fn initial_families() {
        let g = Grid::new(1, 2.0, 0.5).unwrap();
        let p = InitialData::polynomial(RadialPolynomial::monomial(1.0, 4.0), 1.0);
        let u = p.sample(&g, None).unwrap();
        assert_eq!(u.at(0), 17.0);
        assert_eq!(p.lower_bound(), Some(1.0));
        let e = InitialData::new(InitialSpec::ExponentialGrowth {
            amplitude: 1.0,
            rate: 1.0,
        })
        .unwrap();
        assert_relative_eq!(e.sample(&g, None).unwrap().at(0), 2f64.exp() - 1.0);
        let ex = InitialData::new(InitialSpec::Expression { u0: "x * x".into() }).unwrap();
        assert_eq!(ex.shifted(5.0).sample(&g, None).unwrap().at(0), 9.0);
        assert!(InitialData::shifted_ergodic(0.0).sample(&g, None).is_err());

        let prob =
            ProblemSpec::manufactured(x2(), 2.0, 3.0, 1, 2.0, InitialData::shifted_ergodic(1.0))
                .unwrap();
        let u0 = prob.initial_field(&g, None).unwrap();
        assert_eq!(u0.at(g.nearest_node([0.0, 0.0])), 1.0);
        assert_eq!(u0.at(0), 5.0);
    }

    #[test]
    fn spec_deserializes() {
        let s: SourceSpec = toml::from_str(
            r#"
            family = "manufactured"
            params = { lambda = 2.0, target = [{ coef = 1.0, exponent = 2.0 }] }
            "#,
        )
        .unwrap();
        let f = SourceTerm::from_spec(&s, 3.0, 1).unwrap();
        assert_relative_eq!(f.eval([1.0, 0.0]).unwrap(), 8.0);
        let z: InitialSpec = toml::from_str(r#"family = "zero""#).unwrap();
        assert_eq!(z, InitialSpec::Zero);
    }

    proptest! {
        #[test]
        fn h1_monotone_in_f0(f0 in 0.5..10.0f64, extra in 0.0..5.0f64, a in 0.5..10.0f64) {
            let f = SourceTerm::radial_power(a, 3.0, 0.0, 0.0, 1).unwrap();
            let env = GrowthEnvelope::power(3.0, 1.0, f0).unwrap();
            let rep = validate_h1(&f, &env, 4.0, 100).unwrap();
            if rep.passed {
                let rep2 = validate_h1(&f, &env.with_f0(f0 + extra), 4.0, 100).unwrap();
                prop_assert!(rep2.passed);
            }
        }

        #[test]
        fn manufactured_residual_is_second_order(c in 0.2..2.0f64, lambda in -3.0..3.0f64, x in 0.3..2.0f64) {
            // fourth-order differences of the manufactured pair reproduce f up to O(h^2)
            let target = RadialPolynomial::new(vec![PowerTerm::new(c, 2.0), PowerTerm::new(0.1, 4.0)]);
            let f = manufacture_source(&target, lambda, 3.0, 1).unwrap();
            let resid = |h: f64| {
                let p = |s: f64| target.value(s.abs());
                let lap = (p(x - h) - 2.0 * p(x) + p(x + h)) / (h * h);
                let grad = (p(x + h) - p(x - h)) / (2.0 * h);
                (lambda - lap + grad.abs().powi(3) - f.eval([x, 0.0]).unwrap()).abs()
            };
            let (r1, r2) = (resid(1e-2), resid(5e-3));
            prop_assert!(r2 <= r1 / 3.0 + 1e-9, "{} {}", r1, r2);
        }
    }
}
