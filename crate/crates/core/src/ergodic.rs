//! The ergodic pair `(λ, φ)` of `λ - Δφ + |Dφ|^m = f`, computed by
//! long-time evolution, by damped Newton iteration on the stationary
//! system, and (for radial sources) by shooting on the radial ODE.

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::grid::{one_sided, Grid, GridField};
use crate::linalg::BandedMatrix;
use crate::model::ProblemSpec;
use crate::ode::{integrate, Control, OdeOptions, Profile};
use crate::operator::DiscreteOperator;
use crate::scheme::{Ensemble, Member, SchemeConfig};

/// Iteration cap of the Newton route.
pub const NEWTON_MAX_ITERATIONS: usize = 200;
/// Step halvings tried by the Newton line search.
pub const NEWTON_MAX_HALVINGS: usize = 40;
/// A stalled iteration is accepted when its residual is within this factor
/// of [`rounding_floor`].
pub const NEWTON_FLOOR_FACTOR: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Route {
    Longtime,
    Newton,
    Radial,
    /// Sampled from a known closed-form pair.
    Exact,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErgodicPair {
    pub lambda: f64,
    /// Potential with `phi[x_ref] == 0`.
    pub phi: GridField,
    pub x_ref: usize,
    /// Sup-norm over interior nodes of the discrete residual.
    pub residual: f64,
    pub route: Route,
    /// Newton iterations, time steps, or bisection steps.
    pub iterations: usize,
}

/// Scalar record of an [`ErgodicPair`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    pub lambda: f64,
    pub residual: f64,
    pub route: Route,
    pub iterations: usize,
    pub x_ref: [f64; 2],
}

impl ErgodicPair {
    /// Normalizes `phi` at `x_ref`; the residual is left at zero until
    /// [`ErgodicPair::with_residual`] fills it.
    pub fn new(lambda: f64, phi: GridField, x_ref: usize, route: Route, iterations: usize) -> Self {
        let base = phi.at(x_ref);
        let mut phi = phi.shifted(-base);
        phi.values_mut()[x_ref] = 0.0;
        Self {
            lambda,
            phi,
            x_ref,
            residual: 0.0,
            route,
            iterations,
        }
    }

    /// The closed-form pair of a manufactured problem, sampled on `grid`.
    pub fn manufactured(problem: &ProblemSpec, grid: &Grid, x_ref: [f64; 2]) -> Result<Self> {
        let (lambda, target) = problem
            .source
            .manufactured_pair()
            .ok_or_else(|| Error::Config("problem has no manufactured pair".into()))?;
        let phi = GridField::from_fn(*grid, |p| target.value(p[0].hypot(p[1])))?;
        Ok(Self::new(
            lambda,
            phi,
            grid.nearest_node(x_ref),
            Route::Exact,
            0,
        ))
    }

    /// Sets `residual` to the interior sup-norm of `op`'s residual.
    pub fn with_residual(mut self, op: &DiscreteOperator) -> Self {
        self.residual = interior_residual(op, self.phi.values(), self.lambda);
        self
    }

    pub fn grid(&self) -> &Grid {
        self.phi.grid()
    }

    pub fn summary(&self) -> PairSummary {
        PairSummary {
            lambda: self.lambda,
            residual: self.residual,
            route: self.route,
            iterations: self.iterations,
            x_ref: self.grid().point(self.x_ref),
        }
    }
}

/// Sup-norm over non-boundary nodes of `λ - Δ_h φ + H_h(φ) - f`.
pub fn interior_residual(op: &DiscreteOperator, phi: &[f64], lambda: f64) -> f64 {
    let grid = op.grid();
    op.residual(phi, lambda)
        .iter()
        .enumerate()
        .filter(|(k, _)| !grid.is_boundary(*k))
        .map(|(_, r)| r.abs())
        .fold(0.0, f64::max)
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a: f64, x| a.max(x.abs()))
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Long-time route: evolves from the problem's initial data and reads `λ`
/// from the slope `(u(x_ref, t) - u(x_ref, t - δ)) / δ` between snapshots,
/// stopping once two successive slopes differ by less than `tol`.
pub fn solve_longtime(
    problem: &ProblemSpec,
    grid: &Grid,
    config: &SchemeConfig,
    tol: f64,
) -> Result<ErgodicPair> {
    let op = DiscreteOperator::new(problem, grid, config.boundary, config.flux)?;
    let u0 = problem.initial_field(grid, None)?;
    let x_ref = grid.nearest_node(config.x_ref);
    let mut prev = (0.0, u0.at(x_ref));
    let mut ensemble = Ensemble::new(vec![Member::new(problem, u0, config)?], config)?;
    let mut slopes: Vec<f64> = Vec::new();
    for t in config.schedule().into_iter().filter(|&t| t > 0.0) {
        ensemble.advance_to(t)?;
        let value = ensemble.values(0)[x_ref];
        let slope = (value - prev.1) / (t - prev.0);
        prev = (t, value);
        let settled = slopes.last().is_some_and(|s| (slope - s).abs() < tol);
        slopes.push(slope);
        if settled {
            let pair = ErgodicPair::new(
                slope,
                ensemble.field(0),
                x_ref,
                Route::Longtime,
                ensemble.steps(),
            );
            return Ok(pair.with_residual(&op));
        }
    }
    Err(Error::NonConvergence {
        reason: format!(
            "slope at the reference node has not settled to {tol} by t = {}",
            config.max_time
        ),
        history: slopes,
    })
}

/// Newton route: damped Newton iteration on `λ - Δ_h φ + H_h(φ) - f = 0`
/// at every node with `φ(x_ref) = 0`, the unknown `λ` taking the place of
/// `φ(x_ref)`. Starts from `init` or from `φ ≡ 0`, `λ = min f`.
/// Stops below `tol`, or when the iteration stalls within
/// [`NEWTON_FLOOR_FACTOR`] of the [`rounding_floor`]; the reported
/// residual tells the two apart.
pub fn solve_newton(
    problem: &ProblemSpec,
    grid: &Grid,
    config: &SchemeConfig,
    init: Option<&ErgodicPair>,
    tol: f64,
) -> Result<ErgodicPair> {
    let op = DiscreteOperator::new(problem, grid, config.boundary, config.flux)?;
    let x_ref = grid.nearest_node(config.x_ref);
    let (mut phi, mut lambda) = match init {
        Some(pair) => {
            if pair.grid() != grid {
                return crate::error::config("Newton initializer lives on a different grid");
            }
            (pair.phi.values().to_vec(), pair.lambda)
        }
        None => (
            vec![0.0; grid.len()],
            op.source().iter().copied().fold(f64::INFINITY, f64::min),
        ),
    };
    let base = phi[x_ref];
    phi.iter_mut().for_each(|v| *v -= base);

    let n = grid.len();
    let mut res = op.residual(&phi, lambda);
    let mut history = vec![sup(&res)];
    let mut border = vec![1.0; n];
    border[x_ref] = 0.0;
    for iteration in 0..=NEWTON_MAX_ITERATIONS {
        let norm = sup(&res);
        if norm < tol {
            let field = GridField::new(*grid, phi)?;
            let pair = ErgodicPair::new(lambda, field, x_ref, Route::Newton, iteration);
            return Ok(pair.with_residual(&op));
        }
        if iteration == NEWTON_MAX_ITERATIONS {
            break;
        }
        let step = newton_direction(op.jacobian(&phi), &res, &border, x_ref, norm)?;
        let merit = norm2(&res);
        let mut theta = 1.0;
        let mut accepted = false;
        let mut trial = vec![0.0; n];
        for _ in 0..=NEWTON_MAX_HALVINGS {
            for k in 0..n {
                trial[k] = if k == x_ref {
                    0.0
                } else {
                    phi[k] + theta * step[k]
                };
            }
            let trial_lambda = lambda + theta * step[x_ref];
            let trial_res = op.residual(&trial, trial_lambda);
            let trial_merit = norm2(&trial_res);
            if trial_merit.is_finite() && trial_merit <= (1.0 - 1e-4 * theta) * merit {
                std::mem::swap(&mut phi, &mut trial);
                lambda = trial_lambda;
                res = trial_res;
                accepted = true;
                break;
            }
            theta *= 0.5;
        }
        history.push(sup(&res));
        if !accepted {
            if norm <= NEWTON_FLOOR_FACTOR * rounding_floor(&op, &phi, lambda) {
                return stalled(&op, phi, lambda, x_ref, iteration);
            }
            return Err(Error::NonConvergence {
                reason: format!(
                    "line search failed at residual {norm:.3e}; try initializing from the long-time route"
                ),
                history,
            });
        }
    }
    if sup(&res) <= NEWTON_FLOOR_FACTOR * rounding_floor(&op, &phi, lambda) {
        return stalled(&op, phi, lambda, x_ref, NEWTON_MAX_ITERATIONS);
    }
    Err(Error::NonConvergence {
        reason: format!(
            "residual above {tol} after {NEWTON_MAX_ITERATIONS} iterations; try initializing from the long-time route"
        ),
        history,
    })
}

fn stalled(
    op: &DiscreteOperator,
    phi: Vec<f64>,
    lambda: f64,
    x_ref: usize,
    iterations: usize,
) -> Result<ErgodicPair> {
    let field = GridField::new(*op.grid(), phi)?;
    Ok(ErgodicPair::new(lambda, field, x_ref, Route::Newton, iterations).with_residual(op))
}

/// Size of the residual that rounding alone produces at `φ`: machine
/// epsilon times the largest nodal sensitivity of `λ - Δ_h φ + H_h(φ) - f`
/// to relative perturbations of its inputs.
pub fn rounding_floor(op: &DiscreteOperator, phi: &[f64], lambda: f64) -> f64 {
    let grid = op.grid();
    let h = grid.spacing();
    let m = op.exponent();
    let dim = grid.dim() as f64;
    let mut worst: f64 = 0.0;
    for k in 0..grid.len() {
        let mut slope: f64 = 0.0;
        for axis in 0..grid.dim() {
            let (minus, plus) = one_sided(phi, grid, k, axis);
            slope = slope
                .max(minus.unwrap_or(0.0).abs())
                .max(plus.unwrap_or(0.0).abs());
        }
        let scale = phi[k].abs();
        let sensitivity = op.source()[k].abs()
            + lambda.abs()
            + 4.0 * dim * scale / (h * h)
            + 2.0 * m * slope.powf(m - 1.0) * scale / h;
        worst = worst.max(sensitivity);
    }
    f64::EPSILON * worst
}

/// Solves the bordered Newton system. The column of `φ(x_ref)` is replaced
/// by the all-ones column of `λ`; a Levenberg shift proportional to the
/// residual keeps rows without active terms solvable.
fn newton_direction(
    mut jac: BandedMatrix,
    res: &[f64],
    border: &[f64],
    x_ref: usize,
    norm: f64,
) -> Result<Vec<f64>> {
    let n = res.len();
    let shift = norm.min(1.0);
    jac.clear_column(x_ref);
    jac.set(x_ref, x_ref, 1.0);
    for k in (0..n).filter(|&k| k != x_ref) {
        jac.add(k, k, shift);
    }
    // (A + u e_ref^T) z = -res with u = border, via Sherman-Morrison.
    let lu = jac.factor()?;
    let mut a: Vec<f64> = res.iter().map(|r| -r).collect();
    lu.solve(&mut a);
    let mut w = border.to_vec();
    lu.solve(&mut w);
    let denom = 1.0 + w[x_ref];
    if denom == 0.0 || !denom.is_finite() {
        return Err(Error::Integration("singular bordered Newton system".into()));
    }
    let c = a[x_ref] / denom;
    Ok(a.iter().zip(&w).map(|(ai, wi)| ai - c * wi).collect())
}

/// Radial solution profile from the shooting route.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialProfile {
    pub lambda: f64,
    pub dim: usize,
    /// `(r, φ(r), φ'(r), φ''(r))` with `φ(0) = 0`.
    pub profile: Profile,
    /// Bisection steps.
    pub iterations: usize,
}

impl RadialProfile {
    pub fn r_max(&self) -> f64 {
        self.profile.last()
    }

    /// `φ(r)`, or `None` beyond `r_max`.
    pub fn value(&self, r: f64) -> Option<f64> {
        if r < self.profile.first() {
            return (r >= 0.0).then_some(0.0);
        }
        self.profile.eval(r).map(|v| v.0)
    }

    pub fn derivative(&self, r: f64) -> Option<f64> {
        if r < self.profile.first() {
            return (r >= 0.0).then_some(0.0);
        }
        self.profile.eval(r).map(|v| v.1)
    }

    /// Samples `φ(|x|)` on `grid`, normalized at the node nearest `x_ref`.
    pub fn to_pair(&self, grid: &Grid, x_ref: [f64; 2]) -> Result<ErgodicPair> {
        let mut values = Vec::with_capacity(grid.len());
        for k in 0..grid.len() {
            let r = grid.norm(k);
            values.push(self.value(r).ok_or_else(|| {
                Error::Oracle(format!(
                    "grid reaches r = {r} beyond the profile (r_max = {})",
                    self.r_max()
                ))
            })?);
        }
        let phi = GridField::new(*grid, values)?;
        Ok(ErgodicPair::new(
            self.lambda,
            phi,
            grid.nearest_node(x_ref),
            Route::Radial,
            self.iterations,
        ))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Trial {
    /// `φ'` became negative: `λ` too small.
    Low,
    /// `φ'` blew up: `λ` too large.
    High,
}

struct RadialOde<'a> {
    problem: &'a ProblemSpec,
    dim: f64,
}

impl RadialOde<'_> {
    fn f(&self, r: f64) -> f64 {
        self.problem.source.radial_value(r).unwrap_or(f64::NAN)
    }

    fn rhs(&self, lambda: f64, r: f64, y: &[f64; 2]) -> [f64; 2] {
        let p = y[1];
        let m = self.problem.m;
        [
            p,
            lambda - self.f(r) + p.abs().powf(m) - (self.dim - 1.0) / r * p,
        ]
    }

    /// Root `p > 0` of `p^m - (N-1) p / r = f(r) - λ` (where `p' = 0`).
    fn quasi_steady(&self, lambda: f64, r: f64) -> f64 {
        let m = self.problem.m;
        let c = (self.dim - 1.0) / r;
        let target = self.f(r) - lambda;
        let g = |p: f64| p.powf(m) - c * p - target;
        let mut lo = c.powf(1.0 / (m - 1.0));
        let mut hi = lo + target.abs().powf(1.0 / m) + 1.0;
        while g(hi) < 0.0 {
            hi *= 2.0;
        }
        if g(lo) > 0.0 {
            lo = 0.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

const BLOW_UP: f64 = 1e8;

fn ode_options(r_max: f64) -> OdeOptions {
    OdeOptions {
        rtol: 1e-12,
        atol: 1e-14,
        first_step: 1e-9 * r_max,
        max_step: r_max / 2000.0,
        ..Default::default()
    }
}

/// Shoots from `ε` with `λ`; returns the classification, the radius where
/// it was decided, and the recorded profile.
fn shoot(ode: &RadialOde, lambda: f64, eps: f64, r_max: f64) -> Result<(Trial, Profile)> {
    let mut table = Profile::default();
    let mut verdict = None;
    let end = integrate(
        |r, y| ode.rhs(lambda, r, y),
        eps,
        [0.0, 0.0],
        r_max,
        &ode_options(r_max),
        |r, y, d| {
            table.push(r, y[0], y[1], d[1]);
            if y[1] < 0.0 && r > eps {
                verdict = Some(Trial::Low);
                Control::Stop
            } else if y[1] > BLOW_UP || !y[1].is_finite() {
                verdict = Some(Trial::High);
                Control::Stop
            } else {
                Control::Continue
            }
        },
    );
    let verdict = match (verdict, end) {
        (Some(v), _) => v,
        (None, Ok(end)) => {
            if end.y[1] > ode.quasi_steady(lambda, r_max) {
                Trial::High
            } else {
                Trial::Low
            }
        }
        // step underflow in front of a blow-up
        (None, Err(_)) => Trial::High,
    };
    Ok((verdict, table))
}

/// Radial shooting route for radial `f`: bisects on `λ` between profiles
/// whose slope turns negative and profiles that blow up, then assembles
/// the separatrix from the forward shot near the origin and a backward
/// (stable) integration from `r_max`.
pub fn radial_oracle(problem: &ProblemSpec, r_max: f64, tol: f64) -> Result<RadialProfile> {
    if !problem.source.is_radial() {
        return config("radial oracle needs a radial source");
    }
    if !(r_max > 0.0 && tol > 0.0) {
        return config("radial oracle needs r_max > 0 and tol > 0");
    }
    let ode = RadialOde {
        problem,
        dim: problem.dim as f64,
    };
    let eps = 1e-6 * r_max;
    let f0 = ode.f(0.0);
    if !f0.is_finite() {
        return Err(Error::Oracle("source is not finite at the origin".into()));
    }
    let classify = |lambda: f64| shoot(&ode, lambda, eps, r_max).map(|(t, _)| t);

    let mut lo = f0 - 1.0;
    let mut width = 1.0;
    let mut found = false;
    for _ in 0..64 {
        if classify(lo)? == Trial::Low {
            found = true;
            break;
        }
        width *= 2.0;
        lo = f0 - width;
    }
    let mut hi = f0 + 1.0;
    width = 1.0;
    let mut found_hi = false;
    for _ in 0..64 {
        if classify(hi)? == Trial::High {
            found_hi = true;
            break;
        }
        lo = lo.max(hi);
        width *= 2.0;
        hi = f0 + width;
    }
    if !(found && found_hi) {
        return Err(Error::Oracle("no bracket for the ergodic constant".into()));
    }
    let mut iterations = 0;
    while hi - lo > tol && iterations < 200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        match classify(mid)? {
            Trial::Low => lo = mid,
            Trial::High => hi = mid,
        }
        iterations += 1;
    }
    let lambda = 0.5 * (lo + hi);

    // forward branch: valid while the two bracketing shots agree
    let (_, low) = shoot(&ode, lo, eps, r_max)?;
    let (_, high) = shoot(&ode, hi, eps, r_max)?;
    let mut split = eps;
    for i in 0..low.len() {
        let r = low.x[i];
        match high.eval(r) {
            Some((_, p_high, _))
                if (p_high - low.dy[i]).abs() <= 1e-9 * (1.0 + low.dy[i].abs()) =>
            {
                split = r
            }
            _ => break,
        }
    }
    let junction = (0.9 * split).max(eps);

    // backward branch from the quasi-steady slope at r_max
    let p_end = ode.quasi_steady(lambda, r_max);
    let mut rows = Vec::new();
    integrate(
        |r, y| ode.rhs(lambda, r, y),
        r_max,
        [0.0, p_end],
        junction,
        &ode_options(r_max),
        |r, y, d| {
            rows.push([r, y[0], y[1], d[1]]);
            Control::Continue
        },
    )?;
    let backward = Profile::from_descending(rows);

    let mut profile = Profile::default();
    let forward_at = |r: f64| -> (f64, f64, f64) {
        let (a, b, c) = low.eval(r).expect("junction inside the forward shot");
        let (a2, b2, c2) = high.eval(r).expect("junction inside the forward shot");
        (0.5 * (a + a2), 0.5 * (b + b2), 0.5 * (c + c2))
    };
    for i in 0..low.len() {
        let r = low.x[i];
        if r >= junction {
            break;
        }
        let (v, p, dp) = forward_at(r);
        profile.push(r, v, p, dp);
    }
    let (v_join, _, _) = forward_at(junction);
    let offset = v_join - backward.y[0];
    for i in 0..backward.len() {
        profile.push(
            backward.x[i],
            backward.y[i] + offset,
            backward.dy[i],
            backward.ddy[i],
        );
    }
    Ok(RadialProfile {
        lambda,
        dim: problem.dim,
        profile,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{BoundaryPolicy, Flux};
    use crate::model::{InitialData, RadialPolynomial};

    fn quadratic_problem(lambda: f64) -> ProblemSpec {
        ProblemSpec::manufactured(
            RadialPolynomial::monomial(1.0, 2.0),
            lambda,
            3.0,
            1,
            6.0,
            InitialData::zero(),
        )
        .unwrap()
    }

    #[test]
    fn newton_from_exact_pair_converges_quickly() {
        let p = quadratic_problem(2.0);
        let grid = p.grid(0.05).unwrap();
        let cfg = SchemeConfig::new(1.0, 1.0)
            .with_flux(Flux::Hybrid)
            .with_boundary(BoundaryPolicy::OneSided);
        let exact = ErgodicPair::manufactured(&p, &grid, [0.0, 0.0]).unwrap();
        let pair = solve_newton(&p, &grid, &cfg, Some(&exact), 1e-9).unwrap();
        assert!(pair.iterations <= 3, "{} iterations", pair.iterations);
        assert_eq!(pair.phi.at(pair.x_ref), 0.0);
        assert!((pair.lambda - 2.0).abs() < 1e-2);
    }

    #[test]
    fn newton_stops_at_the_rounding_floor() {
        let p = ProblemSpec::manufactured(
            RadialPolynomial::monomial(1.0, 4.0),
            1.0,
            3.0,
            1,
            6.0,
            InitialData::zero(),
        )
        .unwrap();
        let grid = p.grid(0.02).unwrap();
        let cfg = SchemeConfig::new(1.0, 1.0)
            .with_flux(Flux::Hybrid)
            .with_boundary(BoundaryPolicy::OneSided);
        let pair = solve_newton(&p, &grid, &cfg, None, 1e-9).unwrap();
        let op = DiscreteOperator::new(&p, &grid, cfg.boundary, cfg.flux).unwrap();
        let floor = rounding_floor(&op, pair.phi.values(), pair.lambda);
        assert!(pair.residual > 1e-9 && pair.residual <= NEWTON_FLOOR_FACTOR * floor);
        assert!((pair.lambda - 1.0).abs() < 1e-3, "{}", pair.lambda);
    }

    #[test]
    fn newton_from_zero_and_shift_moves_lambda_only() {
        let p = quadratic_problem(2.0);
        let grid = p.grid(0.05).unwrap();
        let cfg = SchemeConfig::new(1.0, 1.0);
        let a = solve_newton(&p, &grid, &cfg, None, 1e-9).unwrap();
        let q = p.with_source(p.source.shifted(-2.0));
        let b = solve_newton(&q, &grid, &cfg, None, 1e-9).unwrap();
        assert!((b.lambda - (a.lambda - 2.0)).abs() < 1e-8);
        for k in 0..grid.len() {
            assert!((a.phi.at(k) - b.phi.at(k)).abs() < 1e-8);
        }
    }

    #[test]
    fn radial_oracle_recovers_manufactured_pairs() {
        let p = quadratic_problem(2.0);
        let prof = radial_oracle(&p, 6.0, 1e-12).unwrap();
        assert!((prof.lambda - 2.0).abs() < 1e-2, "lambda {}", prof.lambda);
        for i in 0..=60 {
            let r = i as f64 * 0.1;
            assert!((prof.value(r).unwrap() - r * r).abs() < 1e-4, "r = {r}");
        }
        let shifted = p.with_source(p.source.shifted(5.0));
        let prof = radial_oracle(&shifted, 6.0, 1e-12).unwrap();
        assert!((prof.lambda - 7.0).abs() < 1e-2);

        let p2 = ProblemSpec::manufactured(
            RadialPolynomial::monomial(1.0, 2.0),
            4.0,
            3.0,
            2,
            4.0,
            InitialData::zero(),
        )
        .unwrap();
        let prof = radial_oracle(&p2, 6.0, 1e-12).unwrap();
        assert!((prof.lambda - 4.0).abs() < 1e-2, "lambda {}", prof.lambda);
        assert!((prof.value(3.0).unwrap() - 9.0).abs() < 1e-3);
    }
}
