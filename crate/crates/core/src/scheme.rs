//! Monotone time stepping for the state-constraint problem on `[-R, R]^dim`.
//!
//! Interior nodes use centered second differences and the Godunov upwind
//! Hamiltonian; boundary nodes see only inward one-sided differences, and
//! the normal part of the Laplacian follows the configured
//! [`BoundaryPolicy`]. Several runs can be advanced in lockstep with a common
//! step sequence, which makes discrete comparisons between them exact.

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::grid::{BoundaryPolicy, Flux, Grid, GridField};
use crate::linalg::thomas;
use crate::model::ProblemSpec;
use crate::operator::{DiscreteOperator, LaplacianPart, SlopeBounds};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Explicit,
    /// Diffusion implicit (per-axis tridiagonal solves), Hamiltonian and
    /// source explicit.
    Imex,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum DtPolicy {
    Fixed { dt: f64 },
    Adaptive { safety: f64 },
}

impl Default for DtPolicy {
    fn default() -> Self {
        DtPolicy::Adaptive { safety: 0.9 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub dt: DtPolicy,
    /// Times at which the solution is recorded; `max_time` is always added.
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    pub max_time: f64,
    #[serde(default)]
    pub boundary: BoundaryPolicy,
    #[serde(default)]
    pub flux: Flux,
    /// Reference point for the slope series (snapped to the nearest node).
    #[serde(default)]
    pub x_ref: [f64; 2],
}

impl SchemeConfig {
    /// Explicit, adaptive steps with safety 0.9, snapshots every `interval`.
    pub fn new(max_time: f64, interval: f64) -> Self {
        let n = (max_time / interval).round().max(1.0) as usize;
        let snapshot_times = (0..=n).map(|i| max_time * i as f64 / n as f64).collect();
        Self {
            mode: Mode::Explicit,
            dt: DtPolicy::default(),
            snapshot_times,
            max_time,
            boundary: BoundaryPolicy::Drop,
            flux: Flux::Godunov,
            x_ref: [0.0, 0.0],
        }
    }

    pub fn with_flux(mut self, flux: Flux) -> Self {
        self.flux = flux;
        self
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_dt(mut self, dt: DtPolicy) -> Self {
        self.dt = dt;
        self
    }

    pub fn with_boundary(mut self, boundary: BoundaryPolicy) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn with_snapshots(mut self, times: Vec<f64>) -> Self {
        self.snapshot_times = times;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max_time > 0.0 && self.max_time.is_finite()) {
            return config(format!("max_time must be positive, got {}", self.max_time));
        }
        match self.dt {
            DtPolicy::Fixed { dt } if !(dt > 0.0 && dt.is_finite()) => {
                return config(format!("fixed dt must be positive, got {dt}"))
            }
            DtPolicy::Adaptive { safety } if !(safety > 0.0 && safety <= 1.0) => {
                return config(format!("safety factor must lie in (0, 1], got {safety}"))
            }
            _ => {}
        }
        let mut prev = f64::NEG_INFINITY;
        for &t in &self.snapshot_times {
            if !(0.0..=self.max_time).contains(&t) {
                return config(format!("snapshot time {t} outside [0, {}]", self.max_time));
            }
            if t <= prev {
                return config("snapshot times must be strictly increasing");
            }
            prev = t;
        }
        Ok(())
    }

    /// Snapshot times with `max_time` appended if missing.
    pub fn schedule(&self) -> Vec<f64> {
        let mut times = self.snapshot_times.clone();
        if times.last() != Some(&self.max_time) {
            times.push(self.max_time);
        }
        times
    }
}

/// Advances states of one problem on one grid.
#[derive(Clone, Debug)]
pub struct Stepper {
    op: DiscreteOperator,
    mode: Mode,
    rate: Vec<f64>,
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
    line: Vec<f64>,
    scratch: Vec<f64>,
}

impl Stepper {
    pub fn new(problem: &ProblemSpec, grid: &Grid, config: &SchemeConfig) -> Result<Self> {
        let op = DiscreteOperator::new(problem, grid, config.boundary, config.flux)?;
        let n = grid.per_axis();
        Ok(Self {
            op,
            mode: config.mode,
            rate: vec![0.0; grid.len()],
            lower: vec![0.0; n],
            diag: vec![0.0; n],
            upper: vec![0.0; n],
            line: vec![0.0; n],
            scratch: vec![0.0; n],
        })
    }

    pub fn grid(&self) -> &Grid {
        self.op.grid()
    }

    pub fn operator(&self) -> &DiscreteOperator {
        &self.op
    }

    /// Largest monotone step size under `bounds` for this stepper's mode.
    pub fn stable_dt(&self, bounds: SlopeBounds) -> f64 {
        self.op.stable_dt(bounds, self.mode == Mode::Explicit)
    }

    /// Fills the explicit rate and returns the slope bounds of `u`.
    fn compute_rate(&mut self, u: &[f64]) -> SlopeBounds {
        let part = match self.mode {
            Mode::Explicit => LaplacianPart::Full,
            Mode::Imex => LaplacianPart::BoundaryOnly,
        };
        self.op.rate(u, &mut self.rate, part)
    }

    /// Slope bounds of `u` (scratch evaluation of the operator).
    pub fn bounds(&mut self, u: &[f64]) -> SlopeBounds {
        self.compute_rate(u)
    }

    /// Backward-Euler diffusion along each axis in turn (boundary rows are
    /// identities: the normal second difference there is handled explicitly
    /// or dropped).
    fn implicit_diffusion(&mut self, u: &mut [f64], dt: f64) -> Result<()> {
        let grid = *self.op.grid();
        let n = grid.per_axis();
        let r = dt / (grid.spacing() * grid.spacing());
        for k in 0..n {
            if k == 0 || k + 1 == n {
                self.lower[k] = 0.0;
                self.diag[k] = 1.0;
                self.upper[k] = 0.0;
            } else {
                self.lower[k] = -r;
                self.diag[k] = 1.0 + 2.0 * r;
                self.upper[k] = -r;
            }
        }
        let lines = if grid.dim() == 1 { 1 } else { n };
        for axis in 0..grid.dim() {
            let stride = grid.stride(axis);
            let across = if axis == 0 { n } else { 1 };
            for l in 0..lines {
                let start = l * across;
                for i in 0..n {
                    self.line[i] = u[start + i * stride];
                }
                thomas(
                    &self.lower,
                    &self.diag,
                    &self.upper,
                    &mut self.line,
                    &mut self.scratch,
                )?;
                for i in 0..n {
                    u[start + i * stride] = self.line[i];
                }
            }
        }
        Ok(())
    }

    fn apply(&mut self, u: &mut [f64], dt: f64, time: f64) -> Result<()> {
        for (v, r) in u.iter_mut().zip(&self.rate) {
            *v += dt * r;
        }
        if self.mode == Mode::Imex {
            self.implicit_diffusion(u, dt)?;
        }
        if let Some(node) = u.iter().position(|v| !v.is_finite()) {
            return Err(Error::BlowUp {
                node,
                point: self.op.grid().point(node),
                time,
            });
        }
        Ok(())
    }

    /// Advances `u` by one step of size `dt` (no stability check).
    pub fn advance(&mut self, u: &mut [f64], dt: f64, time: f64) -> Result<()> {
        self.compute_rate(u);
        self.apply(u, dt, time)
    }
}

/// Largest upwind gradient magnitude of `u`.
pub fn max_upwind_slope(u: &GridField) -> f64 {
    let grid = u.grid();
    (0..grid.len())
        .map(|k| crate::grid::upwind_slope_sq(u.values(), grid, k))
        .fold(0.0, f64::max)
        .sqrt()
}

/// One step of the scheme. Fails with a configuration error if `dt` exceeds
/// the monotonicity bound at `u`.
pub fn step(
    u: &GridField,
    dt: f64,
    problem: &ProblemSpec,
    config: &SchemeConfig,
) -> Result<GridField> {
    let mut stepper = Stepper::new(problem, u.grid(), config)?;
    let bound = {
        let b = stepper.bounds(u.values());
        stepper.stable_dt(b)
    };
    if !(dt > 0.0) || dt > bound {
        return crate::error::config(format!(
            "time step {dt} violates the stability bound {bound}"
        ));
    }
    let mut values = u.values().to_vec();
    stepper.advance(&mut values, dt, 0.0)?;
    Ok(GridField::from_raw(*u.grid(), values))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub field: GridField,
}

/// Recorded solution history of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub grid: Grid,
    pub snapshots: Vec<Snapshot>,
    /// `(t, (u(x_ref, t) - u(x_ref, t - δ)) / δ)` between consecutive snapshots.
    pub slope_series: Vec<(f64, f64)>,
    pub x_ref: usize,
    pub steps: usize,
}

impl Trajectory {
    pub fn final_snapshot(&self) -> &Snapshot {
        self.snapshots
            .last()
            .expect("trajectory has at least one snapshot")
    }

    pub fn final_field(&self) -> &GridField {
        &self.final_snapshot().field
    }

    pub fn final_time(&self) -> f64 {
        self.final_snapshot().time
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.time).collect()
    }

    /// Appends a snapshot and extends the slope series.
    pub fn record(&mut self, time: f64, field: GridField) {
        if let Some(prev) = self.snapshots.last() {
            let slope = (field.at(self.x_ref) - prev.field.at(self.x_ref)) / (time - prev.time);
            self.slope_series.push((time, slope));
        }
        self.snapshots.push(Snapshot { time, field });
    }

    pub fn at(&self, time: f64) -> Option<&GridField> {
        self.snapshots
            .iter()
            .find(|s| (s.time - time).abs() <= 1e-12 * time.abs().max(1.0))
            .map(|s| &s.field)
    }
}

/// One member of a lockstep ensemble.
pub struct Member {
    pub stepper: Stepper,
    pub initial: GridField,
}

impl Member {
    pub fn new(problem: &ProblemSpec, initial: GridField, config: &SchemeConfig) -> Result<Self> {
        Ok(Self {
            stepper: Stepper::new(problem, initial.grid(), config)?,
            initial,
        })
    }
}

/// States advanced in lockstep: every member takes the same step sequence
/// (the smallest admissible step over the ensemble), which makes discrete
/// comparisons between members exact.
pub struct Ensemble {
    members: Vec<(Stepper, Vec<f64>)>,
    dt: DtPolicy,
    time: f64,
    steps: usize,
}

impl Ensemble {
    /// Fails if a fixed step exceeds the stability bound of some initial state.
    pub fn new(members: Vec<Member>, config: &SchemeConfig) -> Result<Self> {
        config.validate()?;
        let mut members: Vec<(Stepper, Vec<f64>)> = members
            .into_iter()
            .map(|m| (m.stepper, m.initial.into_values()))
            .collect();
        if let DtPolicy::Fixed { dt } = config.dt {
            for (stepper, u) in members.iter_mut() {
                let bounds = stepper.bounds(u);
                let bound = stepper.stable_dt(bounds);
                if dt > bound {
                    return crate::error::config(format!(
                        "fixed time step {dt} exceeds the stability bound {bound} of the initial data"
                    ));
                }
            }
        }
        Ok(Self {
            members,
            dt: config.dt,
            time: 0.0,
            steps: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn values(&self, member: usize) -> &[f64] {
        &self.members[member].1
    }

    pub fn field(&self, member: usize) -> GridField {
        let (stepper, u) = &self.members[member];
        GridField::from_raw(*stepper.grid(), u.clone())
    }

    /// Advances all members to exactly `target`.
    pub fn advance_to(&mut self, target: f64) -> Result<()> {
        while self.time < target {
            let mut bounds = SlopeBounds::default();
            for (stepper, u) in self.members.iter_mut() {
                bounds = bounds.merge(stepper.compute_rate(u));
            }
            let mut dt = match self.dt {
                DtPolicy::Fixed { dt } => dt,
                DtPolicy::Adaptive { safety } => {
                    safety
                        * self
                            .members
                            .iter()
                            .map(|(stepper, _)| stepper.stable_dt(bounds))
                            .fold(f64::INFINITY, f64::min)
                }
            };
            let remaining = target - self.time;
            let last = dt >= remaining * (1.0 - 1e-12);
            if last {
                dt = remaining;
            }
            let reached = if last { target } else { self.time + dt };
            for (stepper, u) in self.members.iter_mut() {
                stepper.apply(u, dt, reached)?;
            }
            self.time = reached;
            self.steps += 1;
        }
        Ok(())
    }
}

/// Advances every member in lockstep and records all of them at the
/// configured snapshot times.
pub fn solve_lockstep(members: Vec<Member>, config: &SchemeConfig) -> Result<Vec<Trajectory>> {
    let mut ensemble = Ensemble::new(members, config)?;
    let mut trajectories: Vec<Trajectory> = ensemble
        .members
        .iter()
        .map(|(stepper, _)| {
            let grid = *stepper.grid();
            Trajectory {
                grid,
                snapshots: Vec::new(),
                slope_series: Vec::new(),
                x_ref: grid.nearest_node(config.x_ref),
                steps: 0,
            }
        })
        .collect();
    for target in config.schedule() {
        ensemble.advance_to(target)?;
        for (i, traj) in trajectories.iter_mut().enumerate() {
            traj.record(target, ensemble.field(i));
        }
    }
    for traj in trajectories.iter_mut() {
        traj.steps = ensemble.steps();
    }
    Ok(trajectories)
}

/// Evolves from explicit initial values.
pub fn solve_from(
    problem: &ProblemSpec,
    initial: GridField,
    config: &SchemeConfig,
) -> Result<Trajectory> {
    let member = Member::new(problem, initial, config)?;
    Ok(solve_lockstep(vec![member], config)?.remove(0))
}

/// Solves the state-constraint problem on `grid` from the problem's initial data.
pub fn solve_state_constraint(
    problem: &ProblemSpec,
    grid: &Grid,
    config: &SchemeConfig,
) -> Result<Trajectory> {
    if (grid.radius() - problem.radius).abs() > 1e-12 * problem.radius {
        return crate::error::config(format!(
            "grid radius {} differs from problem radius {}",
            grid.radius(),
            problem.radius
        ));
    }
    let u0 = problem.initial_field(grid, None)?;
    solve_from(problem, u0, config)
}

/// `min(u0, cap + margin)` nodewise.
pub fn clip_above(u0: &GridField, cap: &GridField, margin: f64) -> Result<GridField> {
    if u0.grid() != cap.grid() {
        return crate::error::config("clipping field lives on a different grid");
    }
    let values = u0
        .values()
        .iter()
        .zip(cap.values())
        .map(|(u, c)| u.min(c + margin))
        .collect();
    GridField::new(*u0.grid(), values)
}

/// Outcome of a nested-radius run.
#[derive(Clone, Debug)]
pub struct NestedReport {
    pub radii: Vec<f64>,
    pub trajectories: Vec<Trajectory>,
    /// For each consecutive pair `(R, R')`: max over shared nodes and
    /// snapshot times of `u^{R'} - u^R`.
    pub violations: Vec<f64>,
    /// Max over snapshot times of the sup-difference between the two largest
    /// radii on the inner quarter `|x|_inf <= R/4` of the smaller one.
    pub inner_gap: f64,
}

impl NestedReport {
    pub fn max_violation(&self) -> f64 {
        self.violations
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Solves on each `B_R` (radii nondecreasing, common spacing `h`) in
/// lockstep and compares consecutive solutions on their shared nodes.
pub fn nested_limit(
    problem: &ProblemSpec,
    radii: &[f64],
    h: f64,
    config: &SchemeConfig,
) -> Result<NestedReport> {
    if radii.len() < 2 {
        return crate::error::config("nested comparison needs at least two radii");
    }
    if radii.windows(2).any(|w| w[1] < w[0]) {
        return crate::error::config("radii must be nondecreasing");
    }
    let mut members = Vec::with_capacity(radii.len());
    let mut grids = Vec::with_capacity(radii.len());
    for &r in radii {
        let p = problem.with_radius(r)?;
        let grid = p.grid(h)?;
        if let Some(prev) = grids.last() {
            if Grid::offset_in(prev, &grid).is_none() {
                return crate::error::config(format!(
                    "grid for radius {r} does not share nodes with the previous radius"
                ));
            }
        }
        let u0 = p.initial_field(&grid, None)?;
        members.push(Member::new(&p, u0, config)?);
        grids.push(grid);
    }
    let trajectories = solve_lockstep(members, config)?;
    let mut violations = Vec::new();
    for w in trajectories.windows(2) {
        let (small, large) = (&w[0], &w[1]);
        let offset = small.grid.offset_in(&large.grid).expect("checked above");
        let mut worst = f64::NEG_INFINITY;
        for (s, l) in small.snapshots.iter().zip(&large.snapshots) {
            for k in 0..small.grid.len() {
                let kl = small.grid.embed(k, &large.grid, offset);
                worst = worst.max(l.field.at(kl) - s.field.at(k));
            }
        }
        violations.push(worst);
    }
    let n = trajectories.len();
    let (small, large) = (&trajectories[n - 2], &trajectories[n - 1]);
    let offset = small.grid.offset_in(&large.grid).expect("checked above");
    let quarter = small.grid.radius() / 4.0 + 1e-12;
    let inner = small
        .grid
        .nodes_where(|p| p[0].abs() <= quarter && p[1].abs() <= quarter);
    let mut inner_gap: f64 = 0.0;
    for (s, l) in small.snapshots.iter().zip(&large.snapshots) {
        for &k in &inner {
            let kl = small.grid.embed(k, &large.grid, offset);
            inner_gap = inner_gap.max((l.field.at(kl) - s.field.at(k)).abs());
        }
    }
    Ok(NestedReport {
        radii: radii.to_vec(),
        trajectories,
        violations,
        inner_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InitialData, RadialPolynomial, SourceTerm};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn constant_source(c: f64, dim: usize, radius: f64) -> ProblemSpec {
        let f = SourceTerm::radial_power(0.0, 0.0, c, 0.0, dim).unwrap();
        ProblemSpec::new(3.0, dim, radius, f, InitialData::zero()).unwrap()
    }

    fn x2_problem(radius: f64) -> ProblemSpec {
        ProblemSpec::manufactured(
            RadialPolynomial::monomial(1.0, 2.0),
            2.0,
            3.0,
            1,
            radius,
            InitialData::zero(),
        )
        .unwrap()
    }

    #[test]
    fn constant_source_single_step() {
        for dim in [1, 2] {
            let p = constant_source(1.0, dim, 1.0);
            let g = p.grid(0.25).unwrap();
            let u = GridField::constant(g, 0.0);
            for mode in [Mode::Explicit, Mode::Imex] {
                let cfg = SchemeConfig::new(1.0, 1.0).with_mode(mode);
                let next = step(&u, 0.01, &p, &cfg).unwrap();
                assert!(next.values().iter().all(|v| (v - 0.01).abs() < 1e-15));
            }
        }
    }

    #[test]
    fn constants_are_stationary_without_source() {
        let p = constant_source(0.0, 1, 1.0);
        let g = p.grid(0.1).unwrap();
        let u = GridField::constant(g, 3.25);
        let next = step(&u, 1e-3, &p, &SchemeConfig::new(1.0, 1.0)).unwrap();
        assert_eq!(next, u);
    }

    #[test]
    fn step_rejects_unstable_dt() {
        let p = constant_source(0.0, 1, 1.0);
        let g = p.grid(0.1).unwrap();
        let u = GridField::constant(g, 0.0);
        assert!(matches!(
            step(&u, 0.1, &p, &SchemeConfig::new(1.0, 1.0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn manufactured_single_step_is_consistent() {
        // exact solution 2t + x^2; one step from x^2 must add 2 dt up to O(dt h)
        let p = x2_problem(6.0);
        for h in [0.02, 0.01] {
            let g = p.grid(h).unwrap();
            let u = GridField::from_fn(g, |x| x[0] * x[0]).unwrap();
            let mut stepper = Stepper::new(&p, &g, &SchemeConfig::new(1.0, 1.0)).unwrap();
            let dt = 0.5 * {
                let b = stepper.bounds(u.values());
                stepper.stable_dt(b)
            };
            let next = step(&u, dt, &p, &SchemeConfig::new(1.0, 1.0)).unwrap();
            let err = (0..g.len())
                .filter(|&k| g.coord(k).abs() <= 5.0)
                .map(|k| (next.at(k) - u.at(k) - 2.0 * dt).abs())
                .fold(0.0, f64::max);
            // the upwind error in |Du|^3 is 3 |2x|^2 h at worst
            assert!(
                err <= dt * 3.0 * 100.0 * h * 1.01,
                "h={h} err={err} dt={dt}"
            );
        }
    }

    #[test]
    fn constant_source_evolution() {
        let p = constant_source(1.0, 1, 4.0);
        let g = p.grid(0.1).unwrap();
        for mode in [Mode::Explicit, Mode::Imex] {
            let cfg = SchemeConfig::new(2.0, 0.5).with_mode(mode);
            let traj = solve_state_constraint(&p, &g, &cfg).unwrap();
            assert_eq!(traj.final_time(), 2.0);
            assert!(traj
                .final_field()
                .values()
                .iter()
                .all(|v| (v - 2.0).abs() < 1e-6));
            for &(_, s) in &traj.slope_series {
                assert_abs_diff_eq!(s, 1.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn manufactured_evolution_tracks_exact_solution() {
        let p = x2_problem(6.0).with_initial(InitialData::polynomial(
            RadialPolynomial::monomial(1.0, 2.0),
            0.0,
        ));
        let g = p.grid(0.01).unwrap();
        let cfg = SchemeConfig::new(1.0, 0.5).with_flux(Flux::Hybrid);
        let traj = solve_state_constraint(&p, &g, &cfg).unwrap();
        let centre = g.nearest_node([0.0, 0.0]);
        assert!((traj.final_field().at(centre) - 2.0).abs() <= 1e-2);
    }

    #[test]
    fn godunov_drift_error_is_first_order() {
        let p = x2_problem(3.0).with_initial(InitialData::polynomial(
            RadialPolynomial::monomial(1.0, 2.0),
            0.0,
        ));
        let drift = |h: f64| {
            let g = p.grid(h).unwrap();
            let traj = solve_state_constraint(&p, &g, &SchemeConfig::new(0.5, 0.5)).unwrap();
            traj.final_field().at(g.nearest_node([0.0, 0.0])) - 1.0
        };
        let (coarse, fine) = (drift(0.04), drift(0.02));
        assert!(coarse > 0.0 && fine > 0.0);
        let rate = (coarse / fine).log2();
        assert!((0.8..1.3).contains(&rate), "rate {rate}");
    }

    #[test]
    fn translation_in_u_is_exact() {
        let p = x2_problem(3.0);
        let g = p.grid(0.05).unwrap();
        let cfg = SchemeConfig::new(0.5, 0.1);
        let a = Member::new(&p, GridField::constant(g, 0.0), &cfg).unwrap();
        let b = Member::new(&p, GridField::constant(g, 5.0), &cfg).unwrap();
        let runs = solve_lockstep(vec![a, b], &cfg).unwrap();
        for (sa, sb) in runs[0].snapshots.iter().zip(&runs[1].snapshots) {
            for k in 0..g.len() {
                assert_abs_diff_eq!(sb.field.at(k) - sa.field.at(k), 5.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn fixed_dt_cfl_checked_before_stepping() {
        let p = x2_problem(3.0);
        let g = p.grid(0.05).unwrap();
        let cfg = SchemeConfig::new(0.1, 0.1).with_dt(DtPolicy::Fixed { dt: 0.01 });
        assert!(matches!(
            solve_state_constraint(&p, &g, &cfg),
            Err(Error::Config(_))
        ));
        let ok = SchemeConfig::new(0.1, 0.1).with_dt(DtPolicy::Fixed { dt: 2e-4 });
        assert!(solve_state_constraint(&p, &g, &ok).is_ok());
    }

    #[test]
    fn blow_up_is_reported() {
        let p = x2_problem(3.0);
        let g = p.grid(0.05).unwrap();
        let u0 = GridField::from_fn(g, |x| 1e3 * x[0].powi(2)).unwrap();
        let cfg = SchemeConfig::new(0.1, 0.1).with_dt(DtPolicy::Fixed { dt: 1e-3 });
        let err = solve_from(&p, u0, &cfg).unwrap_err();
        assert!(matches!(err, Error::Config(_) | Error::BlowUp { .. }));
        let mut stepper = Stepper::new(&p, &g, &cfg).unwrap();
        let mut u: Vec<f64> = (0..g.len()).map(|k| 1e3 * g.coord(k).powi(2)).collect();
        let mut res = Ok(());
        for i in 0..200 {
            res = stepper.advance(&mut u, 1e-3, i as f64 * 1e-3);
            if res.is_err() {
                break;
            }
        }
        assert!(matches!(res, Err(Error::BlowUp { .. })));
    }

    #[test]
    fn nested_identical_radii_have_zero_gap() {
        let p = x2_problem(2.0);
        let rep = nested_limit(&p, &[2.0, 2.0], 0.05, &SchemeConfig::new(0.2, 0.1)).unwrap();
        assert_eq!(rep.inner_gap, 0.0);
        assert_eq!(rep.max_violation(), 0.0);
    }

    #[test]
    fn nested_constant_source_is_radius_independent() {
        let p = constant_source(1.0, 1, 2.0);
        let rep = nested_limit(&p, &[2.0, 3.0, 4.0], 0.1, &SchemeConfig::new(1.0, 0.25)).unwrap();
        assert!(rep.inner_gap <= 1e-10);
        assert!(rep.max_violation() <= 1e-10);
    }

    #[test]
    fn nested_rejects_bad_radii() {
        let p = constant_source(1.0, 1, 2.0);
        let cfg = SchemeConfig::new(0.1, 0.1);
        assert!(nested_limit(&p, &[3.0, 2.0], 0.1, &cfg).is_err());
        assert!(nested_limit(&p, &[2.0, 2.05], 0.1, &cfg).is_err());
    }

    #[test]
    fn imex_two_dimensional_runs() {
        let p = ProblemSpec::manufactured(
            RadialPolynomial::monomial(1.0, 2.0),
            4.0,
            3.0,
            2,
            2.0,
            InitialData::zero(),
        )
        .unwrap();
        let g = p.grid(0.1).unwrap();
        let cfg = SchemeConfig::new(0.5, 0.25).with_mode(Mode::Imex);
        let traj = solve_state_constraint(&p, &g, &cfg).unwrap();
        let u = traj.final_field();
        // symmetric under x <-> y
        for i in 0..g.per_axis() {
            for j in 0..g.per_axis() {
                assert_abs_diff_eq!(u.at(g.node(i, j)), u.at(g.node(j, i)), epsilon = 1e-9);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn lockstep_runs_stay_ordered(
            a in 0.0..2.0f64, b in 0.0..2.0f64, c in 0.0..3.0f64, imex in any::<bool>(), hybrid in any::<bool>(),
        ) {
            let p = x2_problem(2.0);
            let g = p.grid(0.05).unwrap();
            let mode = if imex { Mode::Imex } else { Mode::Explicit };
            let mut cfg = SchemeConfig::new(0.3, 0.1).with_mode(mode);
            if hybrid {
                cfg = cfg.with_flux(Flux::Hybrid).with_boundary(BoundaryPolicy::OneSided);
            }
            let low = GridField::from_fn(g, |x| a * x[0] * x[0]).unwrap();
            let high = GridField::from_fn(g, |x| a * x[0] * x[0] + b * x[0].abs().powi(3) + c).unwrap();
            let runs = solve_lockstep(
                vec![Member::new(&p, low, &cfg).unwrap(), Member::new(&p, high, &cfg).unwrap()],
                &cfg,
            ).unwrap();
            for (sl, sh) in runs[0].snapshots.iter().zip(&runs[1].snapshots) {
                for k in 0..g.len() {
                    prop_assert!(sl.field.at(k) <= sh.field.at(k) + 1e-10);
                }
            }
        }

        #[test]
        fn shift_covariance(c1 in -2.0..2.0f64, c2 in -2.0..2.0f64) {
            let p = x2_problem(2.0);
            let g = p.grid(0.05).unwrap();
            let cfg = SchemeConfig::new(0.2, 0.1);
            let shifted = p.with_source(p.source.shifted(c1)).with_initial(p.initial.shifted(c2));
            let base = solve_state_constraint(&p, &g, &cfg).unwrap();
            let moved = solve_state_constraint(&shifted, &g, &cfg).unwrap();
            for (sb, sm) in base.snapshots.iter().zip(&moved.snapshots) {
                for k in 0..g.len() {
                    let expect = sb.field.at(k) + c1 * sb.time + c2;
                    prop_assert!((sm.field.at(k) - expect).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn nonnegative_data_stay_nonnegative(a in 0.0..3.0f64, b in 0.0..2.0f64) {
            let f = SourceTerm::radial_power(a, 2.0, b, 0.0, 1).unwrap();
            let p = ProblemSpec::new(3.0, 1, 2.0, f, InitialData::zero()).unwrap();
            let g = p.grid(0.05).unwrap();
            let traj = solve_state_constraint(&p, &g, &SchemeConfig::new(0.3, 0.1)).unwrap();
            for s in &traj.snapshots {
                prop_assert!(s.field.min() >= 0.0);
            }
        }
    }
}
