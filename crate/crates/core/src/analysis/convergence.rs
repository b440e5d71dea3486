//! `u(x,t) - λt → φ(x) + ĉ` on compact sets.

use serde::{Deserialize, Serialize};

use crate::barriers::BarrierAssembly;
use crate::ergodic::ErgodicPair;
use crate::error::{config, Result};
use crate::grid::Grid;
use crate::report::InequalityReport;
use crate::scheme::Trajectory;

/// Axis-aligned box `lo <= x <= hi` (only the first `dim` axes matter).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Compact {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl Compact {
    /// `[-a, a]^dim`.
    pub fn centered(a: f64) -> Self {
        Self {
            lo: [-a, -a],
            hi: [a, a],
        }
    }

    /// Nodes of `grid` in the box; the box must lie strictly inside the grid.
    pub fn nodes(&self, grid: &Grid) -> Result<Vec<usize>> {
        let r = grid.radius();
        let eps = 1e-9 * grid.spacing();
        for a in 0..grid.dim() {
            if !(self.lo[a] > -r && self.hi[a] < r && self.lo[a] <= self.hi[a]) {
                return config(format!(
                    "compact set [{}, {}] on axis {a} is not strictly inside [-{r}, {r}]",
                    self.lo[a], self.hi[a]
                ));
            }
        }
        let dim = grid.dim();
        Ok(grid.nodes_where(|p| {
            (0..dim).all(|a| p[a] >= self.lo[a] - eps && p[a] <= self.hi[a] + eps)
        }))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceOptions {
    /// Bound on `sup_t |ĉ(t)| + spread(t)` for the boundedness verdict.
    pub ceiling: f64,
    /// Terminal spread tolerance.
    pub spread_tol: f64,
    /// Allowed increase between consecutive tail samples of the spread
    /// (rounding floor of a converged run).
    pub monotone_slack: f64,
    /// Additive margin in the slope verdict.
    pub slope_margin: f64,
    /// Tail fraction of the run over which the spread must not increase.
    pub tail_fraction: f64,
}

impl Default for ConvergenceOptions {
    fn default() -> Self {
        Self {
            ceiling: 1e6,
            spread_tol: 0.02,
            monotone_slack: 1e-10,
            slope_margin: 0.1,
            tail_fraction: 0.25,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdicts {
    pub bounded: bool,
    pub converged: bool,
    pub slope: bool,
}

impl Verdicts {
    pub fn all(&self) -> bool {
        self.bounded && self.converged && self.slope
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub compact: Compact,
    pub nodes: usize,
    pub lambda: f64,
    pub times: Vec<f64>,
    /// Mean over the compact nodes of `u(·,t) - λt - φ`.
    pub c_hat_series: Vec<f64>,
    /// Max minus min over the compact nodes of the same quantity.
    pub spread_series: Vec<f64>,
    /// `u(x_ref, t) / t` (absent at `t = 0`).
    pub lambda_slope_series: Vec<Option<f64>>,
    /// `inf_{s >= t} ĉ(s)` and `sup_{s >= t} ĉ(s)` over the recorded times.
    pub c_hat_lower: Vec<f64>,
    pub c_hat_upper: Vec<f64>,
    pub spread_final: f64,
    pub c_hat_final: f64,
    pub slope_final: f64,
    /// `(|φ(x_ref)| + |ĉ(T)| + margin) / T`.
    pub slope_bound: f64,
    /// Largest increase of the spread between consecutive tail samples.
    pub tail_increase: f64,
    pub verdicts: Verdicts,
}

/// Series and verdicts of `u - λt - φ` over the compact set `compact`.
pub fn convergence_metric(
    trajectory: &Trajectory,
    pair: &ErgodicPair,
    compact: &Compact,
    options: &ConvergenceOptions,
) -> Result<ConvergenceReport> {
    if trajectory.grid != *pair.grid() {
        return config("trajectory and ergodic pair live on different grids");
    }
    let nodes = compact.nodes(&trajectory.grid)?;
    if nodes.is_empty() {
        return config("compact set contains no grid nodes");
    }
    let lambda = pair.lambda;
    let phi = pair.phi.values();
    let x_ref = trajectory.x_ref;
    let mut times = Vec::new();
    let mut c_hat_series = Vec::new();
    let mut spread_series = Vec::new();
    let mut lambda_slope_series = Vec::new();
    for snap in &trajectory.snapshots {
        let t = snap.time;
        let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for &k in &nodes {
            let d = snap.field.at(k) - lambda * t - phi[k];
            lo = lo.min(d);
            hi = hi.max(d);
            sum += d;
        }
        times.push(t);
        c_hat_series.push(sum / nodes.len() as f64);
        spread_series.push(hi - lo);
        lambda_slope_series.push((t > 0.0).then(|| snap.field.at(x_ref) / t));
    }
    let n = times.len();
    let mut c_hat_lower = c_hat_series.clone();
    let mut c_hat_upper = c_hat_series.clone();
    for i in (0..n.saturating_sub(1)).rev() {
        c_hat_lower[i] = c_hat_lower[i].min(c_hat_lower[i + 1]);
        c_hat_upper[i] = c_hat_upper[i].max(c_hat_upper[i + 1]);
    }

    let t_final = times[n - 1];
    let spread_final = spread_series[n - 1];
    let c_hat_final = c_hat_series[n - 1];
    let bounded = c_hat_series
        .iter()
        .zip(&spread_series)
        .all(|(c, s)| (c.abs() + s).is_finite() && c.abs() + s < options.ceiling);
    let tail_start = t_final * (1.0 - options.tail_fraction);
    let tail: Vec<f64> = times
        .iter()
        .zip(&spread_series)
        .filter(|(t, _)| **t >= tail_start - 1e-12 * t_final)
        .map(|(_, s)| *s)
        .collect();
    let tail_increase = tail
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let converged = spread_final < options.spread_tol
        && (tail.len() < 2 || tail_increase <= options.monotone_slack);
    let slope_final = trajectory.final_field().at(x_ref) / t_final;
    let slope_bound = (phi[x_ref].abs() + c_hat_final.abs() + options.slope_margin) / t_final;
    let slope = t_final > 0.0 && (slope_final - lambda).abs() <= slope_bound;
    Ok(ConvergenceReport {
        compact: *compact,
        nodes: nodes.len(),
        lambda,
        times,
        c_hat_series,
        spread_series,
        lambda_slope_series,
        c_hat_lower,
        c_hat_upper,
        spread_final,
        c_hat_final,
        slope_final,
        slope_bound,
        tail_increase,
        verdicts: Verdicts {
            bounded,
            converged,
            slope,
        },
    })
}

/// `U - M <= u - λt <= V + C` with `C` and `M` calibrated at `t = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    /// `max_{Q_0} (u_0 - V(·, 0))`.
    pub upper_constant: f64,
    /// `max (U(·, 0) - u_0)`.
    pub lower_constant: f64,
    /// `u - λt - V - C` over nodes of `Q`.
    pub upper: InequalityReport,
    /// `U - M - (u - λt)` over all nodes.
    pub lower: InequalityReport,
}

impl SandwichReport {
    pub fn passed(&self) -> bool {
        self.upper.passed() && self.lower.passed()
    }
}

/// Checks the barrier sandwich at every node and snapshot of `trajectory`.
/// `upper` and `lower` must be super and sub assemblies on a pair sharing
/// the trajectory's grid.
pub fn sandwich_check(
    trajectory: &Trajectory,
    upper: &BarrierAssembly,
    lower: &BarrierAssembly,
    tolerance: f64,
) -> Result<SandwichReport> {
    if !upper.kind.is_super() || lower.kind.is_super() {
        return config("sandwich needs a super assembly above and a sub assembly below");
    }
    let grid = trajectory.grid;
    if *upper.pair.grid() != grid || *lower.pair.grid() != grid {
        return config("barriers and trajectory live on different grids");
    }
    let lambda = upper.pair.lambda;
    let first = &trajectory.snapshots[0];
    if first.time != 0.0 {
        return config("trajectory must start with the t = 0 snapshot");
    }
    let phi_up = upper.pair.phi.values();
    let phi_low = lower.pair.phi.values();
    let (up0, low0) = (upper.time_term(0.0)?, lower.time_term(0.0)?);
    let mut upper_constant = f64::NEG_INFINITY;
    let mut lower_constant = f64::NEG_INFINITY;
    for k in 0..grid.len() {
        let v = upper.profile_value(phi_up[k], 0.0, up0);
        if v.is_finite() {
            upper_constant = upper_constant.max(first.field.at(k) - v);
        }
        lower_constant =
            lower_constant.max(lower.profile_value(phi_low[k], 0.0, low0) - first.field.at(k));
    }
    if !upper_constant.is_finite() {
        return config("Q_0 contains no grid nodes");
    }
    let mut up = InequalityReport::new("u - λt <= V + C", tolerance);
    let mut down = InequalityReport::new("U - M <= u - λt", tolerance);
    for snap in &trajectory.snapshots {
        let t = snap.time;
        let (ut, lt) = (upper.time_term(t)?, lower.time_term(t)?);
        for k in 0..grid.len() {
            let w = snap.field.at(k) - lambda * t;
            let p = grid.point(k);
            let v = upper.profile_value(phi_up[k], t, ut);
            if v.is_finite() {
                up.record(w - v - upper_constant, &[p[0], p[1], t]);
            }
            let u = lower.profile_value(phi_low[k], t, lt);
            down.record(u - lower_constant - w, &[p[0], p[1], t]);
        }
    }
    Ok(SandwichReport {
        upper_constant,
        lower_constant,
        upper: up,
        lower: down,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ergodic::ErgodicPair;
    use crate::grid::{BoundaryPolicy, Flux};
    use crate::model::{InitialData, ProblemSpec, RadialPolynomial};
    use crate::scheme::{solve_from, SchemeConfig};

    fn problem() -> ProblemSpec {
        ProblemSpec::manufactured(
            RadialPolynomial::monomial(1.0, 2.0),
            2.0,
            3.0,
            1,
            3.0,
            InitialData::zero(),
        )
        .unwrap()
    }

    #[test]
    fn exact_drift_has_zero_c_hat() {
        // u = λt + φ solves the scheme up to its truncation error
        let p = problem();
        let grid = p.grid(0.05).unwrap();
        let pair = ErgodicPair::manufactured(&p, &grid, [0.0, 0.0]).unwrap();
        let cfg = SchemeConfig::new(1.0, 0.25)
            .with_flux(Flux::Hybrid)
            .with_boundary(BoundaryPolicy::OneSided);
        let traj = solve_from(&p, pair.phi.clone(), &cfg).unwrap();
        let r =
            convergence_metric(&traj, &pair, &Compact::centered(1.5), &Default::default()).unwrap();
        assert_eq!(r.times.len(), r.spread_series.len());
        assert_eq!(r.lambda_slope_series[0], None);
        for (c, s) in r.c_hat_series.iter().zip(&r.spread_series) {
            assert!(c.abs() < 0.05 && *s >= 0.0 && *s < 0.05, "{c} {s}");
        }
        assert!(r.verdicts.bounded && r.verdicts.slope);
    }

    #[test]
    fn envelopes_bracket_c_hat() {
        let p = problem();
        let grid = p.grid(0.05).unwrap();
        let pair = ErgodicPair::manufactured(&p, &grid, [0.0, 0.0]).unwrap();
        let cfg = SchemeConfig::new(2.0, 0.25);
        let traj = solve_from(&p, p.initial_field(&grid, None).unwrap(), &cfg).unwrap();
        let r =
            convergence_metric(&traj, &pair, &Compact::centered(1.0), &Default::default()).unwrap();
        for i in 0..r.times.len() {
            assert!(r.c_hat_lower[i] <= r.c_hat_series[i] && r.c_hat_series[i] <= r.c_hat_upper[i]);
        }
    }

    #[test]
    fn rejects_mismatched_grids_and_wide_sets() {
        let p = problem();
        let grid = p.grid(0.05).unwrap();
        let other = p.grid(0.1).unwrap();
        let pair = ErgodicPair::manufactured(&p, &other, [0.0, 0.0]).unwrap();
        let traj = solve_from(
            &p,
            p.initial_field(&grid, None).unwrap(),
            &SchemeConfig::new(0.1, 0.1),
        )
        .unwrap();
        assert!(
            convergence_metric(&traj, &pair, &Compact::centered(1.0), &Default::default()).is_err()
        );
        let pair = ErgodicPair::manufactured(&p, &grid, [0.0, 0.0]).unwrap();
        assert!(
            convergence_metric(&traj, &pair, &Compact::centered(3.0), &Default::default()).is_err()
        );
    }
}
