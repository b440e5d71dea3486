//! Order preservation of the discrete evolution.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::{InitialData, ProblemSpec};
use crate::report::InequalityReport;
use crate::scheme::{solve_lockstep, Member, SchemeConfig};

/// Tolerance on `u_low - u_high`.
pub const ORDERING_TOLERANCE: f64 = 1e-10;

/// Runs both initial data in lockstep and reports `max (u_low - u_high)`
/// over nodes and snapshots. Witness: `(x, y, t)`.
pub fn ordering_check(
    problem: &ProblemSpec,
    low: &InitialData,
    high: &InitialData,
    grid: &Grid,
    config: &SchemeConfig,
) -> Result<InequalityReport> {
    let u_low = low.sample(grid, None)?;
    let u_high = high.sample(grid, None)?;
    for k in 0..grid.len() {
        let excess = u_low.at(k) - u_high.at(k);
        if excess > 0.0 {
            return Err(Error::Unordered {
                node: k,
                point: grid.point(k),
                excess,
            });
        }
    }
    let members = vec![
        Member::new(problem, u_low, config)?,
        Member::new(problem, u_high, config)?,
    ];
    let runs = solve_lockstep(members, config)?;
    let mut report = InequalityReport::new("u_low <= u_high", ORDERING_TOLERANCE);
    for (a, b) in runs[0].snapshots.iter().zip(&runs[1].snapshots) {
        for k in 0..grid.len() {
            let p = grid.point(k);
            report.record(a.field.at(k) - b.field.at(k), &[p[0], p[1], a.time]);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RadialPolynomial;

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
    fn translation_keeps_constant_gap() {
        let p = problem();
        let grid = p.grid(0.05).unwrap();
        let cfg = SchemeConfig::new(0.5, 0.1);
        let shifted = InitialData::zero().shifted(5.0);
        let r = ordering_check(&p, &InitialData::zero(), &shifted, &grid, &cfg).unwrap();
        assert!((r.max_violation + 5.0).abs() < 1e-9, "{r:?}");
        let same =
            ordering_check(&p, &InitialData::zero(), &InitialData::zero(), &grid, &cfg).unwrap();
        assert_eq!(same.max_violation, 0.0);
    }

    #[test]
    fn rejects_unordered_data() {
        let p = problem();
        let grid = p.grid(0.05).unwrap();
        let cfg = SchemeConfig::new(0.5, 0.1);
        let err = ordering_check(
            &p,
            &InitialData::zero().shifted(1.0),
            &InitialData::zero(),
            &grid,
            &cfg,
        );
        assert!(matches!(err, Err(Error::Unordered { .. })));
    }
}
