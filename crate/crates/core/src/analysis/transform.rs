//! Inequalities of the exponentially transformed operator
//! `N(x, r, p) = r (f(x) + |p/r|^2 - |p/r|^m)` used by the comparison
//! argument, sampled over `r = -e^{-u} ∈ (-1, 0)` and `q = p/r`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::report::InequalityReport;

/// One sample of the transformed operator (one space dimension).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformPoint {
    pub r: f64,
    pub p: f64,
    pub f_value: f64,
}

impl TransformPoint {
    pub fn q(&self) -> f64 {
        self.p / self.r
    }

    /// `N(r, p)`.
    pub fn n(&self, m: f64) -> f64 {
        self.r * self.f_value + self.gradient_part(m)
    }

    /// `N - r f = p^2/r + |p|^m (-r)^(1-m)`.
    fn gradient_part(&self, m: f64) -> f64 {
        let (r, p) = (self.r, self.p);
        p * p / r + p.abs().powf(m) * (-r).powf(1.0 - m)
    }

    /// `∂N/∂r = f - |q|^2 + (m-1)|q|^m`.
    pub fn dn_dr(&self, m: f64) -> f64 {
        let q = self.q().abs();
        self.f_value - q * q + (m - 1.0) * q.powf(m)
    }

    /// `∂N/∂p = 2q - m |q|^(m-2) q`.
    pub fn dn_dp(&self, m: f64) -> f64 {
        let q = self.q();
        2.0 * q - m * q.abs().powf(m - 2.0) * q
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformReport {
    pub m: f64,
    pub c: f64,
    pub samples: usize,
    pub seed: u64,
    /// `∂N/∂r >= 1 + C|q|^m` (relative violation).
    pub coercivity: InequalityReport,
    /// `|∂N/∂p| <= (1 + 2m/C) ∂N/∂r` (relative violation).
    pub domination: InequalityReport,
    /// `|q|^2 <= (2/m)|q|^m + m/(m-2)` (relative violation).
    pub young: InequalityReport,
    /// Analytic partials against central differences of `N`, relative to
    /// the magnitude of their terms.
    pub finite_difference: InequalityReport,
    /// Largest relative gap between the differences and the variant of
    /// `∂N/∂p` with factor `m(m-2)` in place of `m`; large values show the
    /// variant is not the derivative of `N`.
    pub variant_gap: f64,
}

impl TransformReport {
    pub fn passed(&self) -> bool {
        self.coercivity.passed()
            && self.domination.passed()
            && self.young.passed()
            && self.finite_difference.passed()
    }
}

/// Relative tolerance of the inequalities.
pub const TRANSFORM_TOLERANCE: f64 = 1e-10;
/// Relative tolerance of the finite-difference cross-check.
pub const DIFFERENCE_TOLERANCE: f64 = 1e-6;

fn relative(lhs: f64, rhs: f64) -> f64 {
    (lhs - rhs) / lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE)
}

struct Sample {
    point: TransformPoint,
    coercivity: f64,
    domination: f64,
    young: f64,
    difference: f64,
    variant: f64,
}

fn evaluate(point: TransformPoint, m: f64, c: f64) -> Sample {
    let q = point.q().abs();
    let dr = point.dn_dr(m);
    let dp = point.dn_dp(m);

    let dr_step = 1e-5 * point.r.abs();
    let shift_r = |d: f64| TransformPoint {
        r: point.r + d,
        ..point
    };
    let fd_r = (shift_r(dr_step).n(m) - shift_r(-dr_step).n(m)) / (2.0 * dr_step);
    // r f does not depend on p and is left out of the p-difference
    let dp_step = 1e-5 * point.p.abs().max(1e-300);
    let shift_p = |d: f64| TransformPoint {
        p: point.p + d,
        ..point
    };
    let fd_p =
        (shift_p(dp_step).gradient_part(m) - shift_p(-dp_step).gradient_part(m)) / (2.0 * dp_step);
    let scale_r = point.f_value + q * q + (m - 1.0) * q.powf(m);
    let scale_p = 2.0 * q + m * q.powf(m - 1.0);
    let difference = ((dr - fd_r).abs() / scale_r).max(if scale_p > 0.0 {
        (dp - fd_p).abs() / scale_p
    } else {
        0.0
    });
    let qs = point.q();
    let variant = 2.0 * qs - m * (m - 2.0) * qs.abs().powf(m - 2.0) * qs;
    let variant_scale = 2.0 * q + m * (m - 2.0) * q.powf(m - 1.0);
    Sample {
        point,
        coercivity: relative(1.0 + c * q.powf(m), dr),
        domination: relative(dp.abs(), (1.0 + 2.0 * m / c) * dr),
        young: relative(q * q, 2.0 / m * q.powf(m) + m / (m - 2.0)),
        difference,
        variant: if variant_scale > 0.0 {
            (variant - fd_p).abs() / variant_scale
        } else {
            0.0
        },
    }
}

/// Samples `samples` points with `|q|` log-uniform on `[1e-6, 1e6]`,
/// `r` uniform on `(-1, 0)`, a random sign of `p`, and
/// `f = (1 + m/(m-2)) 10^U`, `U` uniform on `[0, 3]`; evaluates every
/// inequality and the finite-difference cross-check. Requires
/// `m > 2` and `0 < C < m - 1 - 2/m`.
pub fn transform_suite(m: f64, c: f64, samples: usize, seed: u64) -> Result<TransformReport> {
    if !(m > 2.0 && m.is_finite()) {
        return config(format!("exponent m must exceed 2, got {m}"));
    }
    let c_max = m - 1.0 - 2.0 / m;
    if !(c > 0.0 && c < c_max) {
        return config(format!("C must lie in (0, {c_max}), got {c}"));
    }
    if samples == 0 {
        return config("transform suite needs at least one sample");
    }
    let floor = 1.0 + m / (m - 2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<TransformPoint> = (0..samples)
        .map(|_| {
            let r = -rng.random_range(f64::EPSILON..1.0);
            let q = 10f64.powf(rng.random_range(-6.0..=6.0));
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let f_value = floor * 10f64.powf(rng.random_range(0.0..=3.0));
            TransformPoint {
                r,
                p: sign * q * r,
                f_value,
            }
        })
        .collect();
    let evaluated: Vec<Sample> = points.par_iter().map(|&p| evaluate(p, m, c)).collect();

    let mut coercivity = InequalityReport::new("dN/dr >= 1 + C|q|^m", TRANSFORM_TOLERANCE);
    let mut domination = InequalityReport::new("|dN/dp| <= (1 + 2m/C) dN/dr", TRANSFORM_TOLERANCE);
    let mut young = InequalityReport::new("|q|^2 <= (2/m)|q|^m + m/(m-2)", TRANSFORM_TOLERANCE);
    let mut finite_difference =
        InequalityReport::new("partials vs central differences", DIFFERENCE_TOLERANCE);
    let mut variant_gap: f64 = 0.0;
    for s in &evaluated {
        let w = [s.point.r, s.point.p, s.point.f_value];
        coercivity.record(s.coercivity, &w);
        domination.record(s.domination, &w);
        young.record(s.young, &w);
        finite_difference.record(s.difference, &w);
        variant_gap = variant_gap.max(s.variant);
    }
    Ok(TransformReport {
        m,
        c,
        samples,
        seed,
        coercivity,
        domination,
        young,
        finite_difference,
        variant_gap,
    })
}
