//! Adaptive Dormand–Prince 5(4) integration for small autonomous-size
//! systems, and Hermite-interpolated tables of the resulting profiles.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step magnitude.
    pub first_step: f64,
    /// Largest step magnitude.
    pub max_step: f64,
    /// Steps below this magnitude abort the integration.
    pub min_step: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-11,
            atol: 1e-14,
            first_step: 1e-6,
            max_step: f64::INFINITY,
            min_step: 1e-300,
            max_steps: 5_000_000,
        }
    }
}

/// Returned by the step observer to continue or stop the integration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Final state of an integration.
#[derive(Clone, Copy, Debug)]
pub struct OdeEnd<const N: usize> {
    pub t: f64,
    pub y: [f64; N],
    pub steps: usize,
    /// Whether the observer stopped the integration before `t_end`.
    pub stopped: bool,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn axpy<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for (c, k) in terms {
        for i in 0..N {
            out[i] += h * c * k[i];
        }
    }
    out
}

/// Integrates `y' = rhs(t, y)` from `t0` to `t_end` (either direction).
///
/// `observe(t, y, y')` is called at the start and after every accepted
/// step; returning [`Control::Stop`] ends the integration there. A
/// non-finite right-hand side shrinks the step; shrinking below
/// `min_step` is an integration error.
pub fn integrate<const N: usize>(
    mut rhs: impl FnMut(f64, &[f64; N]) -> [f64; N],
    t0: f64,
    y0: [f64; N],
    t_end: f64,
    opts: &OdeOptions,
    mut observe: impl FnMut(f64, &[f64; N], &[f64; N]) -> Control,
) -> Result<OdeEnd<N>> {
    let dir = if t_end >= t0 { 1.0 } else { -1.0 };
    let mut t = t0;
    let mut y = y0;
    let mut k1 = rhs(t, &y);
    if observe(t, &y, &k1) == Control::Stop {
        return Ok(OdeEnd {
            t,
            y,
            steps: 0,
            stopped: true,
        });
    }
    let mut h = opts.first_step.min(opts.max_step).min((t_end - t0).abs());
    let mut steps = 0;
    while dir * (t_end - t) > 0.0 {
        if steps >= opts.max_steps {
            return Err(Error::Integration(format!(
                "step limit {} reached at t = {t}",
                opts.max_steps
            )));
        }
        let remaining = (t_end - t).abs();
        let last = h >= remaining;
        if last {
            h = remaining;
        }
        let hs = dir * h;
        let k2 = rhs(t + C2 * hs, &axpy(&y, hs, &[(A21, &k1)]));
        let k3 = rhs(t + C3 * hs, &axpy(&y, hs, &[(A31, &k1), (A32, &k2)]));
        let k4 = rhs(
            t + C4 * hs,
            &axpy(&y, hs, &[(A41, &k1), (A42, &k2), (A43, &k3)]),
        );
        let k5 = rhs(
            t + C5 * hs,
            &axpy(&y, hs, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
        );
        let k6 = rhs(
            t + hs,
            &axpy(
                &y,
                hs,
                &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
            ),
        );
        let y_new = axpy(
            &y,
            hs,
            &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)],
        );
        let k7 = rhs(t + hs, &y_new);
        let mut err: f64 = 0.0;
        let mut finite = true;
        for i in 0..N {
            let e =
                hs * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let scale = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
            finite &= y_new[i].is_finite() && k7[i].is_finite();
            err = err.max((e / scale).abs());
        }
        if !finite || !err.is_finite() {
            h *= 0.25;
        } else if err <= 1.0 {
            t = if last { t_end } else { t + hs };
            y = y_new;
            k1 = k7;
            steps += 1;
            if observe(t, &y, &k1) == Control::Stop {
                return Ok(OdeEnd {
                    t,
                    y,
                    steps,
                    stopped: true,
                });
            }
            let grow = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            h = (h * grow).min(opts.max_step);
            continue;
        } else {
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
        }
        if h < opts.min_step {
            return Err(Error::Integration(format!(
                "step size underflow at t = {t}"
            )));
        }
    }
    Ok(OdeEnd {
        t,
        y,
        steps,
        stopped: false,
    })
}

/// Samples `(x, y, y', y'')` with `x` strictly increasing; values and first
/// derivatives are interpolated by cubic Hermite polynomials.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Profile {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub dy: Vec<f64>,
    pub ddy: Vec<f64>,
}

fn hermite(x0: f64, x1: f64, y0: f64, y1: f64, d0: f64, d1: f64, x: f64) -> f64 {
    let h = x1 - x0;
    let s = (x - x0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    (2.0 * s3 - 3.0 * s2 + 1.0) * y0
        + (s3 - 2.0 * s2 + s) * h * d0
        + (-2.0 * s3 + 3.0 * s2) * y1
        + (s3 - s2) * h * d1
}

impl Profile {
    pub fn push(&mut self, x: f64, y: f64, dy: f64, ddy: f64) {
        if let Some(&last) = self.x.last() {
            if x <= last {
                return;
            }
        }
        self.x.push(x);
        self.y.push(y);
        self.dy.push(dy);
        self.ddy.push(ddy);
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.x[0]
    }

    pub fn last(&self) -> f64 {
        *self.x.last().expect("profile is empty")
    }

    /// Index `i` with `x[i] <= x < x[i+1]`, or `None` outside the table.
    fn segment(&self, x: f64) -> Option<usize> {
        if self.x.len() < 2 || x < self.x[0] || x > self.last() {
            return None;
        }
        let i = self.x.partition_point(|&v| v <= x);
        Some(i.saturating_sub(1).min(self.x.len() - 2))
    }

    /// `(y, y', y'')` at `x`, or `None` outside the table.
    pub fn eval(&self, x: f64) -> Option<(f64, f64, f64)> {
        let i = self.segment(x)?;
        let (x0, x1) = (self.x[i], self.x[i + 1]);
        let y = hermite(
            x0,
            x1,
            self.y[i],
            self.y[i + 1],
            self.dy[i],
            self.dy[i + 1],
            x,
        );
        let dy = hermite(
            x0,
            x1,
            self.dy[i],
            self.dy[i + 1],
            self.ddy[i],
            self.ddy[i + 1],
            x,
        );
        let w = (x - x0) / (x1 - x0);
        let ddy = (1.0 - w) * self.ddy[i] + w * self.ddy[i + 1];
        Some((y, dy, ddy))
    }

    /// Reversed copy for tables recorded with decreasing `x`.
    pub fn from_descending(mut rows: Vec<[f64; 4]>) -> Self {
        rows.reverse();
        let mut p = Profile::default();
        for r in rows {
            p.push(r[0], r[1], r[2], r[3]);
        }
        p
    }

    /// Writes the columns `x y dy` with the given header names.
    pub fn write_columns(
        &self,
        out: &mut impl std::io::Write,
        names: [&str; 3],
    ) -> std::io::Result<()> {
        writeln!(out, "{} {} {}", names[0], names[1], names[2])?;
        for i in 0..self.len() {
            writeln!(out, "{} {} {}", self.x[i], self.y[i], self.dy[i])?;
        }
        Ok(())
    }
}
