//! Adaptive Gauss–Kronrod (7, 15) quadrature.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn kronrod(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let dx = r * XGK[j];
        let pair = f(c - dx) + f(c + dx);
        k += WGK[j] * pair;
        if j % 2 == 1 {
            g += WG[j / 2] * pair;
        }
    }
    (k * r, ((k - g) * r).abs())
}

/// `∫_a^b f` to within `max(abs_tol, rel_tol |I|)` (estimated).
pub fn integrate(
    f: impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let mut pending = vec![(a, b, kronrod(&f, a, b))];
    let mut total = 0.0;
    let mut evaluations = 0usize;
    while let Some((lo, hi, (value, err))) = pending.pop() {
        let width = (hi - lo).abs();
        let local = abs_tol.max(rel_tol * value.abs()) * width / (b - a).abs();
        if err <= local || width <= 1e-14 * (b - a).abs() {
            total += value;
            continue;
        }
        evaluations += 1;
        if evaluations > 100_000 {
            return Err(Error::Integration(format!(
                "quadrature on [{a}, {b}] did not converge"
            )));
        }
        let mid = 0.5 * (lo + hi);
        pending.push((lo, mid, kronrod(&f, lo, mid)));
        pending.push((mid, hi, kronrod(&f, mid, hi)));
    }
    if !total.is_finite() {
        return Err(Error::Integration(format!(
            "non-finite integral on [{a}, {b}]"
        )));
    }
    Ok(total)
}
