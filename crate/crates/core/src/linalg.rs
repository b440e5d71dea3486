//! Small direct solvers: tridiagonal elimination and banded LU with partial
//! pivoting.

use crate::error::{Error, Result};

/// Solves the tridiagonal system `lower[i] x[i-1] + diag[i] x[i] + upper[i] x[i+1] = rhs[i]`
/// in place (`rhs` becomes `x`). `lower[0]` and `upper[n-1]` are ignored.
/// `scratch` must have the same length as `rhs`.
pub fn thomas(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &mut [f64],
    scratch: &mut [f64],
) -> Result<()> {
    let n = rhs.len();
    debug_assert!(lower.len() == n && diag.len() == n && upper.len() == n && scratch.len() == n);
    if n == 0 {
        return Ok(());
    }
    let mut pivot = diag[0];
    if pivot == 0.0 {
        return Err(Error::Integration("zero pivot in tridiagonal solve".into()));
    }
    scratch[0] = upper[0] / pivot;
    rhs[0] /= pivot;
    for i in 1..n {
        pivot = diag[i] - lower[i] * scratch[i - 1];
        if pivot == 0.0 {
            return Err(Error::Integration("zero pivot in tridiagonal solve".into()));
        }
        scratch[i] = upper[i] / pivot;
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / pivot;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i] * rhs[i + 1];
    }
    Ok(())
}

/// Square band matrix with `kl` sub- and `ku` superdiagonals.
#[derive(Clone, Debug)]
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    /// Row-major storage of width `2 kl + ku + 1` (room for pivoting fill).
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Self {
            n,
            kl,
            ku,
            data: vec![0.0; n * (2 * kl + ku + 1)],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    fn width(&self) -> usize {
        2 * self.kl + self.ku + 1
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(
            j + self.kl >= i && j <= i + self.kl + self.ku,
            "entry ({i}, {j}) outside band"
        );
        i * self.width() + (j + self.kl - i)
    }

    fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.ku
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.data[self.slot(i, j)]
        } else {
            0.0
        }
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside band");
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside band");
        let s = self.slot(i, j);
        self.data[s] = v;
    }

    /// Replaces column `j` by zeros (within the band).
    pub fn clear_column(&mut self, j: usize) {
        let lo = j.saturating_sub(self.ku);
        let hi = (j + self.kl).min(self.n - 1);
        for i in lo..=hi {
            self.set(i, j, 0.0);
        }
    }

    /// `y = A x`.
    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.get(i, j) * x[j]).sum()
            })
            .collect()
    }

    /// LU factorization with partial pivoting (row swaps within the band).
    pub fn factor(mut self) -> Result<BandedLu> {
        let (n, kl) = (self.n, self.kl);
        let reach = self.kl + self.ku;
        let mut pivots = Vec::with_capacity(n);
        let mut lower = vec![0.0; n * kl.max(1)];
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + reach).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.slot(k, k)].abs();
            for i in k + 1..=last_row {
                let v = self.data[self.slot(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::Integration(format!("singular matrix at column {k}")));
            }
            if p != k {
                for j in k..=last_col {
                    let (a, b) = (self.slot(k, j), self.slot(p, j));
                    self.data.swap(a, b);
                }
            }
            pivots.push(p);
            let pivot = self.data[self.slot(k, k)];
            for i in k + 1..=last_row {
                let sik = self.slot(i, k);
                let l = self.data[sik] / pivot;
                self.data[sik] = 0.0;
                lower[k * kl + (i - k - 1)] = l;
                if l == 0.0 {
                    continue;
                }
                for j in k + 1..=last_col {
                    let skj = self.slot(k, j);
                    let sij = self.slot(i, j);
                    self.data[sij] -= l * self.data[skj];
                }
            }
        }
        Ok(BandedLu {
            lu: self,
            pivots,
            lower,
        })
    }
}

/// Factored form of a [`BandedMatrix`].
#[derive(Clone, Debug)]
pub struct BandedLu {
    lu: BandedMatrix,
    pivots: Vec<usize>,
    lower: Vec<f64>,
}

impl BandedLu {
    /// Solves `A x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        let a = &self.lu;
        let (n, kl) = (a.n, a.kl);
        let reach = a.kl + a.ku;
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for i in k + 1..=(k + kl).min(n - 1) {
                    b[i] -= self.lower[k * kl + (i - k - 1)] * bk;
                }
            }
        }
        for i in (0..n).rev() {
            let hi = (i + reach).min(n - 1);
            let mut s = b[i];
            for j in i + 1..=hi {
                s -= a.data[a.slot(i, j)] * b[j];
            }
            b[i] = s / a.data[a.slot(i, i)];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn thomas_solves_poisson() {
        let n = 50;
        let lower = vec![-1.0; n];
        let upper = vec![-1.0; n];
        let diag = vec![2.0; n];
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut b: Vec<f64> = (0..n)
            .map(|i| {
                let l = if i > 0 { -x[i - 1] } else { 0.0 };
                let u = if i + 1 < n { -x[i + 1] } else { 0.0 };
                l + 2.0 * x[i] + u
            })
            .collect();
        let mut scratch = vec![0.0; n];
        thomas(&lower, &diag, &upper, &mut b, &mut scratch).unwrap();
        for i in 0..n {
            assert_relative_eq!(b[i], x[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn pivoting_handles_zero_diagonal() {
        // [[0, 1, 0], [1, 0, 1], [0, 1, 1]]
        let mut a = BandedMatrix::zeros(3, 1, 1);
        a.set(0, 1, 1.0);
        a.set(1, 0, 1.0);
        a.set(1, 2, 1.0);
        a.set(2, 1, 1.0);
        a.set(2, 2, 1.0);
        let x = [1.0, -2.0, 3.0];
        let mut b = a.mul(&x);
        a.factor().unwrap().solve(&mut b);
        for i in 0..3 {
            assert_relative_eq!(b[i], x[i], epsilon = 1e-12);
        }
    }

    proptest! {
        #[test]
        fn banded_lu_inverts_dominant_matrices(
            n in 3usize..40,
            kl in 1usize..4,
            ku in 1usize..4,
            seed in prop::collection::vec(-1.0..1.0f64, 400),
        ) {
            let mut a = BandedMatrix::zeros(n, kl, ku);
            let mut it = seed.iter().cycle();
            for i in 0..n {
                let mut row = 0.0;
                for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                    if j != i {
                        let v = *it.next().unwrap();
                        a.set(i, j, v);
                        row += v.abs();
                    }
                }
                a.set(i, i, row + 0.5);
            }
            let x: Vec<f64> = (0..n).map(|i| *seed.get(i).unwrap_or(&0.1) + 0.5).collect();
            let mut b = a.mul(&x);
            a.factor().unwrap().solve(&mut b);
            for i in 0..n {
                prop_assert!((b[i] - x[i]).abs() < 1e-9);
            }
        }
    }
}
