//! Uniform tensor grids on `[-R, R]^dim`, scalar fields on them, and the
//! discrete operators shared by every solver: centered second differences and
//! the Godunov (Rouy–Tourin) upwind gradient magnitude.
//!
//! Nodes are stored lexicographically with the first axis fastest, so node
//! `(i, j)` lives at `i + n * j`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};

/// Which side of an axis a node sits on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Low,
    Interior,
    High,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    dim: usize,
    radius: f64,
    spacing: f64,
    per_axis: usize,
}

impl Grid {
    pub fn new(dim: usize, radius: f64, spacing: f64) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return config(format!("grid dimension must be 1 or 2, got {dim}"));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return config(format!("grid radius must be positive, got {radius}"));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return config(format!("grid spacing must be positive, got {spacing}"));
        }
        let cells = 2.0 * radius / spacing;
        let rounded = cells.round();
        if (cells - rounded).abs() > 1e-9 * rounded.max(1.0) {
            return config(format!(
                "2R/h must be an integer: R = {radius}, h = {spacing} gives {cells}"
            ));
        }
        let per_axis = rounded as usize + 1;
        if per_axis < 3 {
            return config(format!(
                "grid needs at least 3 nodes per axis, got {per_axis}"
            ));
        }
        Ok(Self {
            dim,
            radius,
            spacing,
            per_axis,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn per_axis(&self) -> usize {
        self.per_axis
    }

    pub fn len(&self) -> usize {
        self.per_axis.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index stride of `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        if axis == 0 {
            1
        } else {
            self.per_axis
        }
    }

    /// Coordinate of lattice index `i` along any axis. Symmetric about 0 by
    /// construction, so `coord(i) == -coord(n - 1 - i)` exactly.
    pub fn coord(&self, i: usize) -> f64 {
        let twice = 2 * i as i64 - (self.per_axis as i64 - 1);
        twice as f64 * (0.5 * self.spacing)
    }

    /// Lattice position of `node` along `axis`.
    pub fn axis_index(&self, node: usize, axis: usize) -> usize {
        if axis == 0 {
            node % self.per_axis
        } else {
            node / self.per_axis
        }
    }

    pub fn node(&self, i: usize, j: usize) -> usize {
        i + self.per_axis * j
    }

    /// Coordinates of `node`; the second entry is 0 in one dimension.
    pub fn point(&self, node: usize) -> [f64; 2] {
        let x = self.coord(self.axis_index(node, 0));
        let y = if self.dim == 2 {
            self.coord(self.axis_index(node, 1))
        } else {
            0.0
        };
        [x, y]
    }

    pub fn norm(&self, node: usize) -> f64 {
        let [x, y] = self.point(node);
        x.hypot(y)
    }

    pub fn side(&self, node: usize, axis: usize) -> Side {
        let i = self.axis_index(node, axis);
        if i == 0 {
            Side::Low
        } else if i + 1 == self.per_axis {
            Side::High
        } else {
            Side::Interior
        }
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        (0..self.dim).any(|a| self.side(node, a) != Side::Interior)
    }

    pub fn boundary_mask(&self) -> Vec<bool> {
        (0..self.len()).map(|k| self.is_boundary(k)).collect()
    }

    /// Lattice index nearest to coordinate `x` (clamped to the grid).
    pub fn nearest_index(&self, x: f64) -> usize {
        let i = ((x + self.radius) / self.spacing).round();
        i.clamp(0.0, (self.per_axis - 1) as f64) as usize
    }

    pub fn nearest_node(&self, point: [f64; 2]) -> usize {
        let i = self.nearest_index(point[0]);
        let j = if self.dim == 2 {
            self.nearest_index(point[1])
        } else {
            0
        };
        self.node(i, j)
    }

    /// Number of grid cells separating the lower corners of `self` and a
    /// larger grid `outer`, if the lattices are aligned.
    pub fn offset_in(&self, outer: &Grid) -> Option<usize> {
        if self.dim != outer.dim || (self.spacing - outer.spacing).abs() > 1e-12 * self.spacing {
            return None;
        }
        if outer.per_axis < self.per_axis || (outer.per_axis - self.per_axis) % 2 != 0 {
            return None;
        }
        Some((outer.per_axis - self.per_axis) / 2)
    }

    /// Node of `outer` that coincides with `node` of `self`.
    pub fn embed(&self, node: usize, outer: &Grid, offset: usize) -> usize {
        let i = self.axis_index(node, 0) + offset;
        let j = if self.dim == 2 {
            self.axis_index(node, 1) + offset
        } else {
            0
        };
        outer.node(i, j)
    }

    /// Nodes whose coordinates satisfy `pred`.
    pub fn nodes_where(&self, mut pred: impl FnMut([f64; 2]) -> bool) -> Vec<usize> {
        (0..self.len()).filter(|&k| pred(self.point(k))).collect()
    }
}

/// One real value per node of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    grid: Grid,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return config(format!(
                "field has {} values but the grid has {} nodes",
                values.len(),
                grid.len()
            ));
        }
        if let Some(node) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Evaluation {
                point: grid.point(node),
                reason: format!("non-finite field value {}", values[node]),
            });
        }
        Ok(Self { grid, values })
    }

    /// Internal constructor for values already known to be finite.
    pub(crate) fn from_raw(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self::from_raw(grid, vec![c; grid.len()])
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut([f64; 2]) -> f64) -> Result<Self> {
        let values = (0..grid.len()).map(|k| f(grid.point(k))).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, node: usize) -> f64 {
        self.values[node]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `self + c`, nodewise.
    pub fn shifted(&self, c: f64) -> Self {
        Self::from_raw(self.grid, self.values.iter().map(|v| v + c).collect())
    }

    /// Restriction to the nodes of a smaller, aligned grid.
    pub fn restrict_to(&self, inner: &Grid) -> Result<Self> {
        let offset = inner
            .offset_in(&self.grid)
            .ok_or_else(|| Error::Config("grids are not aligned for restriction".into()))?;
        let values = (0..inner.len())
            .map(|k| self.values[inner.embed(k, &self.grid, offset)])
            .collect();
        Ok(Self::from_raw(*inner, values))
    }

    /// Columnar text: a header naming the columns, then one row per node
    /// with the coordinates followed by the value.
    pub fn write_columns<W: Write>(&self, mut out: W, value_name: &str) -> std::io::Result<()> {
        if self.grid.dim == 1 {
            writeln!(out, "x {value_name}")?;
        } else {
            writeln!(out, "x y {value_name}")?;
        }
        for (k, v) in self.values.iter().enumerate() {
            let [x, y] = self.grid.point(k);
            if self.grid.dim == 1 {
                writeln!(out, "{x} {v}")?;
            } else {
                writeln!(out, "{x} {y} {v}")?;
            }
        }
        Ok(())
    }

    /// Reads the format produced by [`GridField::write_columns`] back onto `grid`.
    pub fn read_columns<R: BufRead>(grid: Grid, input: R) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len());
        for (lineno, line) in input.lines().enumerate().skip(1) {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let last = line.split_whitespace().last().unwrap_or_default();
            let v: f64 = last
                .parse()
                .map_err(|_| Error::Io(format!("line {}: bad value {last:?}", lineno + 1)))?;
            values.push(v);
        }
        Self::new(grid, values)
    }
}

/// Handling of the Laplacian at truncation-boundary nodes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryPolicy {
    /// No diffusion across the boundary: the normal second difference is zero.
    #[default]
    Drop,
    /// Second-order one-sided second difference along the normal axis.
    OneSided,
}

/// Numerical Hamiltonian used at interior nodes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Flux {
    /// Godunov upwind flux.
    #[default]
    Godunov,
    /// Centered gradient with local Lax-Friedrichs dissipation reduced by the
    /// diffusion already present in the centered Laplacian (one dimension).
    /// Second order wherever `m |p|^(m-1) <= 2/h`, monotone everywhere.
    Hybrid,
}

/// The hybrid flux and its partial derivatives with respect to the backward
/// slope `a` and the forward slope `b`:
/// `|(a+b)/2|^m - nu (b - a)/2` with `nu = max(m max(|a|,|b|)^(m-1) - 2/h, 0)`.
#[inline]
pub fn hybrid_flux(a: f64, b: f64, h: f64, pow: &Power) -> (f64, f64, f64) {
    let m = pow.exponent();
    let mid = 0.5 * (a + b);
    let amid = mid.abs();
    let big = a.abs().max(b.abs());
    let alpha = m * pow.of_minus_one(big);
    let nu = alpha - 2.0 / h;
    let centre = pow.of(amid);
    let dcentre = 0.5 * m * pow.of_minus_one(amid) * mid.signum();
    if nu <= 0.0 {
        return (centre, dcentre, dcentre);
    }
    let half_jump = 0.5 * (b - a);
    // d nu / d|big| for the endpoint holding the largest magnitude
    let dnu = if m == 2.0 {
        0.0
    } else {
        m * (m - 1.0) * pow.of_minus_one(big) / big
    };
    let (dnu_a, dnu_b) = if a.abs() >= b.abs() {
        (dnu * a.signum(), 0.0)
    } else {
        (0.0, dnu * b.signum())
    };
    let value = centre - nu * half_jump;
    let da = dcentre + 0.5 * nu - dnu_a * half_jump;
    let db = dcentre - 0.5 * nu - dnu_b * half_jump;
    (value, da, db)
}

/// Fast `|p|^m`, using integer powers when `m` is integral.
#[derive(Clone, Copy, Debug)]
pub struct Power {
    m: f64,
    int: Option<i32>,
}

impl Power {
    pub fn new(m: f64) -> Self {
        let int = if m.fract() == 0.0 && (1.0..=16.0).contains(&m) {
            Some(m as i32)
        } else {
            None
        };
        Self { m, int }
    }

    pub fn exponent(&self) -> f64 {
        self.m
    }

    /// `g^m` for `g >= 0`.
    #[inline]
    pub fn of(&self, g: f64) -> f64 {
        match self.int {
            Some(k) => g.powi(k),
            None => g.powf(self.m),
        }
    }

    /// `g^(m-1)` for `g >= 0`.
    #[inline]
    pub fn of_minus_one(&self, g: f64) -> f64 {
        match self.int {
            Some(k) => g.powi(k - 1),
            None => g.powf(self.m - 1.0),
        }
    }

    /// `|q|^m` given `|q|^2`.
    #[inline]
    pub fn of_norm_sq(&self, q2: f64) -> f64 {
        match self.int {
            Some(k) if k % 2 == 0 => q2.powi(k / 2),
            _ => self.of(q2.sqrt()),
        }
    }
}

/// Upwind slope magnitude for `|p|` with one-sided differences `minus`
/// (backward) and `plus` (forward). A missing side is passed as `None`.
#[inline]
pub fn godunov_slope(minus: Option<f64>, plus: Option<f64>) -> f64 {
    let back = minus.map_or(0.0, |d| d.max(0.0));
    let fwd = plus.map_or(0.0, |d| (-d).max(0.0));
    back.max(fwd)
}

/// Godunov numerical Hamiltonian for `|p|^m`:
/// `max(max(minus, 0), max(-plus, 0))^m`.
pub fn godunov_gradient_power(minus: f64, plus: f64, m: f64) -> f64 {
    Power::new(m).of(godunov_slope(Some(minus), Some(plus)))
}

/// One-sided differences of `u` at `node` along `axis`; the outward side is
/// `None` on the truncation boundary.
#[inline]
pub fn one_sided(u: &[f64], grid: &Grid, node: usize, axis: usize) -> (Option<f64>, Option<f64>) {
    let s = grid.stride(axis);
    let h = grid.spacing();
    let here = u[node];
    match grid.side(node, axis) {
        Side::Interior => (
            Some((here - u[node - s]) / h),
            Some((u[node + s] - here) / h),
        ),
        Side::Low => (None, Some((u[node + s] - here) / h)),
        Side::High => (Some((here - u[node - s]) / h), None),
    }
}

/// Squared upwind gradient magnitude at `node` (sum over axes).
#[inline]
pub fn upwind_slope_sq(u: &[f64], grid: &Grid, node: usize) -> f64 {
    (0..grid.dim())
        .map(|a| {
            let (mi, pl) = one_sided(u, grid, node, a);
            let g = godunov_slope(mi, pl);
            g * g
        })
        .sum()
}

/// Second difference of `u` at `node` along `axis`, boundary per `policy`.
#[inline]
pub fn second_difference(
    u: &[f64],
    grid: &Grid,
    node: usize,
    axis: usize,
    policy: BoundaryPolicy,
) -> f64 {
    let s = grid.stride(axis);
    let h2 = grid.spacing() * grid.spacing();
    let n = grid.per_axis();
    match grid.side(node, axis) {
        Side::Interior => (u[node - s] - 2.0 * u[node] + u[node + s]) / h2,
        side => match policy {
            BoundaryPolicy::Drop => 0.0,
            BoundaryPolicy::OneSided => {
                let step = |k: usize| {
                    if side == Side::Low {
                        u[node + k * s]
                    } else {
                        u[node - k * s]
                    }
                };
                if n >= 4 {
                    (2.0 * step(0) - 5.0 * step(1) + 4.0 * step(2) - step(3)) / h2
                } else {
                    (step(0) - 2.0 * step(1) + step(2)) / h2
                }
            }
        },
    }
}

/// Discrete Laplacian: centered second differences summed over axes, with
/// the normal direction at boundary nodes handled by `policy`.
pub fn laplacian(field: &GridField, policy: BoundaryPolicy) -> GridField {
    let grid = field.grid;
    let u = &field.values;
    let values = (0..grid.len())
        .map(|k| {
            (0..grid.dim())
                .map(|a| second_difference(u, &grid, k, a, policy))
                .sum()
        })
        .collect();
    GridField::from_raw(grid, values)
}

/// Discrete Hamiltonian `H_G(u) = |upwind gradient|^m` at every node, with
/// inward-only differences on the boundary.
pub fn hamiltonian(field: &GridField, m: f64) -> GridField {
    let pow = Power::new(m);
    let grid = field.grid;
    let values = (0..grid.len())
        .map(|k| pow.of_norm_sq(upwind_slope_sq(&field.values, &grid, k)))
        .collect();
    GridField::from_raw(grid, values)
}

/// Centered gradient at an interior node (zero components on boundary axes).
pub fn centered_gradient(u: &[f64], grid: &Grid, node: usize) -> [f64; 2] {
    let h = grid.spacing();
    let mut g = [0.0; 2];
    for (a, ga) in g.iter_mut().enumerate().take(grid.dim()) {
        let s = grid.stride(a);
        *ga = match grid.side(node, a) {
            Side::Interior => (u[node + s] - u[node - s]) / (2.0 * h),
            Side::Low => (u[node + s] - u[node]) / h,
            Side::High => (u[node] - u[node - s]) / h,
        };
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn grid_shape_and_boundary() {
        let g = Grid::new(1, 6.0, 0.01).unwrap();
        assert_eq!(g.per_axis(), 1201);
        assert_eq!(g.coord(600), 0.0);
        assert_eq!(g.coord(0), -6.0);
        assert_eq!(g.coord(1200), 6.0);
        assert!(g.is_boundary(0) && g.is_boundary(1200) && !g.is_boundary(1));

        let g2 = Grid::new(2, 1.0, 0.5).unwrap();
        assert_eq!(g2.len(), 25);
        let mask = g2.boundary_mask();
        assert_eq!(mask.iter().filter(|b| **b).count(), 16);
        assert!(!mask[g2.node(2, 2)]);
    }

    #[test]
    fn grid_rejects_bad_spacing() {
        assert!(Grid::new(1, 1.0, 0.3).is_err());
        assert!(Grid::new(1, 1.0, 1.0).is_ok());
        assert!(Grid::new(1, 1.0, 2.0).is_err());
        assert!(Grid::new(3, 1.0, 0.1).is_err());
        assert!(Grid::new(1, -1.0, 0.1).is_err());
    }

    #[test]
    fn laplacian_of_quadratic_is_two() {
        let g = Grid::new(1, 2.0, 0.1).unwrap();
        let f = GridField::from_fn(g, |p| p[0] * p[0]).unwrap();
        let lap = laplacian(&f, BoundaryPolicy::Drop);
        for k in 1..g.len() - 1 {
            assert_abs_diff_eq!(lap.at(k), 2.0, epsilon = 1e-9);
        }
        assert_eq!(lap.at(0), 0.0);
        let lap1 = laplacian(&f, BoundaryPolicy::OneSided);
        assert_abs_diff_eq!(lap1.at(0), 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(lap1.at(g.len() - 1), 2.0, epsilon = 1e-9);
    }

    #[test]
    fn laplacian_of_cubic_at_one() {
        let g = Grid::new(1, 2.0, 0.1).unwrap();
        let f = GridField::from_fn(g, |p| p[0].powi(3)).unwrap();
        let lap = laplacian(&f, BoundaryPolicy::Drop);
        let k = g.nearest_index(1.0);
        assert_abs_diff_eq!(g.coord(k), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(lap.at(k), 6.0, epsilon = 1e-9);
    }

    #[test]
    fn laplacian_of_constant_vanishes() {
        let g = Grid::new(2, 1.0, 0.25).unwrap();
        let f = GridField::constant(g, 3.5);
        for policy in [BoundaryPolicy::Drop, BoundaryPolicy::OneSided] {
            assert!(laplacian(&f, policy)
                .values()
                .iter()
                .all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn godunov_examples() {
        assert_eq!(godunov_gradient_power(1.0, 1.0, 3.0), 1.0);
        assert_eq!(godunov_gradient_power(-1.0, 1.0, 3.0), 0.0);
        assert_eq!(godunov_gradient_power(0.0, -2.0, 3.0), 8.0);
        // consistency: equal slopes reproduce |p|^m
        assert_abs_diff_eq!(godunov_gradient_power(-1.5, -1.5, 2.5), 1.5f64.powf(2.5));
    }

    #[test]
    fn power_matches_powf() {
        for m in [2.5, 3.0, 4.0, 3.7] {
            let p = Power::new(m);
            for g in [0.0, 0.3, 1.0, 7.25] {
                assert_abs_diff_eq!(p.of(g), g.powf(m), epsilon = 1e-12 * (1.0 + g.powf(m)));
                assert_abs_diff_eq!(
                    p.of_norm_sq(g * g),
                    g.powf(m),
                    epsilon = 1e-12 * (1.0 + g.powf(m))
                );
            }
        }
    }

    #[test]
    fn hamiltonian_consistency_is_first_order() {
        // |D sin|^3 on interior nodes, error should halve with h
        let err = |h: f64| {
            let g = Grid::new(1, 1.0, h).unwrap();
            let f = GridField::from_fn(g, |p| (2.0 * p[0]).sin()).unwrap();
            let hm = hamiltonian(&f, 3.0);
            (1..g.len() - 1)
                .map(|k| {
                    let x = g.coord(k);
                    (hm.at(k) - (2.0 * (2.0 * x).cos()).abs().powi(3)).abs()
                })
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(0.02), err(0.01));
        let rate = (e1 / e2).log2();
        assert!(rate > 0.8 && rate < 1.3, "rate {rate}");
    }

    #[test]
    fn columns_round_trip() {
        let g = Grid::new(2, 1.0, 0.5).unwrap();
        let f = GridField::from_fn(g, |p| p[0] * 0.1 + p[1].exp()).unwrap();
        let mut buf = Vec::new();
        f.write_columns(&mut buf, "u").unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x y u\n"));
        let back = GridField::read_columns(g, buf.as_slice()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn restriction_uses_shared_nodes() {
        let outer = Grid::new(1, 3.0, 0.5).unwrap();
        let inner = Grid::new(1, 2.0, 0.5).unwrap();
        let f = GridField::from_fn(outer, |p| p[0]).unwrap();
        let r = f.restrict_to(&inner).unwrap();
        for k in 0..inner.len() {
            assert_eq!(r.at(k), inner.coord(k));
        }
        let misaligned = Grid::new(1, 2.25, 0.5);
        assert!(misaligned.is_err() || f.restrict_to(&misaligned.unwrap()).is_err());
    }

    proptest! {
        #[test]
        fn godunov_is_monotone(a in -5.0..5.0f64, b in -5.0..5.0f64, d in 0.0..2.0f64, m in 2.1..5.0f64) {
            let base = godunov_gradient_power(a, b, m);
            prop_assert!(base >= 0.0);
            prop_assert!(godunov_gradient_power(a + d, b, m) >= base);
            prop_assert!(godunov_gradient_power(a, b + d, m) <= base);
        }

        // with the centered Laplacian the update is monotone iff
        // dH/da >= -1/h and dH/db <= 1/h
        #[test]
        fn hybrid_flux_keeps_the_scheme_monotone(
            a in -50.0..50.0f64, b in -50.0..50.0f64, m in 2.1..5.0f64, h in 0.005..0.2f64,
        ) {
            let pow = Power::new(m);
            let (v, da, db) = hybrid_flux(a, b, h, &pow);
            let tol = 1e-9 * (1.0 / h + v.abs());
            prop_assert!(da >= -1.0 / h - tol, "da = {da}");
            prop_assert!(db <= 1.0 / h + tol, "db = {db}");
            let d = 1e-7 * (1.0 + a.abs().max(b.abs()));
            let fd = (hybrid_flux(a, b + d, h, &pow).0 - hybrid_flux(a, b - d, h, &pow).0) / (2.0 * d);
            if (a.abs() - b.abs()).abs() > 1e-3 {
                prop_assert!((fd - db).abs() <= 1e-4 * (1.0 + db.abs()), "{fd} vs {db}");
            }
        }

        #[test]
        fn laplacian_is_linear_and_kills_affine(c0 in -3.0..3.0f64, c1 in -3.0..3.0f64, c2 in -3.0..3.0f64, s in -2.0..2.0f64) {
            let g = Grid::new(2, 1.0, 0.25).unwrap();
            let affine = GridField::from_fn(g, |p| c0 + c1 * p[0] + c2 * p[1]).unwrap();
            for policy in [BoundaryPolicy::Drop, BoundaryPolicy::OneSided] {
                prop_assert!(laplacian(&affine, policy).values().iter().all(|v| v.abs() < 1e-9));
            }
            let a = GridField::from_fn(g, |p| (p[0] * 1.3).sin() * p[1]).unwrap();
            let b = GridField::from_fn(g, |p| p[0] * p[0] - p[1]).unwrap();
            let comb = GridField::new(g, a.values().iter().zip(b.values()).map(|(x, y)| x + s * y).collect()).unwrap();
            let la = laplacian(&a, BoundaryPolicy::OneSided);
            let lb = laplacian(&b, BoundaryPolicy::OneSided);
            let lc = laplacian(&comb, BoundaryPolicy::OneSided);
            for k in 0..g.len() {
                prop_assert!((lc.at(k) - la.at(k) - s * lb.at(k)).abs() < 1e-8);
            }
        }
    }
}
