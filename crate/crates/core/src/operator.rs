//! The spatial operator `u -> Δ_h u - H_h(u) + f` shared by the time
//! stepper and the stationary solvers, with its step-size bound and its
//! (piecewise) Jacobian.

use crate::error::{config, Result};
use crate::grid::{
    godunov_slope, hybrid_flux, one_sided, second_difference, BoundaryPolicy, Flux, Grid, Power,
    Side,
};
use crate::linalg::BandedMatrix;
use crate::model::ProblemSpec;

/// Floor added to the slope in the step-size bound.
const SLOPE_FLOOR: f64 = 1e-6;

/// Bounds on the discrete slopes of a state, as used by the step-size rule.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SlopeBounds {
    /// Largest one-sided slope magnitude (or upwind gradient norm in 2D).
    pub slope: f64,
    /// Largest jump `|D+u - D-u|` between one-sided slopes.
    pub jump: f64,
}

impl SlopeBounds {
    pub fn merge(self, other: Self) -> Self {
        Self {
            slope: self.slope.max(other.slope),
            jump: self.jump.max(other.jump),
        }
    }
}

/// Which parts of the Laplacian [`DiscreteOperator::rate`] includes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LaplacianPart {
    /// Interior second differences and the boundary policy.
    Full,
    /// Only the boundary policy terms (the interior part is treated implicitly).
    BoundaryOnly,
}

#[derive(Clone, Debug)]
pub struct DiscreteOperator {
    grid: Grid,
    pow: Power,
    source: Vec<f64>,
    boundary: BoundaryPolicy,
    flux: Flux,
}

impl DiscreteOperator {
    pub fn new(
        problem: &ProblemSpec,
        grid: &Grid,
        boundary: BoundaryPolicy,
        flux: Flux,
    ) -> Result<Self> {
        if grid.dim() != problem.dim {
            return config(format!(
                "grid dimension {} does not match problem dimension {}",
                grid.dim(),
                problem.dim
            ));
        }
        if flux == Flux::Hybrid && grid.dim() != 1 {
            return config("the hybrid flux is only available in one dimension");
        }
        let source = problem.source.sample(grid)?.into_values();
        Ok(Self {
            grid: *grid,
            pow: Power::new(problem.m),
            source,
            boundary,
            flux,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn source(&self) -> &[f64] {
        &self.source
    }

    pub fn exponent(&self) -> f64 {
        self.pow.exponent()
    }

    /// Bandwidth of the Jacobian.
    pub fn bandwidth(&self) -> usize {
        let reach = if self.boundary == BoundaryPolicy::OneSided && self.grid.per_axis() >= 4 {
            3
        } else {
            1
        };
        reach * self.grid.stride(self.grid.dim() - 1)
    }

    /// Largest explicit step keeping the update monotone under `bounds`;
    /// `diffusion` selects whether the interior Laplacian is explicit.
    pub fn stable_dt(&self, bounds: SlopeBounds, diffusion: bool) -> f64 {
        let h = self.grid.spacing();
        let d = self.grid.dim() as f64;
        let m = self.pow.exponent();
        let slope = bounds.slope + SLOPE_FLOOR;
        let alpha = m * self.pow.of_minus_one(slope);
        let hamiltonian = match self.flux {
            Flux::Godunov => d.sqrt() * alpha / h,
            Flux::Hybrid => {
                // boundary nodes keep the one-sided upwind flux
                let nu = alpha - 2.0 / h;
                let interior = if nu <= 0.0 {
                    0.0
                } else {
                    nu + 0.5 * (m - 1.0) * alpha / slope * bounds.jump
                };
                alpha.max(interior) / h
            }
        };
        let diffusion = if diffusion { 2.0 * d / (h * h) } else { 0.0 };
        1.0 / (diffusion + hamiltonian).max(f64::MIN_POSITIVE)
    }

    /// Writes `Δ_h u - H_h(u) + f` (Laplacian restricted per `part`) into
    /// `out` and returns the slope bounds of `u`.
    pub fn rate(&self, u: &[f64], out: &mut [f64], part: LaplacianPart) -> SlopeBounds {
        let grid = &self.grid;
        let h = grid.spacing();
        let n = grid.per_axis();
        let mut bounds = SlopeBounds::default();
        let interior_lap = part == LaplacianPart::Full;
        let boundary_lap = self.boundary == BoundaryPolicy::OneSided;
        if grid.dim() == 1 {
            let inv_h2 = 1.0 / (h * h);
            for k in 0..n {
                if k == 0 || k + 1 == n {
                    let g = if k == 0 {
                        (u[0] - u[1]) / h
                    } else {
                        (u[k] - u[k - 1]) / h
                    }
                    .max(0.0);
                    let lap = if boundary_lap {
                        second_difference(u, grid, k, 0, self.boundary)
                    } else {
                        0.0
                    };
                    bounds.slope = bounds.slope.max(g);
                    out[k] = lap - self.pow.of(g) + self.source[k];
                    continue;
                }
                let back = (u[k] - u[k - 1]) / h;
                let fwd = (u[k + 1] - u[k]) / h;
                let lap = if interior_lap {
                    (u[k - 1] - 2.0 * u[k] + u[k + 1]) * inv_h2
                } else {
                    0.0
                };
                let ham = match self.flux {
                    Flux::Godunov => {
                        let g = back.max(-fwd).max(0.0);
                        bounds.slope = bounds.slope.max(g);
                        self.pow.of(g)
                    }
                    Flux::Hybrid => {
                        bounds.slope = bounds.slope.max(back.abs()).max(fwd.abs());
                        bounds.jump = bounds.jump.max((fwd - back).abs());
                        hybrid_flux(back, fwd, h, &self.pow).0
                    }
                };
                out[k] = lap - ham + self.source[k];
            }
        } else {
            for k in 0..grid.len() {
                let mut sq = 0.0;
                let mut lap = 0.0;
                for axis in 0..2 {
                    let (mi, pl) = one_sided(u, grid, k, axis);
                    let g = godunov_slope(mi, pl);
                    sq += g * g;
                    let interior = grid.side(k, axis) == Side::Interior;
                    if (interior && interior_lap) || (!interior && boundary_lap) {
                        lap += second_difference(u, grid, k, axis, self.boundary);
                    }
                }
                bounds.slope = bounds.slope.max(sq.sqrt());
                out[k] = lap - self.pow.of_norm_sq(sq) + self.source[k];
            }
        }
        bounds
    }

    /// Ergodic residual `λ - Δ_h u + H_h(u) - f` at every node.
    pub fn residual(&self, u: &[f64], lambda: f64) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        self.rate(u, &mut out, LaplacianPart::Full);
        for r in &mut out {
            *r = lambda - *r;
        }
        out
    }

    /// Jacobian of `u -> -Δ_h u + H_h(u)`, using the active upwind branch
    /// (zero rows where the enclosed minimizer is selected).
    pub fn jacobian(&self, u: &[f64]) -> BandedMatrix {
        let grid = &self.grid;
        let h = grid.spacing();
        let h2 = h * h;
        let n = grid.per_axis();
        let bw = self.bandwidth();
        let mut jac = BandedMatrix::zeros(grid.len(), bw, bw);
        let m = self.pow.exponent();
        for k in 0..grid.len() {
            let mut sq = 0.0;
            let mut branches = [(0.0, 0usize, 0usize); 2];
            for axis in 0..grid.dim() {
                let s = grid.stride(axis);
                let side = grid.side(k, axis);
                // Laplacian part, negated
                match side {
                    Side::Interior => {
                        jac.add(k, k - s, -1.0 / h2);
                        jac.add(k, k, 2.0 / h2);
                        jac.add(k, k + s, -1.0 / h2);
                    }
                    _ if self.boundary == BoundaryPolicy::OneSided => {
                        let weights: &[f64] = if n >= 4 {
                            &[2.0, -5.0, 4.0, -1.0]
                        } else {
                            &[1.0, -2.0, 1.0]
                        };
                        for (i, w) in weights.iter().enumerate() {
                            let j = if side == Side::Low {
                                k + i * s
                            } else {
                                k - i * s
                            };
                            jac.add(k, j, -w / h2);
                        }
                    }
                    _ => {}
                }
                if grid.dim() == 1 && side == Side::Interior && self.flux == Flux::Hybrid {
                    let back = (u[k] - u[k - 1]) / h;
                    let fwd = (u[k + 1] - u[k]) / h;
                    let (_, da, db) = hybrid_flux(back, fwd, h, &self.pow);
                    jac.add(k, k - 1, -da / h);
                    jac.add(k, k, (da - db) / h);
                    jac.add(k, k + 1, db / h);
                    continue;
                }
                let (mi, pl) = one_sided(u, grid, k, axis);
                let back = mi.map_or(0.0, |d| d.max(0.0));
                let fwd = pl.map_or(0.0, |d| (-d).max(0.0));
                let g = back.max(fwd);
                sq += g * g;
                if g > 0.0 {
                    let other = if back >= fwd { k - s } else { k + s };
                    branches[axis] = (g, k, other);
                }
            }
            if sq > 0.0 {
                // d/du_j |G|^m = m |G|^(m-2) g_a dg_a/du_j
                let scale = m * self.pow.of_minus_one(sq.sqrt()) / sq.sqrt();
                for &(g, here, other) in branches.iter().take(grid.dim()) {
                    if g > 0.0 {
                        jac.add(k, here, scale * g / h);
                        jac.add(k, other, -scale * g / h);
                    }
                }
            }
        }
        jac
    }
}
