//! Numerical laboratory for superquadratic viscous Hamilton-Jacobi equations
//! `u_t - Δu + |Du|^m = f(x)` with `m > 2`.
//!
//! The crate covers the state-constraint evolution on balls, the ergodic pair
//! `(λ, φ)` of the stationary problem, barrier sub- and supersolutions, and
//! diagnostics for the large-time convergence `u(x, t) - λt → φ(x) + ĉ`.

pub mod analysis;
pub mod barriers;
pub mod ergodic;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod model;
pub mod ode;
pub mod operator;
pub mod quadrature;
pub mod report;
pub mod scheme;

pub use error::{Error, Result};
