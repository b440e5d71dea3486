//! Diagnostics over run artifacts: long-time convergence and the barrier
//! sandwich, a-priori estimates on ergodic pairs, the transformed-operator
//! inequalities behind comparison, and scheme-level order preservation.

mod convergence;
mod estimates;
mod ordering;
mod transform;

pub use convergence::{
    convergence_metric, sandwich_check, Compact, ConvergenceOptions, ConvergenceReport,
    SandwichReport, Verdicts,
};
pub use estimates::{
    gradient_bound_check, holder_exponent, holder_rescale_check, superlinearity_check,
    EstimateReport,
};
pub use ordering::{ordering_check, ORDERING_TOLERANCE};
pub use transform::{transform_suite, TransformPoint, TransformReport};
