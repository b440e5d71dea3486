use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Invalid problem, grid or solver configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// The source term (or initial data) could not be evaluated.
    #[error("evaluation error at x = {point:?}: {reason}")]
    Evaluation { point: [f64; 2], reason: String },

    /// The growth envelope failed to be nondecreasing on the sample set.
    #[error("envelope is not increasing: value drops from {before} to {after} between r = {r_before} and r = {r_after}")]
    Envelope {
        r_before: f64,
        r_after: f64,
        before: f64,
        after: f64,
    },

    /// Manufactured target rejected (not C^2, not coercive, ...).
    #[error("manufactured target rejected: {0}")]
    Rejected(String),

    /// A non-finite value appeared while time stepping.
    #[error("numerical blow-up at node {node} (x = {point:?}) at t = {time}")]
    BlowUp {
        node: usize,
        point: [f64; 2],
        time: f64,
    },

    /// An iterative solver did not converge. `history` carries the monitored quantity
    /// (slope series for the long-time route, residual norms for Newton).
    #[error("no convergence: {reason}")]
    NonConvergence { reason: String, history: Vec<f64> },

    /// ODE integration failed (step underflow, non-finite state).
    #[error("integration failure: {0}")]
    Integration(String),

    /// Shooting bracket for the radial oracle could not be found.
    #[error("radial oracle failure: {0}")]
    Oracle(String),

    /// The barrier time shift is too small for the requested compact set.
    #[error("time shift t0 = {t0} too small: compact set needs t0 > {minimal}")]
    ShiftTooSmall { t0: f64, minimal: f64 },

    /// Ordering precondition violated (u0_low > u0_high somewhere).
    #[error(
        "ordering precondition violated at node {node} (x = {point:?}): low - high = {excess}"
    )]
    Unordered {
        node: usize,
        point: [f64; 2],
        excess: f64,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
