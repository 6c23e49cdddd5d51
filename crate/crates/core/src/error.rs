//! Error type shared by every module in the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong while building or solving a scheduling
/// instance.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A model or system definition failed validation. `field` names the
    /// offending entry (e.g. `"r"`, `"m"`); callers may prefix it with
    /// their own path (e.g. `"system.models[1].r"`).
    #[error("invalid model: {field}: {reason}")]
    InvalidModel { field: String, reason: String },

    /// Matrix dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// The Riccati iteration did not reach the requested tolerance.
    #[error("Riccati iteration did not converge after {iterations} iterations (last residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    /// The innovation covariance C P C' + R could not be factorized.
    #[error("innovation covariance is numerically singular")]
    SingularInnovation,

    /// An action referenced an unknown sensor or had the wrong cardinality.
    #[error("invalid action: {0}")]
    InvalidAction(String),

    /// Reachability enumeration exceeded the configured state ceiling.
    #[error("state enumeration exceeded the ceiling of {ceiling} states")]
    StateExplosion { ceiling: usize },

    /// A state passed in from outside is not part of the enumerated
    /// instance.
    #[error("state is not part of the enumerated instance: {0}")]
    UnknownState(String),

    /// Value iteration ran out of its iteration budget.
    #[error("value iteration hit the iteration cap of {iterations} (last residual {residual:.3e})")]
    MaxIterations { iterations: usize, residual: f64 },

    /// The recurrent class (or a trajectory) touched a state clamped at
    /// `tau_max`: the holding-time truncation distorts the answer and must
    /// be enlarged.
    #[error("holding-time truncation too tight: a state clamped at tau_max is recurrent (state index {state})")]
    TruncationTooTight { state: usize },

    /// Solver or simulation options are out of range.
    #[error("invalid options: {0}")]
    InvalidOptions(String),
}
