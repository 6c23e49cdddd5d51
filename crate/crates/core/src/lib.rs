//! Optimal transmission scheduling for remote state estimation over a
//! shared channel.
//!
//! A set of linear sensors each runs a local Kalman filter and forwards
//! its estimate to a fusion center, but the channel only fits a limited
//! number of simultaneous transmissions and a packet from sensor `i`
//! takes `d_i` slots to deliver. The fusion-side error covariance for a
//! sensor whose freshest delivered estimate is `tau` slots old is a
//! closed-form function of `tau`, so scheduling reduces to a finite
//! average-cost Markov decision process over holding times and
//! transmission progress.
//!
//! The crate is organized along that chain:
//!
//! * [`estimation`] — steady-state local filters and the holding-time
//!   cost tables;
//! * [`mdp`] — state space, transition law, and instance enumeration;
//! * [`solver`] — relative value iteration, a discounted companion, and
//!   an independent minimum-mean-cycle oracle for cross-checking;
//! * [`structure`] — audits that solved policies have the expected
//!   shape (completed transmissions, threshold switching, monotone
//!   values);
//! * [`sim`] — deterministic rollouts and Monte Carlo validation of the
//!   predicted estimation error;
//! * [`presets`] — small ready-made example systems.

/// Crate version, re-exported for embedding in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod error;
pub mod estimation;
pub mod mdp;
pub mod presets;
pub mod sim;
pub mod solver;
pub mod structure;

pub use error::{Error, Result};
pub use estimation::{
    build_cost_table, lyapunov_apply, riccati_steady_state, ProcessModel, SteadyState,
};
pub use mdp::{
    build_instance, enumerate_actions, enumerate_decision_grid, enumerate_reachable,
    transition, MdpInstance, MdpState, SystemConfig,
};
pub use sim::{
    default_burn_in, monte_carlo_validate, rollout, McConfig, McSensorSummary, McSummary,
    Trace,
};
pub use solver::{
    aoe_residual, discounted_value_iteration, evaluate_policy, min_mean_cycle_oracle,
    relative_value_iteration, DiscountedSolution, PolicyEvaluation, Solution, SolverMode,
    SolverOptions,
};
pub use structure::{
    analyze, boundary_is_monotone, check_consistency, check_threshold,
    check_value_monotonicity, threshold_boundary, BoundaryPoint, ConsistencyViolation,
    MonotonicityViolation, StructureReport, ThresholdViolation,
};
