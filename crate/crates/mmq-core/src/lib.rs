//! Markov-modulated multiclass queueing toolkit.
//!
//! A single server works `K` job classes whose arrival and service rates are
//! modulated by a finite-state background environment (a continuous-time
//! Markov chain run at an adjustable time scale `n^ν`). The crate provides:
//!
//! * [`chain`] — the environment chain: generator validation, stationary
//!   distribution, exact jump simulation, the associated Poisson equation,
//!   and the long-run covariance of integrated centered rates.
//! * [`model`] — network configuration: rate families indexed by the scaling
//!   parameter `n`, scaling regimes, averaged rates, heavy-traffic
//!   verification, and the cμ* priority ordering.
//! * [`policy`] — admissible scheduling policies (cμ*, dynamic cμ, static
//!   priority) and trace admissibility checks.
//! * [`sim`] — exact event-driven simulation producing event-level traces,
//!   fluid/diffusion scaled views, and the diffusion netput decomposition.
//! * [`cost`] — discounted holding-cost functionals with exact per-interval
//!   integration, Monte Carlo estimation, and truncation bounds.
//! * [`bcp`] — the Brownian control problem benchmark: Skorohod reflection,
//!   the optimal reflected workload, and Monte Carlo estimation of the
//!   benchmark value J*.
//!
//! # Numerical conventions
//!
//! * All dense linear algebra is done by direct solves (the environment state
//!   space is small by design).
//! * Simulations are exact: competing exponential clocks with
//!   piecewise-constant rates, no time discretization.
//! * Reproducibility is a hard requirement: every stochastic routine takes an
//!   explicit seed or generator, replication streams are derived as
//!   `(master seed, replication index)`, and identical inputs produce
//!   identical outputs byte for byte.

pub mod bcp;
pub mod chain;
pub mod cost;
pub mod model;
pub mod policy;
pub mod rng;
pub mod sim;
pub mod stats;

use thiserror::Error;

/// Crate-wide error type.
///
/// Variants distinguish malformed inputs (dimensions, domains) from
/// violations of model invariants discovered during computation, so callers
/// can map them to distinct exit codes or retry strategies.
#[derive(Debug, Error)]
pub enum Error {
    /// A matrix or vector had the wrong shape for the requested operation.
    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    Dimension {
        /// What was being checked.
        what: &'static str,
        /// Expected extent.
        expected: usize,
        /// Actual extent.
        actual: usize,
    },
    /// A generator matrix failed a structural requirement.
    #[error("invalid generator: {0}")]
    InvalidGenerator(String),
    /// The environment chain is not irreducible.
    #[error("chain not irreducible: {0}")]
    Reducible(String),
    /// A rate, cost, or parameter was outside its admissible domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// A scaling-regime constraint was violated.
    #[error("invalid scaling regime: {0}")]
    InvalidRegime(String),
    /// A direct linear solve failed or its solution failed verification.
    #[error("linear solve failed: {0}")]
    Solver(String),
    /// A simulation could not be run or produced an internal inconsistency.
    #[error("simulation error: {0}")]
    Simulation(String),
    /// A recorded trace does not match the model or index it is paired with.
    #[error("trace/model mismatch: {0}")]
    TraceMismatch(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
