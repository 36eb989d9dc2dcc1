//! Consensus dynamics for multi-agent networks whose communication graph
//! switches at random, built on the delta operator `(x(t+h) - x(t)) / h`.
//!
//! Agents run the first-order protocol `delta x = -L x`, where `L` is the
//! Laplacian of whichever graph is active. The graph is redrawn from a fixed
//! ensemble every dwell interval, which models links dropping out when an
//! agent fails to receive or send. Over one dwell of `k_bar` samples the
//! state maps through `(I - hL)^k_bar`, or `exp(-L * delta_t)` in the
//! continuous limit.
//!
//! The crate answers three questions about such a system:
//!
//! * where it converges: the expected dwell transition is a primitive
//!   stochastic matrix whose stationary vector `pi` gives the consensus
//!   value `pi' x(0)` ([`analysis::expected_transition`],
//!   [`analysis::stationary_vector`]);
//! * how far faults push that value from the fault-free average: closed-form
//!   bounds on `||pi - 1/n||` driven by the perturbation of the expected
//!   transition ([`analysis::perturbation_bound`] and friends);
//! * whether sample paths actually behave as predicted: seeded Monte Carlo
//!   over the switching process ([`verify`]).
//!
//! All randomness flows through explicit `u64` seeds, so every simulation
//! and estimate is reproducible bit for bit.

pub mod analysis;
pub mod dynamics;
pub mod graph;
pub mod linalg;
pub mod switching;
pub mod verify;

use thiserror::Error;

/// Errors reported by graph construction, dynamics, and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("agent index {index} out of range for {n} agents")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid sampling scheme: {0}")]
    InvalidSampling(String),

    #[error("sampling period h = {h} must lie in (0, {limit}) = (0, 1/d_max) for this ensemble")]
    SamplingPeriod { h: f64, limit: f64 },

    #[error("invalid ensemble: {0}")]
    InvalidEnsemble(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("ensemble does not have the required fault structure: {0}")]
    ScenarioStructure(String),

    #[error("{0} is not strongly connected")]
    NotStronglyConnected(String),

    #[error("transition matrix is not primitive: {0}")]
    NotPrimitive(String),

    #[error("matrix is not stochastic: {0}")]
    NotStochastic(String),

    #[error("eigenvalue computation did not converge")]
    EigenConvergence,

    #[error("stationary vector: {0}")]
    Stationary(String),

    #[error("group inverse series did not converge within {0} terms")]
    SeriesDivergence(usize),

    #[error("group inverse identities violated with residual {0}")]
    GroupInverseIdentity(f64),

    #[error("matrix is singular: {0}")]
    Singular(String),

    #[error("perturbation must preserve row sums: ||E 1||_inf = {0}")]
    PerturbationRowSums(f64),

    #[error("contraction factor {0} is not below 1; the disagreement bound does not apply")]
    ContractionFactor(f64),

    #[error("Lyapunov decrement mismatch: difference quotient {quotient} vs quadratic form {form}")]
    LyapunovMismatch { quotient: f64, form: f64 },

    #[error("transition entry ({row}, {col}) = {value} is negative beyond rounding tolerance")]
    NegativeEntry { row: usize, col: usize, value: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
