//! A desk-scale laboratory for linear temporal-difference learning.
//!
//! The crate provides four layers:
//!
//! * [`mdp`] — finite MDPs, policies, induced state-action chains,
//!   stationary distributions and exact (differential) value functions;
//! * [`features`] — feature matrices and the small dense linear-algebra
//!   kernel (SVD-based norms, weighted operator norms, projections);
//! * [`agents`] — online learners: target-network TD/Q variants for the
//!   discounted and average-reward settings, their semi-gradient ridge
//!   baselines, ball projections and two-timescale step-size schedules;
//! * [`oracles`] — closed-form fixed points, deterministic expected-update
//!   dynamics and bound calculators that every simulation is checked
//!   against.
//!
//! [`envs`] constructs the benchmark instances (Baird's star problem,
//! Kolter's two-state chain, seeded random MDPs) and [`container`] gives
//! them a plain-text serialization format.
//!
//! # Indexing convention
//!
//! State-action pairs are flattened row-major: pair `(s, a)` maps to row
//! `s * n_actions + a`. Every matrix indexed by pairs (transition matrices,
//! feature matrices, stationary distributions) uses this layout.

pub mod agents;
pub mod container;
pub mod envs;
pub mod features;
pub mod linalg;
pub mod mdp;
pub mod oracles;
pub mod rng;
pub mod schedule;

use thiserror::Error;

/// Flattened index of the state-action pair `(s, a)`.
#[inline]
pub fn sa_index(s: usize, a: usize, n_actions: usize) -> usize {
    s * n_actions + a
}

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("no unique stationary distribution: {0}")]
    NoUniqueStationaryDistribution(String),
    #[error("non-ergodic chain: {0}")]
    NonErgodic(String),
    #[error("singular fixed point: {0}")]
    SingularFixedPoint(String),
    #[error("singular system: {0}")]
    SingularSystem(String),
    #[error("undefined importance ratio: behavior probability of the taken action is zero")]
    UndefinedRatio,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no certified fixed point: {0}")]
    NoCertifiedFixedPoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;
