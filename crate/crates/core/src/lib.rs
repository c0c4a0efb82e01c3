//! Differential and classical LSTD policy evaluation.
//!
//! * [`models`]: the state-space models, costs, feature maps and sensitivity factors.
//! * [`estimators`]: the recursive LSTD, LSTD(lambda), differential and
//!   average-cost estimators and their finalization.
//! * [`oracles`]: closed forms and independent Monte-Carlo references.
//! * [`harness`]: trials, replications, Bellman-error sweeps and result files.
//! * [`verify`]: the acceptance checks, shared by the CLI and the test suite.

pub mod error;
pub mod estimators;
pub mod models;
pub mod harness;
pub mod oracles;
pub mod rng;
pub mod verify;

pub use error::{Error, Result};
