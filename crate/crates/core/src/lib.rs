//! Trajectory-entropy-constrained actor-critic learning.
//!
//! The crate provides a reward critic and a separate entropy critic whose
//! targets never involve the temperature, a temperature update that drives the
//! estimated discounted trajectory entropy toward a fixed budget, a SAC-style
//! maximum-entropy baseline sharing the same machinery, and exact tabular
//! solvers that check the underlying Bellman identities without function
//! approximation.

pub mod agent;
pub mod autodiff;
pub mod batch;
pub mod buffer;
pub mod critics;
pub mod env;
pub mod harness;
pub mod error;
pub mod policy;
pub mod verify;
pub mod seeding;

pub use error::{Error, Result};
