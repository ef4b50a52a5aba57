//! Reverse-mode differentiation for MLP chains, Adam, and Polyak averaging.
//!
//! Gradients accumulate across `backward` calls until `zero_grad`.

pub mod gradcheck;
mod mlp;
mod params;

pub use mlp::{Activation, Mlp, Tape};
pub use params::{adam_step, polyak_update, AdamConfig, ParamStore};
