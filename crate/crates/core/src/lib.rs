//! Flow-matching inverse reinforcement learning at desk scale.
//!
//! A conditional flow-matching model over joint state-action vectors is
//! trained adversarially as a discriminator whose logit is the reward for a
//! small Gaussian MLP policy. The same model generates expert-like pairs that
//! regularize the policy directly. Everything runs on a small built-in
//! autodiff substrate ([`nn`]) and two toy navigation tasks ([`env`]).
//!
//! See `examples/` for one runnable program per capability.

pub mod agent;
pub mod baselines;
pub mod disc;
pub mod env;
pub mod error;
pub mod flow;
pub mod harness;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
