//! Proximal diffusion neural samplers for unnormalized Boltzmann targets.
//!
//! Continuous targets are sampled by a controlled Ornstein-Uhlenbeck SDE and
//! discrete targets by a masked CTMC. Both are trained in stages with
//! importance-weighted denoising cross-entropy, where each stage tempers the
//! weights by a proximal step size.

pub mod approximator;
pub mod baselines;
pub mod cli;
pub mod config;
pub mod ctmc;
pub mod error;
pub mod evaluate;
pub mod io;
pub mod metrics;
pub mod ou;
pub mod proximal;
pub mod rng;
pub mod sde;
pub mod targets;
pub mod trainer;

pub use error::{Error, Result};
