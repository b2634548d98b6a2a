//! Proximal importance weights, effective sample size, step-size schedules,
//! the replay buffer, and resampling.

mod buffer;
mod scheduler;
mod weights;

pub use buffer::{resample, resample_indices, BufferEntry, ReplayBuffer, ResampleScheme};
pub use scheduler::{ScheduleSpec, SchedulerState};
pub use weights::{
    adaptive_eta, adaptive_gamma, base_log_weight, cap_weights, ess, kl_estimate, normalize, normalize_and_ess,
    predefined_eta, proximal_log_weight, BaseWeight, Eta, ProxTarget, GAMMA_TOL,
};
