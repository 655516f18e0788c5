//! Noise schedules and the diffusion sampling machinery.

pub mod sampler;
pub mod schedule;

pub use sampler::{
    cfg_combine, condition_dropout, conditioning_augment, guided_x0, p_sample_step,
    posterior_mean, q_sample, sample_loop, Condition, ReverseNoise, SamplerConfig, X0Model,
};
pub use schedule::{NoiseSchedule, ScheduleKind};
