//! Noise schedules, forward corruption and the DDPM / DDIM reverse steppers.

mod sampler;
mod schedule;

pub use sampler::{
    ddim_step, ddim_timesteps, ddpm_equivalent_sigma, ddpm_step, forward_diffuse, reconstruct, reconstruct_batch,
    standard_normal, NoisePredictor, NoisySample, Reconstruction,
};
pub use schedule::{sigmoid_alpha_bar, DiffusionConfig, NoiseSchedule, SamplerKind, ScheduleKind};
