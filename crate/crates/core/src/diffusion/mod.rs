//! Noise schedule, masked-suffix objective, DDIM sampling and autoregressive
//! rollout over sliding windows.

mod objective;
mod rollout;
mod sampler;
mod schedule;

pub use objective::{
    assemble_input, ddpm_loss, ddpm_loss_grad, forward_noise, make_training_example,
    make_training_example_with_noise, standard_normal_pairs, InputRow, TrainingExample,
};
pub use rollout::{rollout, rollout_samples, InitHistory, RolloutOutput};
pub use sampler::{
    ddim_denoise, ddim_sample_window, ddim_timesteps, DiffusionConfig, NoisePredictor, OracleDenoiser,
    WindowCond,
};
pub use schedule::{linear_beta_schedule, NoiseSchedule};
