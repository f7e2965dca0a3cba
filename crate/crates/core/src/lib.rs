//! Autoregressive diffusion generation of raw gaze trajectories for video.
//!
//! The crate is organised bottom-up:
//!
//! - [`gaze`]: trajectory data model, resampling, windowing, CSV files.
//! - [`conditioning`]: saliency clips, pooling into conditioning tokens, and
//!   the synthetic stimulus/observer simulator.
//! - [`diffusion`]: noise schedule, masked-suffix objective, DDIM sampling and
//!   sliding-window rollout.
//! - [`denoiser`]: the 1D U-Net noise predictor with hand-written gradients,
//!   Adam, checkpoints and the training loop.
//! - [`metrics`]: Levenshtein, discrete Fréchet, DTW, maximum temporal
//!   correlation, the best/mean evaluation protocol and a random-walk baseline.
//! - [`config`]: the flat `key = value` run configuration.
//! - [`dataset`]: manifest, synthetic dataset writer and trajectory loaders.
//! - [`pipeline`]: dataset-level train, generate, baseline and evaluate steps.

pub mod conditioning;
pub mod config;
pub mod dataset;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod gaze;
pub mod metrics;
pub mod pipeline;
pub mod seed;

pub use config::RunConfig;
pub use error::{Error, Result};
