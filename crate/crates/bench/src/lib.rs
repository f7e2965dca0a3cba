//! Shared fixtures for the criterion benches.

use gazegen::dataset::synth_video;
use gazegen::denoiser::{window_tokens, CondTokens, Denoiser};
use gazegen::diffusion::{assemble_input, InputRow, WindowCond};
use gazegen::RunConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A smooth random path of `n` points in the unit square.
pub fn wander(n: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = [0.5f64, 0.5];
    (0..n)
        .map(|_| {
            for v in &mut p {
                *v = (*v + rng.gen_range(-0.02..0.02)).clamp(0.0, 1.0);
            }
            p
        })
        .collect()
}

/// The toy model with one training window's worth of input.
pub struct DenoiserCase {
    pub model: Denoiser,
    pub input: Vec<InputRow>,
    pub tokens: CondTokens,
}

pub fn denoiser_case() -> DenoiserCase {
    let cfg = RunConfig {
        clips: 1,
        duration_s: 10.0,
        ..RunConfig::default()
    };
    let video = synth_video(&cfg, 0).expect("synthetic clip");
    let latents = gazegen::conditioning::encode_clip(&video.clip, (cfg.grid_rows, cfg.grid_cols), cfg.cond_stride)
        .expect("latents");
    let n = cfg.history_len + cfg.predict_len;
    let path = video.observers[0].points();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noisy: Vec<[f64; 2]> = (0..cfg.predict_len).map(|_| [rng.gen(), rng.gen()]).collect();
    let input = assemble_input(&path[..cfg.history_len], &noisy);
    let tokens = window_tokens(&WindowCond {
        latents: &latents,
        frame_start: 0,
        len: n,
    })
    .expect("tokens");
    let model = Denoiser::new(cfg.denoiser().expect("config"), 7).expect("model");
    DenoiserCase { model, input, tokens }
}
