//! Minibatch Adam training on the masked-suffix objective.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::params::{adam_step, AdamConfig};
use super::{window_tokens, Denoiser};
use crate::conditioning::LatentSequence;
use crate::diffusion::{ddpm_loss_grad, make_training_example, NoiseSchedule, WindowCond};
use crate::error::{Error, Result};
use crate::gaze::{to_windows, GazeTrajectory, WindowSpec};

const SHUFFLE_LABEL: u64 = 0x5348_5546;

/// One training window and the stimulus frame its first sample falls on.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainWindow {
    pub video: usize,
    pub frame_start: usize,
    pub coords: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainSet {
    /// Conditioning per video; `TrainWindow::video` indexes into it.
    pub latents: Vec<LatentSequence>,
    pub windows: Vec<TrainWindow>,
}

impl TrainSet {
    /// Cut `traj` into windows advancing by `stride` samples. The trajectory
    /// must be sampled at the stimulus rate.
    pub fn add_trajectory(&mut self, video: usize, traj: &GazeTrajectory, spec: WindowSpec, stride: usize) -> Result<usize> {
        let lat = self
            .latents
            .get(video)
            .ok_or_else(|| Error::invalid(format!("no latents registered for video {video}")))?;
        if (traj.rate_hz - lat.source_rate_hz).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "trajectory rate {} Hz differs from stimulus rate {} Hz",
                traj.rate_hz, lat.source_rate_hz
            )));
        }
        let ws = to_windows(traj, spec, stride)?;
        let mut added = 0;
        for w in ws.windows {
            let frame_start = (traj.samples[w.start].t * lat.source_rate_hz).round();
            if frame_start < 0.0 || !lat.covers(frame_start as usize, w.coords.len()) {
                continue;
            }
            self.windows.push(TrainWindow {
                video,
                frame_start: frame_start as usize,
                coords: w.coords,
            });
            added += 1;
        }
        Ok(added)
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Epoch index to start from; resumed runs continue the seeded streams.
    pub start_epoch: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// History length is drawn uniformly from `history_min..=history_max`.
    pub history_min: usize,
    pub history_max: usize,
    pub schedule: NoiseSchedule,
    pub seed: u64,
}

impl TrainConfig {
    fn validate(&self, window_len: usize) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if self.history_min > self.history_max || self.history_max >= window_len {
            return Err(Error::invalid(format!(
                "history range {}..={} must lie below the window length {window_len}",
                self.history_min, self.history_max
            )));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

fn example_gradient(model: &Denoiser, data: &TrainSet, cfg: &TrainConfig, epoch: usize, wi: usize) -> Result<(f64, Vec<Vec<f64>>)> {
    let w = &data.windows[wi];
    let mut rng = crate::seed::rng_for(cfg.seed, &[epoch as u64, wi as u64]);
    let k = rng.gen_range(cfg.history_min..=cfg.history_max);
    let t = rng.gen_range(1..=cfg.schedule.steps());
    let ex = make_training_example(&w.coords, k, t, rng.gen(), &cfg.schedule)?;
    let tokens = window_tokens(&WindowCond {
        latents: &data.latents[w.video],
        frame_start: w.frame_start,
        len: w.coords.len(),
    })?;
    let (pred, tape) = model.forward_tape(&ex.input, t, &tokens)?;
    let (mut loss, mut dpred) = ddpm_loss_grad(&pred, &ex.target_eps, &ex.mask)?;
    if let Some(pc) = &model.config.precondition {
        let w = pc.loss_weight(t);
        loss *= w;
        dpred.iter_mut().flatten().for_each(|d| *d *= w);
    }
    let (grads, _) = model.backward(&tape, &dpred)?;
    Ok((loss, grads))
}

/// Train for `cfg.epochs` epochs and return the mean loss of each.
/// `on_epoch(epoch, loss)` runs after every epoch.
///
/// Examples within a batch run in parallel; their gradients are summed in
/// batch order so results do not depend on the thread count.
pub fn train(model: &mut Denoiser, data: &TrainSet, cfg: &TrainConfig, on_epoch: &mut dyn FnMut(usize, f64)) -> Result<Vec<f64>> {
    if data.windows.is_empty() {
        return Err(Error::invalid("training set has no windows"));
    }
    cfg.validate(model.config.window_len)?;
    if let Some(w) = data.windows.iter().find(|w| w.coords.len() != model.config.window_len) {
        return Err(Error::shape("training window", model.config.window_len, w.coords.len()));
    }

    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in cfg.start_epoch..cfg.start_epoch + cfg.epochs {
        let mut order: Vec<usize> = (0..data.windows.len()).collect();
        order.shuffle(&mut crate::seed::rng_for(cfg.seed, &[SHUFFLE_LABEL, epoch as u64]));
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<Result<(f64, Vec<Vec<f64>>)>> = {
                let m: &Denoiser = model;
                batch.par_iter().map(|&wi| example_gradient(m, data, cfg, epoch, wi)).collect()
            };
            let mut sum = model.params.zeros_like();
            let mut batch_loss = 0.0;
            for r in results {
                let (loss, g) = r?;
                batch_loss += loss;
                for (s, t) in sum.iter_mut().zip(&g) {
                    s.iter_mut().zip(t).for_each(|(a, b)| *a += b);
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss in epoch {epoch}, batch windows {batch:?}"
                )));
            }
            let scale = 1.0 / batch.len() as f64;
            for s in &mut sum {
                s.iter_mut().for_each(|v| *v *= scale);
            }
            adam_step(&mut model.params, &sum, &cfg.adam)?;
            model.params.grads = sum;
            total += batch_loss;
        }
        let mean = total / data.windows.len() as f64;
        log::info!("epoch {epoch}: loss {mean:.5}");
        on_epoch(epoch, mean);
        curve.push(mean);
    }
    Ok(curve)
}
