//! DDIM sampling of one window's prediction segment.

use super::objective::{assemble_input, standard_normal_pairs, InputRow};
use super::NoiseSchedule;
use crate::conditioning::LatentSequence;
use crate::error::{Error, Result};
use crate::gaze::WindowSpec;

/// Stimulus context of one window: the latent stream and the frames it spans.
#[derive(Debug, Clone, Copy)]
pub struct WindowCond<'a> {
    pub latents: &'a LatentSequence,
    /// First source frame covered by the window.
    pub frame_start: usize,
    /// Number of frames covered, equal to the window length.
    pub len: usize,
}

/// Anything that predicts the injected noise for a window.
pub trait NoisePredictor: Sync {
    /// Predict noise for every row of `input` at diffusion step `t`.
    fn predict_noise(&self, input: &[InputRow], t: usize, cond: &WindowCond<'_>) -> Result<Vec<[f64; 2]>>;
}

/// Sampling-side configuration shared by DDIM and rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionConfig {
    pub schedule: NoiseSchedule,
    pub sample_steps: usize,
    pub window: WindowSpec,
    pub cond_stride: usize,
    /// DDIM stochasticity; 0 gives the deterministic sampler.
    pub eta: f64,
}

impl DiffusionConfig {
    pub fn new(schedule: NoiseSchedule, sample_steps: usize, window: WindowSpec, cond_stride: usize, eta: f64) -> Result<Self> {
        let cfg = Self {
            schedule,
            sample_steps,
            window,
            cond_stride,
            eta,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_steps == 0 || self.sample_steps > self.schedule.steps() {
            return Err(Error::invalid(format!(
                "sample_steps {} must lie in 1..={}",
                self.sample_steps,
                self.schedule.steps()
            )));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::invalid(format!("eta {} outside [0,1]", self.eta)));
        }
        if self.cond_stride == 0 {
            return Err(Error::invalid("cond_stride must be at least 1"));
        }
        Ok(())
    }
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            schedule: NoiseSchedule::default(),
            sample_steps: 50,
            window: WindowSpec {
                history_len: 90,
                predict_len: 45,
            },
            cond_stride: 5,
            eta: 0.0,
        }
    }
}

/// Descending DDIM timesteps: a uniform stride over `1..=T` that ends at `T`.
pub fn ddim_timesteps(train_steps: usize, sample_steps: usize) -> Vec<usize> {
    let mut ts: Vec<usize> = (1..=sample_steps)
        .map(|i| ((i * train_steps) as f64 / sample_steps as f64).round() as usize)
        .map(|t| t.clamp(1, train_steps))
        .collect();
    ts.dedup();
    ts.reverse();
    ts
}

/// Run the DDIM ladder from `init` (the suffix at step `T`) down to a clean
/// estimate. Returns the unclamped suffix.
pub fn ddim_denoise(
    history: &[[f64; 2]],
    init: Vec<[f64; 2]>,
    cond: &WindowCond<'_>,
    model: &dyn NoisePredictor,
    cfg: &DiffusionConfig,
    seed: u64,
) -> Result<Vec<[f64; 2]>> {
    let k = history.len();
    let n = k + init.len();
    let steps = ddim_timesteps(cfg.schedule.steps(), cfg.sample_steps);
    let mut rng = crate::seed::rng_for(seed, &[0xDD1B]);
    let mut x = init;

    for (i, &t) in steps.iter().enumerate() {
        let t_prev = steps.get(i + 1).copied().unwrap_or(0);
        let input = assemble_input(history, &x);
        let eps_full = model.predict_noise(&input, t, cond)?;
        if eps_full.len() != n {
            return Err(Error::shape("denoiser output", n, eps_full.len()));
        }
        let eps = &eps_full[k..];

        let ab = cfg.schedule.alpha_bar(t);
        let ab_prev = cfg.schedule.alpha_bar(t_prev);
        let sigma = if cfg.eta > 0.0 && t_prev > 0 {
            cfg.eta * ((1.0 - ab_prev) / (1.0 - ab)).sqrt() * (1.0 - ab / ab_prev).sqrt()
        } else {
            0.0
        };
        let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
        let noise = if sigma > 0.0 {
            standard_normal_pairs(&mut rng, x.len())
        } else {
            Vec::new()
        };
        for (j, (xi, e)) in x.iter_mut().zip(eps).enumerate() {
            for c in 0..2 {
                let x0 = (xi[c] - (1.0 - ab).sqrt() * e[c]) / ab.sqrt();
                let mut next = ab_prev.sqrt() * x0 + dir * e[c];
                if sigma > 0.0 {
                    next += sigma * noise[j][c];
                }
                xi[c] = next;
            }
        }
        if let Some((j, bad)) = x.iter().enumerate().find(|(_, v)| !(v[0].is_finite() && v[1].is_finite())) {
            return Err(Error::NonFinite(format!(
                "DDIM step {i} (t={t}) produced {bad:?} at suffix row {j}"
            )));
        }
    }
    Ok(x)
}

/// Sample the `predict_len` suffix following `history`, clamped to the unit square.
pub fn ddim_sample_window(
    history: &[[f64; 2]],
    cond: &WindowCond<'_>,
    model: &dyn NoisePredictor,
    cfg: &DiffusionConfig,
    seed: u64,
) -> Result<Vec<[f64; 2]>> {
    if history.len() != cfg.window.history_len {
        return Err(Error::shape("history", cfg.window.history_len, history.len()));
    }
    let mut rng = crate::seed::rng(seed);
    let init = standard_normal_pairs(&mut rng, cfg.window.predict_len);
    let x = ddim_denoise(history, init, cond, model, cfg, seed)?;
    Ok(x
        .into_iter()
        .map(|p| [p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0)])
        .collect())
}

/// Test oracle that knows the clean window and returns the exact noise that
/// separates each noisy suffix row from it.
pub struct OracleDenoiser<F> {
    schedule: NoiseSchedule,
    target: F,
}

impl<F> OracleDenoiser<F>
where
    F: Fn(&[InputRow], &WindowCond<'_>) -> Vec<[f64; 2]> + Sync,
{
    /// `target(input, cond)` returns the clean coordinates of the full window.
    pub fn new(schedule: NoiseSchedule, target: F) -> Self {
        Self { schedule, target }
    }
}

impl<F> NoisePredictor for OracleDenoiser<F>
where
    F: Fn(&[InputRow], &WindowCond<'_>) -> Vec<[f64; 2]> + Sync,
{
    fn predict_noise(&self, input: &[InputRow], t: usize, cond: &WindowCond<'_>) -> Result<Vec<[f64; 2]>> {
        self.schedule.check_step(t)?;
        let x0 = (self.target)(input, cond);
        let ab = self.schedule.alpha_bar(t);
        Ok(input
            .iter()
            .zip(&x0)
            .map(|(row, x)| {
                if row[2] == 1.0 {
                    [0.0, 0.0]
                } else {
                    [
                        (row[0] - ab.sqrt() * x[0]) / (1.0 - ab).sqrt(),
                        (row[1] - ab.sqrt() * x[1]) / (1.0 - ab).sqrt(),
                    ]
                }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditioning::{temporal_subsample, PooledFrames};
    use crate::diffusion::forward_noise;

    fn latents(frames: usize) -> LatentSequence {
        temporal_subsample(
            &PooledFrames {
                cells: vec![0.5; frames],
                frame_count: frames,
                rows: 1,
                cols: 1,
                rate_hz: 30.0,
            },
            5,
        )
        .unwrap()
    }

    fn cfg(k: usize, p: usize, steps: usize) -> DiffusionConfig {
        DiffusionConfig::new(NoiseSchedule::default(), steps, WindowSpec::new(k, p).unwrap(), 5, 0.0).unwrap()
    }

    #[test]
    fn timestep_ladders() {
        let t50 = ddim_timesteps(1000, 50);
        assert_eq!(t50.len(), 50);
        assert_eq!(t50[0], 1000);
        assert_eq!(*t50.last().unwrap(), 20);
        assert!(t50.windows(2).all(|w| w[0] - w[1] == 20));
        let full = ddim_timesteps(1000, 1000);
        assert_eq!(full, (1..=1000).rev().collect::<Vec<_>>());
    }

    #[test]
    fn oracle_single_step_inverts_forward_noise() {
        let sched = NoiseSchedule::default();
        let x0: Vec<[f64; 2]> = (0..8).map(|i| [0.1 * i as f64, 0.9 - 0.1 * i as f64]).collect();
        let lat = latents(20);
        let cond = WindowCond {
            latents: &lat,
            frame_start: 0,
            len: 8,
        };
        let target = x0.clone();
        let oracle = OracleDenoiser::new(sched.clone(), move |_: &[InputRow], _: &WindowCond<'_>| target.clone());
        for &t in &[1usize, 37, 500, 1000] {
            let mut rng = crate::seed::rng(t as u64);
            let eps = standard_normal_pairs(&mut rng, 8);
            let xt = forward_noise(&x0, t, &eps, &sched).unwrap();
            let input = assemble_input(&[], &xt);
            let e = oracle.predict_noise(&input, t, &cond).unwrap();
            let ab = sched.alpha_bar(t);
            for ((x, e), want) in xt.iter().zip(&e).zip(&x0) {
                for c in 0..2 {
                    let rec = (x[c] - (1.0 - ab).sqrt() * e[c]) / ab.sqrt();
                    assert!((rec - want[c]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn deterministic_and_ladder_independent_with_oracle() {
        let sched = NoiseSchedule::default();
        let history = vec![[0.3, 0.3]; 4];
        let window: Vec<[f64; 2]> = (0..12).map(|i| [0.3 + 0.02 * i as f64, 0.3 + 0.01 * i as f64]).collect();
        let lat = latents(20);
        let cond = WindowCond {
            latents: &lat,
            frame_start: 0,
            len: 12,
        };
        let w = window.clone();
        let oracle = OracleDenoiser::new(sched, move |_: &[InputRow], _: &WindowCond<'_>| w.clone());
        let a = ddim_sample_window(&history, &cond, &oracle, &cfg(4, 8, 50), 9).unwrap();
        let b = ddim_sample_window(&history, &cond, &oracle, &cfg(4, 8, 50), 9).unwrap();
        assert_eq!(a, b);
        let full = ddim_sample_window(&history, &cond, &oracle, &cfg(4, 8, 1000), 9).unwrap();
        for ((x, y), want) in a.iter().zip(&full).zip(&window[4..]) {
            for c in 0..2 {
                assert!((x[c] - want[c]).abs() < 1e-9);
                assert!((y[c] - want[c]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rejects_bad_history_and_output_shape() {
        let sched = NoiseSchedule::default();
        let lat = latents(20);
        let cond = WindowCond {
            latents: &lat,
            frame_start: 0,
            len: 12,
        };
        let oracle = OracleDenoiser::new(sched, |_: &[InputRow], _: &WindowCond<'_>| vec![[0.5, 0.5]; 3]);
        assert!(ddim_sample_window(&[[0.1, 0.1]; 3], &cond, &oracle, &cfg(4, 8, 10), 0).is_err());
        assert!(matches!(
            ddim_sample_window(&[[0.1, 0.1]; 4], &cond, &oracle, &cfg(4, 8, 10), 0),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn non_finite_model_output_aborts() {
        struct Nan;
        impl NoisePredictor for Nan {
            fn predict_noise(&self, input: &[InputRow], _t: usize, _c: &WindowCond<'_>) -> Result<Vec<[f64; 2]>> {
                Ok(vec![[f64::NAN, 0.0]; input.len()])
            }
        }
        let lat = latents(20);
        let cond = WindowCond {
            latents: &lat,
            frame_start: 0,
            len: 6,
        };
        let err = ddim_sample_window(&[[0.1, 0.1]; 2], &cond, &Nan, &cfg(2, 4, 10), 0).unwrap_err();
        assert!(err.is_numerical());
    }

    #[test]
    fn config_validation() {
        let w = WindowSpec::new(2, 2).unwrap();
        assert!(DiffusionConfig::new(NoiseSchedule::default(), 1001, w, 5, 0.0).is_err());
        assert!(DiffusionConfig::new(NoiseSchedule::default(), 50, w, 5, 1.5).is_err());
        assert!(DiffusionConfig::new(NoiseSchedule::default(), 50, w, 0, 0.0).is_err());
    }
}
