//! Sliding-window autoregressive generation.

use rayon::prelude::*;

use super::sampler::{ddim_sample_window, DiffusionConfig, NoisePredictor, WindowCond};
use crate::conditioning::LatentSequence;
use crate::error::{Error, Result};
use crate::gaze::GazeTrajectory;

/// How the first window's history is filled.
#[derive(Debug, Clone, PartialEq)]
pub enum InitHistory {
    /// Observed coordinates; the last `k` are used.
    Warm(Vec<[f64; 2]>),
    /// A single point replicated over the whole history.
    Cold([f64; 2]),
}

impl InitHistory {
    pub fn materialize(&self, k: usize) -> Result<Vec<[f64; 2]>> {
        match self {
            InitHistory::Warm(points) => {
                if points.len() < k {
                    return Err(Error::invalid(format!(
                        "warm start needs {k} history samples, got {}",
                        points.len()
                    )));
                }
                Ok(points[points.len() - k..].to_vec())
            }
            InitHistory::Cold(p) => Ok(vec![*p; k]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RolloutOutput {
    /// Generated samples only; the initial history is not repeated.
    pub trajectory: GazeTrajectory,
    /// History fed to each sampled window, in order.
    pub window_histories: Vec<Vec<[f64; 2]>>,
    /// Set when the stimulus ended before the horizon was reached.
    pub truncated: bool,
}

/// Generate `horizon` samples following the history that ends at frame
/// `start_frame + k`. Window `m` covers frames `start_frame + m*p ..+ n`,
/// uses seed `seed ^ m`, and its history is the latest `k` coordinates.
#[allow(clippy::too_many_arguments)]
pub fn rollout(
    init: &InitHistory,
    latents: &LatentSequence,
    model: &dyn NoisePredictor,
    cfg: &DiffusionConfig,
    horizon: usize,
    seed: u64,
    start_frame: usize,
) -> Result<RolloutOutput> {
    if horizon == 0 {
        return Err(Error::invalid("rollout horizon must be at least one sample"));
    }
    if latents.sets.is_empty() {
        return Err(Error::invalid("rollout needs a non-empty latent sequence"));
    }
    let k = cfg.window.history_len;
    let p = cfg.window.predict_len;
    let n = cfg.window.window_len();

    let mut history = init.materialize(k)?;
    let mut emitted: Vec<[f64; 2]> = Vec::with_capacity(horizon + p);
    let mut window_histories = Vec::new();
    let mut truncated = false;
    let mut m = 0usize;
    while emitted.len() < horizon {
        let frame_start = start_frame + m * p;
        if !latents.covers(frame_start, n) {
            truncated = true;
            break;
        }
        let cond = WindowCond {
            latents,
            frame_start,
            len: n,
        };
        let out = ddim_sample_window(&history, &cond, model, cfg, seed ^ m as u64)?;
        window_histories.push(history.clone());
        emitted.extend_from_slice(&out);
        if k > 0 {
            let mut next: Vec<[f64; 2]> = history.iter().chain(&out).copied().collect();
            next.drain(..next.len() - k);
            history = next;
        }
        m += 1;
    }
    if emitted.is_empty() {
        return Err(Error::invalid(format!(
            "stimulus of {} frames cannot hold a {n}-frame window starting at frame {start_frame}",
            latents.frame_count
        )));
    }
    emitted.truncate(horizon);

    let rate = latents.source_rate_hz;
    let t0 = (start_frame + k) as f64 / rate;
    let trajectory = GazeTrajectory::from_points(&emitted, t0, rate, "rollout", "")?;
    Ok(RolloutOutput {
        trajectory,
        window_histories,
        truncated,
    })
}

/// `count` independent rollouts run in parallel. Sample `s` uses seed
/// `derive(seed, [s])`, so results do not depend on the thread count.
#[allow(clippy::too_many_arguments)]
pub fn rollout_samples(
    init: &InitHistory,
    latents: &LatentSequence,
    model: &dyn NoisePredictor,
    cfg: &DiffusionConfig,
    horizon: usize,
    count: usize,
    seed: u64,
    start_frame: usize,
) -> Result<Vec<RolloutOutput>> {
    (0..count)
        .into_par_iter()
        .map(|s| {
            rollout(
                init,
                latents,
                model,
                cfg,
                horizon,
                crate::seed::derive(seed, &[s as u64]),
                start_frame,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditioning::{temporal_subsample, PooledFrames};
    use crate::diffusion::objective::InputRow;
    use crate::diffusion::sampler::OracleDenoiser;
    use crate::diffusion::NoiseSchedule;
    use crate::gaze::WindowSpec;

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

    /// Oracle that drifts right from the last history point.
    fn drifting_oracle() -> OracleDenoiser<impl Fn(&[InputRow], &WindowCond<'_>) -> Vec<[f64; 2]> + Sync> {
        OracleDenoiser::new(NoiseSchedule::default(), |input: &[InputRow], _: &WindowCond<'_>| {
            let k = input.iter().take_while(|r| r[2] == 1.0).count();
            let last = if k > 0 { [input[k - 1][0], input[k - 1][1]] } else { [0.5, 0.5] };
            (0..input.len())
                .map(|i| {
                    if i < k {
                        [input[i][0], input[i][1]]
                    } else {
                        [last[0] + 0.003 * (i - k + 1) as f64, last[1]]
                    }
                })
                .collect()
        })
    }

    fn cfg(k: usize, p: usize, steps: usize) -> DiffusionConfig {
        DiffusionConfig::new(NoiseSchedule::default(), steps, WindowSpec::new(k, p).unwrap(), 5, 0.0).unwrap()
    }

    #[test]
    fn window_count_and_length() {
        let lat = latents(600);
        let out = rollout(&InitHistory::Cold([0.5, 0.5]), &lat, &drifting_oracle(), &cfg(90, 45, 10), 90, 1, 0).unwrap();
        assert_eq!(out.window_histories.len(), 2);
        assert_eq!(out.trajectory.len(), 90);
        assert!(!out.truncated);
        assert!((out.trajectory.samples[0].t - 3.0).abs() < 1e-12);
    }

    #[test]
    fn cold_start_replicates_point() {
        let h = InitHistory::Cold([0.5, 0.5]).materialize(90).unwrap();
        assert_eq!(h, vec![[0.5, 0.5]; 90]);
        let lat = latents(600);
        let out = rollout(&InitHistory::Cold([0.5, 0.5]), &lat, &drifting_oracle(), &cfg(90, 45, 5), 45, 1, 0).unwrap();
        assert_eq!(out.window_histories[0], vec![[0.5, 0.5]; 90]);
    }

    #[test]
    fn oracle_rollout_structure_and_history_contract() {
        let lat = latents(900);
        let (k, p) = (90, 45);
        let out = rollout(&InitHistory::Cold([0.2, 0.4]), &lat, &drifting_oracle(), &cfg(k, p, 50), 450, 7, 0).unwrap();
        let traj = &out.trajectory;
        assert_eq!(traj.len(), 450);
        for s in &traj.samples {
            assert!(s.x.is_finite() && s.y.is_finite());
            assert!((0.0..=1.0).contains(&s.x) && (0.0..=1.0).contains(&s.y));
        }
        for w in traj.samples.windows(2) {
            assert!((w[1].t - w[0].t - 1.0 / 30.0).abs() < 1e-9);
        }
        let pts = traj.points();
        for m in 2..out.window_histories.len() {
            let lo = m * p - k;
            assert_eq!(&pts[lo..m * p], &out.window_histories[m][..]);
        }
    }

    #[test]
    fn truncates_at_stimulus_end() {
        let lat = latents(200);
        let out = rollout(&InitHistory::Cold([0.5, 0.5]), &lat, &drifting_oracle(), &cfg(90, 45, 5), 450, 1, 0).unwrap();
        assert!(out.truncated);
        // Windows start at frames 0 and 45; the next would need frames up to 225.
        assert_eq!(out.trajectory.len(), 90);
        let tiny = latents(100);
        assert!(rollout(&InitHistory::Cold([0.5, 0.5]), &tiny, &drifting_oracle(), &cfg(90, 45, 5), 45, 1, 0).is_err());
    }

    #[test]
    fn deterministic_for_seed() {
        let lat = latents(400);
        let a = rollout(&InitHistory::Cold([0.5, 0.5]), &lat, &drifting_oracle(), &cfg(20, 10, 20), 100, 3, 0).unwrap();
        let b = rollout(&InitHistory::Cold([0.5, 0.5]), &lat, &drifting_oracle(), &cfg(20, 10, 20), 100, 3, 0).unwrap();
        assert_eq!(a.trajectory, b.trajectory);
    }

    #[test]
    fn samples_differ_but_repeat() {
        let lat = latents(400);
        let c = cfg(20, 10, 10);
        let run = || rollout_samples(&InitHistory::Cold([0.5, 0.5]), &lat, &drifting_oracle(), &c, 30, 3, 9, 0).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.len(), 3);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.trajectory, y.trajectory);
        }
    }

    #[test]
    fn warm_start_needs_enough_history() {
        assert!(InitHistory::Warm(vec![[0.1, 0.1]; 3]).materialize(4).is_err());
        let h = InitHistory::Warm((0..6).map(|i| [i as f64, 0.0]).collect()).materialize(4).unwrap();
        assert_eq!(h[0], [2.0, 0.0]);
    }
}
