//! Synthetic stimuli and oracle observers.
//!
//! Scenes are sums of isotropic Gaussian blobs drifting with
//! Ornstein-Uhlenbeck velocities inside the unit square. The oracle observer
//! reads only the rendered saliency frames: it fixates the tracked peak with
//! jitter, follows it with a first-order lag, and jumps between peaks along
//! minimum-jerk saccades.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::SaliencyClip;
use crate::error::{Error, Result};
use crate::gaze::{GazeSample, GazeTrajectory};
use crate::seed;

/// Correlation time of blob velocities, seconds.
const VELOCITY_TAU_S: f64 = 1.0;
/// Peaks below this fraction of the frame maximum are ignored.
const PEAK_FLOOR: f32 = 0.25;
const MAX_PEAKS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSceneSpec {
    pub blob_count: usize,
    /// Blob standard deviation in normalized units.
    pub blob_sigma: f64,
    /// Stationary per-axis velocity standard deviation, normalized units per second.
    pub motion_speed: f64,
    pub seed: u64,
    pub duration_s: f64,
    pub rate_hz: f64,
    pub height: usize,
    pub width: usize,
}

impl SynthSceneSpec {
    pub fn frame_count(&self) -> usize {
        (self.duration_s * self.rate_hz).round().max(1.0) as usize
    }

    fn validate(&self) -> Result<()> {
        if self.blob_count == 0 {
            return Err(Error::invalid("blob_count must be positive"));
        }
        if !(self.blob_sigma > 0.0) {
            return Err(Error::invalid("blob_sigma must be positive"));
        }
        if !(self.duration_s > 0.0) || !(self.rate_hz > 0.0) {
            return Err(Error::invalid("duration and rate must be positive"));
        }
        if self.motion_speed < 0.0 {
            return Err(Error::invalid("motion_speed must be non-negative"));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::invalid("frame size must be positive"));
        }
        Ok(())
    }
}

/// Render the scene and also return each blob's center per frame.
pub fn synth_scene_tracks(spec: &SynthSceneSpec) -> Result<(SaliencyClip, Vec<Vec<[f64; 2]>>)> {
    spec.validate()?;
    let mut rng = seed::rng_for(spec.seed, &[0x5CE4E]);
    let frames = spec.frame_count();
    let dt = 1.0 / spec.rate_hz;
    let decay = (-dt / VELOCITY_TAU_S).exp();
    let kick = spec.motion_speed * (1.0 - decay * decay).sqrt();

    let mut pos: Vec<[f64; 2]> = (0..spec.blob_count)
        .map(|_| [rng.gen_range(0.15..0.85), rng.gen_range(0.15..0.85)])
        .collect();
    let amp: Vec<f64> = (0..spec.blob_count).map(|_| rng.gen_range(0.6..1.0)).collect();
    let mut vel: Vec<[f64; 2]> = (0..spec.blob_count)
        .map(|_| {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            [a * spec.motion_speed, b * spec.motion_speed]
        })
        .collect();

    let (h, w) = (spec.height, spec.width);
    let inv2s2 = 1.0 / (2.0 * spec.blob_sigma * spec.blob_sigma);
    let mut data = Vec::with_capacity(frames * h * w);
    let mut tracks = Vec::with_capacity(frames);
    let mut frame = vec![0.0f64; h * w];
    let mut gx = vec![0.0f64; w];
    let mut gy = vec![0.0f64; h];

    for _ in 0..frames {
        frame.iter_mut().for_each(|v| *v = 0.0);
        for (b, c) in pos.iter().enumerate() {
            for (j, g) in gx.iter_mut().enumerate() {
                let d = (j as f64 + 0.5) / w as f64 - c[0];
                *g = (-d * d * inv2s2).exp();
            }
            for (i, g) in gy.iter_mut().enumerate() {
                let d = (i as f64 + 0.5) / h as f64 - c[1];
                *g = amp[b] * (-d * d * inv2s2).exp();
            }
            for (i, &yv) in gy.iter().enumerate() {
                for (v, &xv) in frame[i * w..(i + 1) * w].iter_mut().zip(&gx) {
                    *v += yv * xv;
                }
            }
        }
        let max = frame.iter().cloned().fold(0.0f64, f64::max);
        let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
        data.extend(frame.iter().map(|&v| ((v * scale) as f32).min(1.0)));
        tracks.push(pos.clone());

        for (p, v) in pos.iter_mut().zip(vel.iter_mut()) {
            for a in 0..2 {
                let n: f64 = StandardNormal.sample(&mut rng);
                v[a] = v[a] * decay + kick * n;
                p[a] += v[a] * dt;
                // Reflect off the walls of the unit square.
                if p[a] < 0.0 {
                    p[a] = -p[a];
                    v[a] = -v[a];
                } else if p[a] > 1.0 {
                    p[a] = 2.0 - p[a];
                    v[a] = -v[a];
                }
                p[a] = p[a].clamp(0.0, 1.0);
            }
        }
    }

    let video_id = format!("synth-{:016x}", spec.seed);
    let clip = SaliencyClip::new(data, frames, h, w, spec.rate_hz, video_id)?;
    Ok((clip, tracks))
}

pub fn synth_scene(spec: &SynthSceneSpec) -> Result<SaliencyClip> {
    synth_scene_tracks(spec).map(|(c, _)| c)
}

/// Behavioural parameters of the oracle observer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeOracleParams {
    /// Mean time spent on a peak before looking elsewhere, seconds.
    pub fixation_dwell_s: f64,
    pub saccade_dur_s: f64,
    /// Fraction of the remaining offset to the tracked peak closed each sample.
    pub pursuit_gain: f64,
    /// Standard deviation of per-sample positional noise, normalized units.
    pub jitter_sigma: f64,
}

impl Default for GazeOracleParams {
    fn default() -> Self {
        Self {
            fixation_dwell_s: 1.0,
            saccade_dur_s: 0.1,
            pursuit_gain: 0.3,
            jitter_sigma: 0.004,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Peak {
    pos: [f64; 2],
    value: f32,
}

/// Sub-pixel offset of a log-parabola through three samples.
fn log_parabola_offset(a: f32, b: f32, c: f32) -> f64 {
    if a <= 0.0 || b <= 0.0 || c <= 0.0 {
        return 0.0;
    }
    let (la, lb, lc) = ((a as f64).ln(), (b as f64).ln(), (c as f64).ln());
    let denom = la - 2.0 * lb + lc;
    if denom >= 0.0 {
        return 0.0;
    }
    (0.5 * (la - lc) / denom).clamp(-0.5, 0.5)
}

/// Local maxima of a frame, strongest first, refined to sub-pixel accuracy.
/// For an isotropic Gaussian the log-parabola refinement is exact.
fn detect_peaks(frame: &[f32], h: usize, w: usize) -> Vec<Peak> {
    let max = frame.iter().cloned().fold(0.0f32, f32::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let floor = PEAK_FLOOR * max;
    let at = |i: isize, j: isize| -> f32 {
        if i < 0 || j < 0 || i >= h as isize || j >= w as isize {
            f32::NEG_INFINITY
        } else {
            frame[i as usize * w + j as usize]
        }
    };
    let mut peaks = Vec::new();
    for i in 0..h as isize {
        for j in 0..w as isize {
            let v = at(i, j);
            if v < floor {
                continue;
            }
            let mut is_max = true;
            'nb: for di in -1..=1 {
                for dj in -1..=1 {
                    if (di, dj) == (0, 0) {
                        continue;
                    }
                    let u = at(i + di, j + dj);
                    // Ties break toward the earlier pixel in raster order.
                    if u > v || (u == v && (di < 0 || (di == 0 && dj < 0))) {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if !is_max {
                continue;
            }
            let dx = if j > 0 && j + 1 < w as isize {
                log_parabola_offset(at(i, j - 1), v, at(i, j + 1))
            } else {
                0.0
            };
            let dy = if i > 0 && i + 1 < h as isize {
                log_parabola_offset(at(i - 1, j), v, at(i + 1, j))
            } else {
                0.0
            };
            peaks.push(Peak {
                pos: [
                    ((j as f64 + 0.5 + dx) / w as f64).clamp(0.0, 1.0),
                    ((i as f64 + 0.5 + dy) / h as f64).clamp(0.0, 1.0),
                ],
                value: v,
            });
        }
    }
    peaks.sort_by(|a, b| b.value.total_cmp(&a.value));
    peaks.truncate(MAX_PEAKS);
    peaks
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn nearest(peaks: &[Peak], p: [f64; 2]) -> Option<usize> {
    (0..peaks.len()).min_by(|&a, &b| dist2(peaks[a].pos, p).total_cmp(&dist2(peaks[b].pos, p)))
}

/// Minimum-jerk position profile on `[0, 1]`.
fn min_jerk(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}

enum Mode {
    Pursuit { remaining_s: f64 },
    Saccade { from: [f64; 2], elapsed_s: f64 },
}

/// Simulate one observer watching `clip`. Output is at the clip rate with
/// sample `i` at `i / rate`.
pub fn synth_gaze_oracle(
    clip: &SaliencyClip,
    seed: u64,
    params: &GazeOracleParams,
) -> Result<GazeTrajectory> {
    if clip.frame_count == 0 {
        return Err(Error::invalid("empty clip"));
    }
    if !(params.pursuit_gain > 0.0 && params.pursuit_gain <= 1.0) {
        return Err(Error::invalid("pursuit_gain must lie in (0, 1]"));
    }
    if !(params.saccade_dur_s > 0.0) || !(params.fixation_dwell_s > 0.0) || params.jitter_sigma < 0.0 {
        return Err(Error::invalid("oracle durations must be positive and jitter non-negative"));
    }
    let mut rng = seed::rng_for(seed, &[0x6A2E]);
    let dt = 1.0 / clip.rate_hz;
    let (h, w) = (clip.height, clip.width);
    let draw_dwell = |rng: &mut rand_chacha::ChaCha8Rng| params.fixation_dwell_s * rng.gen_range(0.5..1.5);

    let first = detect_peaks(clip.frame(0), h, w);
    let mut target = first.first().map_or([0.5, 0.5], |p| p.pos);
    let mut gaze = target;
    let mut mode = Mode::Pursuit {
        remaining_s: draw_dwell(&mut rng),
    };

    let mut samples = Vec::with_capacity(clip.frame_count);
    for f in 0..clip.frame_count {
        let peaks = if f == 0 { first.clone() } else { detect_peaks(clip.frame(f), h, w) };
        if let Some(i) = nearest(&peaks, target) {
            target = peaks[i].pos;
        }

        let (jx, jy) = if params.jitter_sigma > 0.0 {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            (a * params.jitter_sigma, b * params.jitter_sigma)
        } else {
            (0.0, 0.0)
        };
        samples.push(GazeSample::new(
            f as f64 * dt,
            (gaze[0] + jx).clamp(0.0, 1.0),
            (gaze[1] + jy).clamp(0.0, 1.0),
        ));

        mode = match mode {
            Mode::Pursuit { remaining_s } => {
                gaze[0] += params.pursuit_gain * (target[0] - gaze[0]);
                gaze[1] += params.pursuit_gain * (target[1] - gaze[1]);
                let remaining_s = remaining_s - dt;
                if remaining_s > 0.0 {
                    Mode::Pursuit { remaining_s }
                } else {
                    let current = nearest(&peaks, target);
                    let candidates: Vec<usize> = (0..peaks.len()).filter(|&i| Some(i) != current).collect();
                    if candidates.is_empty() {
                        Mode::Pursuit {
                            remaining_s: draw_dwell(&mut rng),
                        }
                    } else {
                        let total: f64 = candidates.iter().map(|&i| peaks[i].value as f64).sum();
                        let mut pick = rng.gen_range(0.0..total);
                        let mut chosen = candidates[candidates.len() - 1];
                        for &i in &candidates {
                            pick -= peaks[i].value as f64;
                            if pick < 0.0 {
                                chosen = i;
                                break;
                            }
                        }
                        target = peaks[chosen].pos;
                        Mode::Saccade {
                            from: gaze,
                            elapsed_s: 0.0,
                        }
                    }
                }
            }
            Mode::Saccade { from, elapsed_s } => {
                let elapsed_s = elapsed_s + dt;
                let s = min_jerk(elapsed_s / params.saccade_dur_s);
                gaze = [from[0] + (target[0] - from[0]) * s, from[1] + (target[1] - from[1]) * s];
                if elapsed_s >= params.saccade_dur_s - 1e-12 {
                    gaze = target;
                    Mode::Pursuit {
                        remaining_s: draw_dwell(&mut rng),
                    }
                } else {
                    Mode::Saccade { from, elapsed_s }
                }
            }
        };
        gaze = [gaze[0].clamp(0.0, 1.0), gaze[1].clamp(0.0, 1.0)];
    }

    GazeTrajectory::new(
        samples,
        clip.rate_hz,
        format!("oracle-{seed:016x}"),
        clip.video_id.clone(),
    )
}
