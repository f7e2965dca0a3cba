//! Matched-speed random walk, the reference any learned model has to beat.

use std::f64::consts::TAU;

use rand::Rng;

use crate::error::{Error, Result};
use crate::gaze::{GazeTrajectory, VideoMeta};

/// Mean distance between consecutive samples, in pixels.
pub fn mean_step_px(traj: &GazeTrajectory, meta: &VideoMeta) -> f64 {
    if traj.len() < 2 {
        return 0.0;
    }
    let px: Vec<[f64; 2]> = traj.samples.iter().map(|s| meta.to_pixels(s.xy())).collect();
    let total: f64 = px.windows(2).map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1])).sum();
    total / (px.len() - 1) as f64
}

fn reflect(mut v: f64, hi: f64) -> f64 {
    // Steps longer than the frame fold repeatedly; the clamp guards rounding.
    for _ in 0..64 {
        if v < 0.0 {
            v = -v;
        } else if v > hi {
            v = 2.0 * hi - v;
        } else {
            break;
        }
    }
    v.clamp(0.0, hi)
}

/// `steps` samples of a walk with fixed pixel step length and uniformly random
/// heading, starting one step after `start` and reflecting off the frame.
pub fn random_walk(
    start: [f64; 2],
    steps: usize,
    step_px: f64,
    meta: &VideoMeta,
    t0: f64,
    seed: u64,
) -> Result<GazeTrajectory> {
    if !(step_px >= 0.0 && step_px.is_finite()) {
        return Err(Error::invalid(format!("step length must be finite and non-negative, got {step_px}")));
    }
    let mut rng = crate::seed::rng_for(seed, &[0x5257]);
    let (w, h) = (meta.width_px as f64, meta.height_px as f64);
    let mut p = meta.to_pixels(start);
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let a: f64 = rng.gen_range(0.0..TAU);
        p = [reflect(p[0] + step_px * a.cos(), w), reflect(p[1] + step_px * a.sin(), h)];
        out.push(meta.normalize(p));
    }
    GazeTrajectory::from_points(&out, t0, meta.rate_hz, "random-walk", meta.video_id.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> VideoMeta {
        VideoMeta::new("v", 100, 50, 10.0, 100).unwrap()
    }

    #[test]
    fn step_length_is_exact_away_from_borders() {
        let m = meta();
        let walk = random_walk([0.5, 0.5], 5, 2.0, &m, 0.0, 1).unwrap();
        assert!((mean_step_px(&walk, &m) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn stays_inside_frame() {
        let m = meta();
        let walk = random_walk([0.0, 1.0], 500, 30.0, &m, 1.0, 2).unwrap();
        assert_eq!(walk.len(), 500);
        assert!((walk.samples[0].t - 1.0).abs() < 1e-12);
        for s in &walk.samples {
            assert!((0.0..=1.0).contains(&s.x) && (0.0..=1.0).contains(&s.y));
        }
    }

    #[test]
    fn reflection_folds_back() {
        assert_eq!(reflect(-3.0, 10.0), 3.0);
        assert_eq!(reflect(12.0, 10.0), 8.0);
        assert_eq!(reflect(25.0, 10.0), 5.0);
    }

    #[test]
    fn mean_step_of_straight_line() {
        let m = meta();
        let t = GazeTrajectory::from_points(&[[0.0, 0.0], [0.03, 0.0], [0.06, 0.0]], 0.0, 10.0, "o", "v").unwrap();
        assert!((mean_step_px(&t, &m) - 3.0).abs() < 1e-9);
    }
}
