//! Trajectory similarity metrics and the best/mean evaluation protocol.

mod baseline;
mod protocol;

pub use baseline::{mean_step_px, random_walk};

pub use protocol::{evaluate_protocol, Metric, MetricScore, ScoreReport, VideoPaths, VideoScores, SUMMARY_ID};

use crate::error::{Error, Result};
use crate::gaze::GazeTrajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    /// Source-video pixels.
    Pixels,
    /// Unit square.
    Normalized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricConfig {
    /// `(rows, cols)` of the Levenshtein quantization grid.
    pub grid: (usize, usize),
    pub max_lag_s: f64,
    pub space: Space,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            grid: (8, 8),
            max_lag_s: 2.0,
            space: Space::Pixels,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid.0 == 0 || self.grid.1 == 0 {
            return Err(Error::invalid("quantization grid needs at least one row and column"));
        }
        if !(self.max_lag_s >= 0.0 && self.max_lag_s.is_finite()) {
            return Err(Error::invalid(format!("max_lag_s must be non-negative, got {}", self.max_lag_s)));
        }
        Ok(())
    }
}

/// Row-major cell index of each point on an equal `rows x cols` partition of
/// the unit square. `x = 1` or `y = 1` fall in the last column or row.
pub fn quantize(points: &[[f64; 2]], grid: (usize, usize)) -> Vec<u32> {
    let (rows, cols) = grid;
    let cell = |v: f64, n: usize| ((v * n as f64).floor().max(0.0) as usize).min(n - 1);
    points
        .iter()
        .map(|p| (cell(p[1], rows) * cols + cell(p[0], cols)) as u32)
        .collect()
}

pub fn quantize_to_string(traj: &GazeTrajectory, grid: (usize, usize)) -> Vec<u32> {
    quantize(&traj.points(), grid)
}

/// Edit distance with unit insertion, deletion and substitution costs.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn check_nonempty(p: &[[f64; 2]], q: &[[f64; 2]], what: &str) -> Result<()> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::invalid(format!("{what} needs two non-empty sequences")));
    }
    Ok(())
}

/// Smallest achievable maximum pointwise distance over monotone couplings.
pub fn discrete_frechet(p: &[[f64; 2]], q: &[[f64; 2]]) -> Result<f64> {
    check_nonempty(p, q, "discrete Fréchet distance")?;
    let m = q.len();
    let mut prev = vec![0.0f64; m];
    let mut cur = vec![0.0; m];
    for (i, &pi) in p.iter().enumerate() {
        for j in 0..m {
            let d = dist(pi, q[j]);
            cur[j] = match (i, j) {
                (0, 0) => d,
                (0, _) => d.max(cur[j - 1]),
                (_, 0) => d.max(prev[0]),
                _ => d.max(prev[j].min(cur[j - 1]).min(prev[j - 1])),
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

/// Minimum cumulative Euclidean cost over monotone warping paths.
pub fn dtw(p: &[[f64; 2]], q: &[[f64; 2]]) -> Result<f64> {
    check_nonempty(p, q, "dynamic time warping")?;
    let m = q.len();
    let mut prev = vec![0.0f64; m];
    let mut cur = vec![0.0; m];
    for (i, &pi) in p.iter().enumerate() {
        for j in 0..m {
            let d = dist(pi, q[j]);
            cur[j] = d + match (i, j) {
                (0, 0) => 0.0,
                (0, _) => cur[j - 1],
                (_, 0) => prev[0],
                _ => prev[j].min(cur[j - 1]).min(prev[j - 1]),
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

/// Pearson correlation; zero when either side has no variance.
fn pearson(a: impl Iterator<Item = f64> + Clone, b: impl Iterator<Item = f64> + Clone) -> f64 {
    // Exact test: a rounded mean can leave residual variance on a constant.
    let constant = |mut it: Box<dyn Iterator<Item = f64> + '_>| {
        let first = it.next();
        it.all(|v| Some(v) == first)
    };
    if constant(Box::new(a.clone())) || constant(Box::new(b.clone())) {
        return 0.0;
    }
    let n = a.clone().count() as f64;
    let ma = a.clone().sum::<f64>() / n;
    let mb = b.clone().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

/// Correlation of `p` and `q` at integer lag `lag`, pairing `p[i]` with
/// `q[i + lag]`: the mean of the x and y Pearson coefficients. `None` when
/// fewer than two samples overlap.
pub fn lagged_correlation(p: &[[f64; 2]], q: &[[f64; 2]], lag: isize) -> Option<f64> {
    let lo = 0.max(-lag) as usize;
    let hi = (p.len() as isize).min(q.len() as isize - lag);
    if hi - (lo as isize) < 2 {
        return None;
    }
    let hi = hi as usize;
    let axis = |c: usize| {
        pearson(
            p[lo..hi].iter().map(move |v| v[c]),
            q[(lo as isize + lag) as usize..(hi as isize + lag) as usize].iter().map(move |v| v[c]),
        )
    };
    Some(0.5 * (axis(0) + axis(1)))
}

/// Maximum of [`lagged_correlation`] over lags in `-max_lag..=max_lag`.
/// Lags with fewer than two overlapping samples are skipped.
pub fn max_temporal_correlation(p: &[[f64; 2]], q: &[[f64; 2]], max_lag: usize) -> Result<f64> {
    let max_lag = max_lag as isize;
    (-max_lag..=max_lag)
        .filter_map(|l| lagged_correlation(p, q, l))
        .reduce(f64::max)
        .ok_or_else(|| Error::invalid(format!("sequences of {} and {} samples overlap by fewer than 2 at every lag", p.len(), q.len())))
}

#[cfg(test)]
mod tests;
