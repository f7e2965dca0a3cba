use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use super::{discrete_frechet, dtw, levenshtein, max_temporal_correlation, quantize, MetricConfig, Space};
use crate::error::{Error, Result};
use crate::gaze::{GazeTrajectory, VideoMeta};

/// `video_id` used for rows that average over all videos.
pub const SUMMARY_ID: &str = "ALL";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Levenshtein,
    Frechet,
    Dtw,
    Mtc,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Levenshtein, Metric::Frechet, Metric::Dtw, Metric::Mtc];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Levenshtein => "levenshtein",
            Metric::Frechet => "frechet",
            Metric::Dtw => "dtw",
            Metric::Mtc => "mtc",
        }
    }

    pub fn higher_is_better(self) -> bool {
        matches!(self, Metric::Mtc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricScore {
    pub mean: f64,
    pub best: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoScores {
    pub video_id: String,
    /// Indexed like [`Metric::ALL`].
    pub scores: [MetricScore; 4],
    pub gt_paths: usize,
    pub generated_paths: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub videos: Vec<VideoScores>,
    /// Unweighted average over videos.
    pub overall: [MetricScore; 4],
}

/// Ground truth and generated trajectories of one video.
#[derive(Debug, Clone)]
pub struct VideoPaths {
    pub meta: VideoMeta,
    pub gt: Vec<GazeTrajectory>,
    pub generated: Vec<GazeTrajectory>,
}

impl ScoreReport {
    pub fn get(&self, metric: Metric) -> MetricScore {
        self.overall[metric as usize]
    }

    /// Best is no worse than mean for every metric, video and the summary.
    pub fn ordering_holds(&self) -> bool {
        let ok = |s: &[MetricScore; 4]| {
            Metric::ALL.iter().all(|&m| {
                let v = s[m as usize];
                if m.higher_is_better() {
                    v.best >= v.mean
                } else {
                    v.best <= v.mean
                }
            })
        };
        ok(&self.overall) && self.videos.iter().all(|v| ok(&v.scores))
    }

    /// Rows of `video_id,metric,variant,value`, summary rows last.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("video_id,metric,variant,value\n");
        let rows = self
            .videos
            .iter()
            .map(|v| (v.video_id.as_str(), &v.scores))
            .chain(std::iter::once((SUMMARY_ID, &self.overall)));
        for (id, scores) in rows {
            for m in Metric::ALL {
                let s = scores[m as usize];
                out.push_str(&format!("{id},{},mean,{}\n", m.name(), s.mean));
                out.push_str(&format!("{id},{},best,{}\n", m.name(), s.best));
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

fn pair_scores(gt: &GazeTrajectory, gen: &GazeTrajectory, meta: &VideoMeta, cfg: &MetricConfig) -> Result<[f64; 4]> {
    if (gt.rate_hz - gen.rate_hz).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "sampling rates differ ({} Hz vs {} Hz) on video {}",
            gt.rate_hz, gen.rate_hz, meta.video_id
        )));
    }
    let (p, q) = (gt.points(), gen.points());
    let common = p.len().min(q.len());
    let lev = levenshtein(&quantize(&p[..common], cfg.grid), &quantize(&q[..common], cfg.grid)) as f64;
    let max_lag = (cfg.max_lag_s * gt.rate_hz).round() as usize;
    let mtc = max_temporal_correlation(&p[..common], &q[..common], max_lag)?;
    let (ps, qs) = match cfg.space {
        Space::Pixels => (
            p.iter().map(|&v| meta.to_pixels(v)).collect(),
            q.iter().map(|&v| meta.to_pixels(v)).collect(),
        ),
        Space::Normalized => (p, q),
    };
    Ok([lev, discrete_frechet(&ps, &qs)?, dtw(&ps, &qs)?, mtc])
}

fn aggregate(values: &[f64], higher_is_better: bool) -> MetricScore {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // The true mean lies in [lo, hi]; clamping removes summation rounding.
    let mean = (values.iter().sum::<f64>() / values.len() as f64).clamp(lo, hi);
    MetricScore {
        mean,
        best: if higher_is_better { hi } else { lo },
    }
}

fn average(scores: impl Iterator<Item = [MetricScore; 4]> + Clone) -> [MetricScore; 4] {
    let n = scores.clone().count() as f64;
    let mut out = [MetricScore { mean: 0.0, best: 0.0 }; 4];
    for s in scores {
        for (o, v) in out.iter_mut().zip(s) {
            o.mean += v.mean;
            o.best += v.best;
        }
    }
    for o in &mut out {
        o.mean /= n;
        o.best /= n;
    }
    out
}

/// Score every generated path against every ground-truth path of the same
/// video. Per ground-truth path, best is the min (max for correlation) over
/// generated paths and mean their average; both are averaged over
/// ground-truth paths, then over videos. Levenshtein and correlation compare
/// the common prefix; Fréchet and DTW use full lengths.
pub fn evaluate_protocol(videos: &[VideoPaths], cfg: &MetricConfig) -> Result<ScoreReport> {
    cfg.validate()?;
    if videos.is_empty() {
        return Err(Error::invalid("evaluation needs at least one video"));
    }
    let mut out = Vec::with_capacity(videos.len());
    for v in videos {
        if v.gt.is_empty() || v.generated.is_empty() {
            return Err(Error::invalid(format!(
                "video {} has {} ground-truth and {} generated trajectories; both must be non-empty",
                v.meta.video_id,
                v.gt.len(),
                v.generated.len()
            )));
        }
        let pairs: Vec<(usize, usize)> = (0..v.gt.len())
            .flat_map(|g| (0..v.generated.len()).map(move |s| (g, s)))
            .collect();
        let scores: Vec<[f64; 4]> = pairs
            .par_iter()
            .map(|&(g, s)| pair_scores(&v.gt[g], &v.generated[s], &v.meta, cfg))
            .collect::<Result<_>>()?;
        let per_gt: Vec<[MetricScore; 4]> = scores
            .chunks(v.generated.len())
            .map(|row| {
                let mut s = [MetricScore { mean: 0.0, best: 0.0 }; 4];
                for m in Metric::ALL {
                    let vals: Vec<f64> = row.iter().map(|r| r[m as usize]).collect();
                    s[m as usize] = aggregate(&vals, m.higher_is_better());
                }
                s
            })
            .collect();
        out.push(VideoScores {
            video_id: v.meta.video_id.clone(),
            scores: average(per_gt.iter().copied()),
            gt_paths: v.gt.len(),
            generated_paths: v.generated.len(),
        });
    }
    let overall = average(out.iter().map(|v| v.scores));
    Ok(ScoreReport { videos: out, overall })
}
