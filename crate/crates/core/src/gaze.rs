//! Gaze trajectory data model: samples, video metadata, window slicing,
//! resampling, and the per-observer CSV format.
//!
//! Coordinates are stored normalized to `[0, 1]` in both axes; pixel values
//! only appear at the file boundary, converted through [`VideoMeta`].

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};

/// Snap tolerance used when a resampling instant coincides with a source sample.
const TIME_SNAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeSample {
    /// Seconds from clip start.
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

impl GazeSample {
    pub fn new(t: f64, x: f64, y: f64) -> Self {
        Self { t, x, y }
    }

    pub fn xy(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// A fixed-rate gaze recording of one observer on one video.
#[derive(Debug, Clone, PartialEq)]
pub struct GazeTrajectory {
    pub samples: Vec<GazeSample>,
    pub rate_hz: f64,
    pub observer_id: String,
    pub video_id: String,
    /// Number of samples that were clamped into the frame at ingestion.
    pub clamped: usize,
}

impl GazeTrajectory {
    pub fn new(
        samples: Vec<GazeSample>,
        rate_hz: f64,
        observer_id: impl Into<String>,
        video_id: impl Into<String>,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("trajectory must hold at least one sample"));
        }
        if !(rate_hz > 0.0 && rate_hz.is_finite()) {
            return Err(Error::invalid(format!("rate_hz must be positive, got {rate_hz}")));
        }
        for w in samples.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(Error::invalid(format!(
                    "timestamps must strictly increase ({} then {})",
                    w[0].t, w[1].t
                )));
            }
        }
        if let Some(s) = samples.iter().find(|s| !s.t.is_finite()) {
            return Err(Error::invalid(format!("non-finite timestamp {}", s.t)));
        }
        Ok(Self {
            samples,
            rate_hz,
            observer_id: observer_id.into(),
            video_id: video_id.into(),
            clamped: 0,
        })
    }

    /// Build a trajectory from coordinates at a fixed rate, starting at `t0`.
    pub fn from_points(
        points: &[[f64; 2]],
        t0: f64,
        rate_hz: f64,
        observer_id: impl Into<String>,
        video_id: impl Into<String>,
    ) -> Result<Self> {
        let samples = points
            .iter()
            .enumerate()
            .map(|(i, p)| GazeSample::new(t0 + i as f64 / rate_hz, p[0], p[1]))
            .collect();
        Self::new(samples, rate_hz, observer_id, video_id)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn points(&self) -> Vec<[f64; 2]> {
        self.samples.iter().map(GazeSample::xy).collect()
    }

    /// Samples with `t0 - tol <= t <= t1 + tol`, or `None` if there are none.
    pub fn time_slice(&self, t0: f64, t1: f64, tol: f64) -> Option<GazeTrajectory> {
        let samples: Vec<GazeSample> = self
            .samples
            .iter()
            .filter(|s| s.t >= t0 - tol && s.t <= t1 + tol)
            .copied()
            .collect();
        if samples.is_empty() {
            return None;
        }
        Some(GazeTrajectory { samples, ..self.clone() })
    }

    /// Keep the first `len` samples.
    pub fn truncated(&self, len: usize) -> GazeTrajectory {
        let mut out = self.clone();
        out.samples.truncate(len.max(1));
        out
    }
}

/// Metadata of the source video; pixel data is never loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoMeta {
    pub video_id: String,
    pub width_px: u32,
    pub height_px: u32,
    pub rate_hz: f64,
    pub frame_count: u32,
}

impl VideoMeta {
    pub fn new(
        video_id: impl Into<String>,
        width_px: u32,
        height_px: u32,
        rate_hz: f64,
        frame_count: u32,
    ) -> Result<Self> {
        if width_px == 0 || height_px == 0 || frame_count == 0 {
            return Err(Error::invalid("video dimensions and frame count must be positive"));
        }
        if !(rate_hz > 0.0 && rate_hz.is_finite()) {
            return Err(Error::invalid(format!("video rate must be positive, got {rate_hz}")));
        }
        Ok(Self {
            video_id: video_id.into(),
            width_px,
            height_px,
            rate_hz,
            frame_count,
        })
    }

    pub fn normalize(&self, px: [f64; 2]) -> [f64; 2] {
        [px[0] / self.width_px as f64, px[1] / self.height_px as f64]
    }

    pub fn to_pixels(&self, p: [f64; 2]) -> [f64; 2] {
        [p[0] * self.width_px as f64, p[1] * self.height_px as f64]
    }
}

/// History/prediction split of a training or sampling window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub history_len: usize,
    pub predict_len: usize,
}

impl WindowSpec {
    pub fn new(history_len: usize, predict_len: usize) -> Result<Self> {
        if predict_len == 0 {
            return Err(Error::invalid("predict_len must be at least 1"));
        }
        Ok(Self {
            history_len,
            predict_len,
        })
    }

    pub fn window_len(&self) -> usize {
        self.history_len + self.predict_len
    }
}

/// `n` consecutive coordinates cut from a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    /// Index of the first sample in the source trajectory.
    pub start: usize,
    pub coords: Vec<[f64; 2]>,
}

impl Window {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.coords.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Windows {
    pub windows: Vec<Window>,
    /// Set when the trajectory was shorter than one window.
    pub too_short: bool,
}

/// Cut `traj` into windows of `spec.window_len()` samples, advancing by `stride`.
/// A trailing remainder shorter than a window is dropped.
pub fn to_windows(traj: &GazeTrajectory, spec: WindowSpec, stride: usize) -> Result<Windows> {
    if stride == 0 {
        return Err(Error::invalid("window stride must be at least 1"));
    }
    let n = spec.window_len();
    let len = traj.len();
    if len < n {
        return Ok(Windows {
            windows: Vec::new(),
            too_short: true,
        });
    }
    let windows = (0..=len - n)
        .step_by(stride)
        .map(|start| Window {
            start,
            coords: traj.samples[start..start + n].iter().map(GazeSample::xy).collect(),
        })
        .collect();
    Ok(Windows {
        windows,
        too_short: false,
    })
}

/// Linearly resample onto a uniform grid at `target_hz` spanning the original
/// time range. Grid instants that coincide with a source sample copy it exactly.
pub fn resample(traj: &GazeTrajectory, target_hz: f64) -> Result<GazeTrajectory> {
    if traj.len() < 2 {
        return Err(Error::invalid("cannot resample a trajectory with fewer than two samples"));
    }
    if !(target_hz > 0.0 && target_hz.is_finite()) {
        return Err(Error::invalid(format!("target rate must be positive, got {target_hz}")));
    }
    let src = &traj.samples;
    let t0 = src[0].t;
    let span = src[src.len() - 1].t - t0;
    let count = (span * target_hz + TIME_SNAP).floor() as usize + 1;

    let mut out = Vec::with_capacity(count);
    let mut j = 0usize;
    for i in 0..count {
        let t = t0 + i as f64 / target_hz;
        while j + 2 < src.len() && src[j + 1].t <= t + TIME_SNAP {
            j += 1;
        }
        let (a, b) = (src[j], src[j + 1]);
        let sample = if (t - a.t).abs() <= TIME_SNAP {
            a
        } else if (t - b.t).abs() <= TIME_SNAP {
            b
        } else {
            let w = ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0);
            GazeSample::new(t, a.x + w * (b.x - a.x), a.y + w * (b.y - a.y))
        };
        out.push(sample);
    }

    let mut res = GazeTrajectory::new(out, target_hz, traj.observer_id.clone(), traj.video_id.clone())?;
    res.clamped = traj.clamped;
    Ok(res)
}

/// Read a `t,x,y,observer` CSV with pixel coordinates and split it into one
/// normalized trajectory per observer (ordered by observer label).
pub fn ingest_gaze_csv(path: &Path, meta: &VideoMeta) -> Result<Vec<GazeTrajectory>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let headers = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let expected = ["t", "x", "y", "observer"];
    if headers.len() != 4 || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(parse_err(1, format!("expected header `t,x,y,observer`, got `{}`", headers.iter().collect::<Vec<_>>().join(","))));
    }

    let mut per_observer: BTreeMap<String, Vec<(GazeSample, bool)>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 4 {
            return Err(parse_err(line, format!("expected 4 fields, got {}", record.len())));
        }
        let num = |i: usize, name: &str| -> Result<f64> {
            let v: f64 = record[i]
                .parse()
                .map_err(|_| parse_err(line, format!("field `{name}` is not a number: `{}`", &record[i])))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("field `{name}` is not finite")));
            }
            Ok(v)
        };
        let t = num(0, "t")?;
        if t < 0.0 {
            return Err(parse_err(line, format!("negative timestamp {t}")));
        }
        let [x, y] = meta.normalize([num(1, "x")?, num(2, "y")?]);
        let (cx, cy) = (x.clamp(0.0, 1.0), y.clamp(0.0, 1.0));
        let clamped = cx != x || cy != y;
        per_observer
            .entry(record[3].to_string())
            .or_default()
            .push((GazeSample::new(t, cx, cy), clamped));
    }

    if per_observer.is_empty() {
        return Err(parse_err(1, "file holds no gaze rows".to_string()));
    }

    let mut out = Vec::with_capacity(per_observer.len());
    for (observer, mut rows) in per_observer {
        rows.sort_by(|a, b| a.0.t.total_cmp(&b.0.t));
        let before = rows.len();
        rows.dedup_by(|later, earlier| later.0.t == earlier.0.t);
        if rows.len() != before {
            warn!(
                "{}: observer {observer}: dropped {} duplicate timestamps",
                path.display(),
                before - rows.len()
            );
        }
        let clamped = rows.iter().filter(|r| r.1).count();
        let samples: Vec<GazeSample> = rows.into_iter().map(|r| r.0).collect();
        let rate = if samples.len() >= 2 {
            (samples.len() - 1) as f64 / (samples[samples.len() - 1].t - samples[0].t)
        } else {
            meta.rate_hz
        };
        let mut traj = GazeTrajectory::new(samples, rate, observer, meta.video_id.clone())?;
        traj.clamped = clamped;
        out.push(traj);
    }
    Ok(out)
}

/// Write a trajectory as a pixel-space `t,x,y,observer` CSV.
pub fn write_trajectory_csv(traj: &GazeTrajectory, meta: &VideoMeta, path: &Path) -> Result<()> {
    write_trajectories_csv(std::slice::from_ref(traj), meta, path)
}

/// Write several trajectories into one CSV, observer after observer.
pub fn write_trajectories_csv(trajs: &[GazeTrajectory], meta: &VideoMeta, path: &Path) -> Result<()> {
    if trajs.iter().any(GazeTrajectory::is_empty) || trajs.is_empty() {
        return Err(Error::invalid("cannot write an empty trajectory"));
    }
    for t in trajs {
        if t.observer_id.contains([',', '\n', '\r']) {
            return Err(Error::invalid(format!("observer label `{}` contains a separator", t.observer_id)));
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(b"t,x,y,observer\n").map_err(io)?;
    for traj in trajs {
        for s in &traj.samples {
            let [px, py] = meta.to_pixels(s.xy());
            writeln!(w, "{},{},{},{}", s.t, px, py, traj.observer_id).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn normalization_inverts(x in 0.0f64..=1.0, y in 0.0f64..=1.0, w in 1u32..4000, h in 1u32..4000) {
            let m = VideoMeta::new("v", w, h, 30.0, 1).unwrap();
            let back = m.normalize(m.to_pixels([x, y]));
            prop_assert!((back[0] - x).abs() <= 1e-6 * x.abs().max(1e-300) || (back[0] - x).abs() < 1e-15);
            prop_assert!((back[1] - y).abs() <= 1e-6 * y.abs().max(1e-300) || (back[1] - y).abs() < 1e-15);
        }

        #[test]
        fn resample_is_idempotent(pts in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..60)) {
            let pts: Vec<[f64; 2]> = pts.into_iter().map(|(a, b)| [a, b]).collect();
            let traj = GazeTrajectory::from_points(&pts, 0.0, 30.0, "A", "v").unwrap();
            let once = resample(&traj, 30.0).unwrap();
            let twice = resample(&once, 30.0).unwrap();
            prop_assert_eq!(&once.samples, &twice.samples);
            prop_assert_eq!(once.samples.len(), pts.len());
            for w in once.samples.windows(2) {
                prop_assert!((w[1].t - w[0].t - 1.0 / 30.0).abs() < 1e-6);
            }
        }

        #[test]
        fn windows_tile_suffixes(k in 0usize..6, p in 1usize..6, len in 1usize..60) {
            let pts: Vec<[f64; 2]> = (0..len).map(|i| [i as f64, 0.0]).collect();
            let traj = GazeTrajectory::from_points(&pts, 0.0, 30.0, "A", "v").unwrap();
            let spec = WindowSpec::new(k, p).unwrap();
            let ws = to_windows(&traj, spec, p).unwrap();
            // Consecutive prediction suffixes abut exactly.
            for pair in ws.windows.windows(2) {
                prop_assert_eq!(pair[0].start + k + p, pair[1].start + k);
            }
            for w in &ws.windows {
                prop_assert_eq!(w.coords.len(), k + p);
                prop_assert_eq!(w.coords[0][0] as usize, w.start);
            }
        }
    }
}
