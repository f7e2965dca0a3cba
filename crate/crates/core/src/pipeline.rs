//! Dataset-level train, generate, baseline and evaluate steps built from the
//! modules below. The command-line tool is a thin wrapper over these.

use std::path::Path;

use crate::conditioning::{encode_clip, LatentSequence};
use crate::config::RunConfig;
use crate::dataset::{
    generated_files, load_clip, load_observers, load_trajectories, read_manifest, write_generated, ManifestEntry, MANIFEST_FILE,
};
use crate::denoiser::{Denoiser, TrainSet};
use crate::diffusion::{rollout_samples, InitHistory};
use crate::error::{Error, Result};
use crate::gaze::{GazeTrajectory, VideoMeta};
use crate::metrics::{evaluate_protocol, mean_step_px, random_walk, ScoreReport, VideoPaths};
use crate::seed::derive;

const GENERATE_LABEL: u64 = 0x47454e;
const BASELINE_LABEL: u64 = 0x52574c4b;

/// A manifest entry with its stimulus, conditioning and observers loaded.
#[derive(Debug, Clone)]
pub struct LoadedVideo {
    pub entry: ManifestEntry,
    pub latents: LatentSequence,
    pub observers: Vec<GazeTrajectory>,
}

impl LoadedVideo {
    pub fn meta(&self) -> &VideoMeta {
        &self.entry.meta
    }
}

/// Generated (or baseline) trajectories of one video.
#[derive(Debug, Clone)]
pub struct GeneratedVideo {
    pub meta: VideoMeta,
    pub samples: Vec<GazeTrajectory>,
    /// Some rollout stopped early because the stimulus ended.
    pub truncated: bool,
}

pub fn load_dataset(cfg: &RunConfig, root: &Path) -> Result<Vec<LoadedVideo>> {
    read_manifest(root)?
        .into_iter()
        .map(|entry| {
            let clip = load_clip(root, &entry)?;
            let latents = encode_clip(&clip, (cfg.grid_rows, cfg.grid_cols), cfg.cond_stride)?;
            let observers = load_observers(root, &entry)?;
            Ok(LoadedVideo {
                entry,
                latents,
                observers,
            })
        })
        .collect()
}

fn observer(v: &LoadedVideo, o: usize) -> Result<&GazeTrajectory> {
    v.observers.get(o).ok_or_else(|| {
        Error::invalid(format!(
            "video {} has {} observers, observer {o} requested",
            v.meta().video_id,
            v.observers.len()
        ))
    })
}

/// Windows of observers `0..train_observers`, advancing by `predict_len`.
pub fn build_train_set(cfg: &RunConfig, videos: &[LoadedVideo]) -> Result<TrainSet> {
    let spec = cfg.window()?;
    let mut set = TrainSet::default();
    for (i, v) in videos.iter().enumerate() {
        set.latents.push(v.latents.clone());
        for o in 0..cfg.train_observers {
            set.add_trajectory(i, observer(v, o)?, spec, cfg.predict_len)?;
        }
    }
    if set.windows.is_empty() {
        return Err(Error::invalid("no training windows: trajectories are shorter than one window"));
    }
    Ok(set)
}

/// Adam steps per epoch for `set`.
pub fn batches_per_epoch(cfg: &RunConfig, set: &TrainSet) -> usize {
    set.windows.len().div_ceil(cfg.batch_size)
}

/// Train `cfg.epochs` epochs, starting fresh or continuing `resume`.
/// Returns the model, the first epoch index run, and the loss curve.
pub fn train_model(
    cfg: &RunConfig,
    videos: &[LoadedVideo],
    resume: Option<Denoiser>,
    on_epoch: &mut dyn FnMut(usize, f64),
) -> Result<(Denoiser, usize, Vec<f64>)> {
    cfg.validate()?;
    let set = build_train_set(cfg, videos)?;
    let mut model = match resume {
        Some(m) => m,
        None => Denoiser::new(cfg.denoiser()?, derive(cfg.seed, &[0x4d4f44454c]))?,
    };
    let per_epoch = batches_per_epoch(cfg, &set) as u64;
    if model.params.step % per_epoch != 0 {
        return Err(Error::invalid(format!(
            "checkpoint step {} is not a whole number of {per_epoch}-step epochs for this dataset",
            model.params.step
        )));
    }
    let start_epoch = (model.params.step / per_epoch) as usize;
    let mut tc = cfg.train()?;
    tc.start_epoch = start_epoch;
    let curve = crate::denoiser::train(&mut model, &set, &tc, on_epoch)?;
    Ok((model, start_epoch, curve))
}

/// Horizon start: generation follows the first `history_len` samples.
fn span(cfg: &RunConfig, horizon: usize) -> (f64, f64) {
    let t0 = cfg.history_len as f64 / cfg.rate_hz;
    (t0, t0 + (horizon.max(1) - 1) as f64 / cfg.rate_hz)
}

fn initial_history(cfg: &RunConfig, v: &LoadedVideo) -> Result<InitHistory> {
    let obs = observer(v, cfg.warm_observer)?;
    if obs.len() < cfg.history_len {
        return Err(Error::invalid(format!(
            "observer {} of video {} has {} samples, history needs {}",
            cfg.warm_observer,
            v.meta().video_id,
            obs.len(),
            cfg.history_len
        )));
    }
    let history = obs.points()[..cfg.history_len].to_vec();
    Ok(if cfg.cold_start {
        InitHistory::Cold(cfg.cold_point.unwrap_or(history[cfg.history_len - 1]))
    } else {
        InitHistory::Warm(history)
    })
}

/// `num_samples` rollouts per video from frame 0.
pub fn generate(cfg: &RunConfig, model: &Denoiser, videos: &[LoadedVideo]) -> Result<Vec<GeneratedVideo>> {
    cfg.validate()?;
    let dcfg = cfg.diffusion()?;
    let horizon = cfg.horizon_samples();
    videos
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let init = initial_history(cfg, v)?;
            let seed = derive(cfg.seed, &[GENERATE_LABEL, i as u64]);
            let outs = rollout_samples(&init, &v.latents, model, &dcfg, horizon, cfg.num_samples, seed, 0)?;
            let truncated = outs.iter().any(|o| o.truncated);
            let samples = outs
                .into_iter()
                .enumerate()
                .map(|(s, o)| {
                    let mut t = o.trajectory;
                    t.observer_id = format!("sample_{s:02}");
                    t.video_id = v.meta().video_id.clone();
                    t
                })
                .collect();
            Ok(GeneratedVideo {
                meta: v.meta().clone(),
                samples,
                truncated,
            })
        })
        .collect()
}

/// Ground-truth observers cut to the generated time span.
pub fn ground_truth(cfg: &RunConfig, v: &LoadedVideo, t0: f64, t1: f64) -> Result<Vec<GazeTrajectory>> {
    let ids: Vec<usize> = if cfg.eval_observers.is_empty() {
        (0..v.observers.len()).collect()
    } else {
        cfg.eval_observers.clone()
    };
    let tol = 0.5 / cfg.rate_hz;
    ids.iter()
        .map(|&o| {
            observer(v, o)?.time_slice(t0, t1, tol).ok_or_else(|| {
                Error::invalid(format!("observer {o} of video {} has no samples in [{t0}, {t1}] s", v.meta().video_id))
            })
        })
        .collect()
}

/// Matched-speed random walks from the last history sample. The step length
/// is the mean step of the ground-truth observers over the same span.
pub fn baseline(cfg: &RunConfig, videos: &[LoadedVideo]) -> Result<Vec<GeneratedVideo>> {
    cfg.validate()?;
    let horizon = cfg.horizon_samples();
    let (t0, t1) = span(cfg, horizon);
    videos
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let start = match initial_history(cfg, v)? {
                InitHistory::Warm(h) => h[h.len() - 1],
                InitHistory::Cold(p) => p,
            };
            let gt = ground_truth(cfg, v, t0, t1)?;
            let step = gt.iter().map(|g| mean_step_px(g, v.meta())).sum::<f64>() / gt.len() as f64;
            let samples = (0..cfg.num_samples)
                .map(|s| {
                    let mut t = random_walk(start, horizon, step, v.meta(), t0, derive(cfg.seed, &[BASELINE_LABEL, i as u64, s as u64]))?;
                    t.observer_id = format!("sample_{s:02}");
                    Ok(t)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(GeneratedVideo {
                meta: v.meta().clone(),
                samples,
                truncated: false,
            })
        })
        .collect()
}

pub fn write_generated_set(gen_root: &Path, set: &[GeneratedVideo]) -> Result<()> {
    for g in set {
        write_generated(gen_root, &g.meta, &g.samples)?;
    }
    Ok(())
}

/// Score generated sets against the ground-truth observers over the span the
/// generated samples cover.
pub fn evaluate(cfg: &RunConfig, videos: &[LoadedVideo], generated: &[GeneratedVideo]) -> Result<ScoreReport> {
    if videos.len() != generated.len() {
        return Err(Error::invalid(format!("{} videos but {} generated sets", videos.len(), generated.len())));
    }
    let mut paths = Vec::with_capacity(videos.len());
    for (v, g) in videos.iter().zip(generated) {
        if v.meta().video_id != g.meta.video_id {
            return Err(Error::invalid(format!(
                "generated set for {} paired with video {}",
                g.meta.video_id,
                v.meta().video_id
            )));
        }
        let t0 = g.samples.iter().filter_map(|s| s.samples.first()).map(|s| s.t).fold(f64::INFINITY, f64::min);
        let t1 = g.samples.iter().filter_map(|s| s.samples.last()).map(|s| s.t).fold(f64::NEG_INFINITY, f64::max);
        if !(t0 <= t1) {
            return Err(Error::invalid(format!("video {} has no generated samples", g.meta.video_id)));
        }
        paths.push(VideoPaths {
            meta: v.meta().clone(),
            gt: ground_truth(cfg, v, t0, t1)?,
            generated: g.samples.clone(),
        });
    }
    evaluate_protocol(&paths, &cfg.metrics())
}

/// Generated trajectories under `gen_root`: the observers of its manifest if
/// it has one, else the `sample_XX.csv` files of each video directory.
pub fn load_generated(gen_root: &Path, videos: &[LoadedVideo]) -> Result<Vec<GeneratedVideo>> {
    if gen_root.join(MANIFEST_FILE).exists() {
        let entries = read_manifest(gen_root)?;
        check_same_videos(videos, entries.iter().map(|e| e.meta.video_id.clone()).collect())?;
        return videos
            .iter()
            .map(|v| {
                let e = entries.iter().find(|e| e.meta.video_id == v.meta().video_id).expect("checked above");
                Ok(GeneratedVideo {
                    meta: v.meta().clone(),
                    samples: load_observers(gen_root, e)?,
                    truncated: false,
                })
            })
            .collect();
    }
    let dirs = std::fs::read_dir(gen_root).map_err(|e| Error::io(gen_root, e))?;
    let mut ids = Vec::new();
    for d in dirs {
        let d = d.map_err(|e| Error::io(gen_root, e))?;
        if d.path().is_dir() {
            ids.push(d.file_name().to_string_lossy().into_owned());
        }
    }
    check_same_videos(videos, ids)?;
    videos
        .iter()
        .map(|v| {
            let files = generated_files(gen_root, &v.meta().video_id)?;
            if files.is_empty() {
                return Err(Error::invalid(format!("no generated CSVs for video {}", v.meta().video_id)));
            }
            Ok(GeneratedVideo {
                meta: v.meta().clone(),
                samples: load_trajectories(&files, v.meta())?,
                truncated: false,
            })
        })
        .collect()
}

fn check_same_videos(videos: &[LoadedVideo], mut ids: Vec<String>) -> Result<()> {
    ids.sort();
    let mut want: Vec<String> = videos.iter().map(|v| v.meta().video_id.clone()).collect();
    want.sort();
    if let Some(m) = want.iter().find(|w| ids.binary_search(w).is_err()) {
        return Err(Error::invalid(format!("video {m} is missing from the generated set")));
    }
    if let Some(m) = ids.iter().find(|i| want.binary_search(i).is_err()) {
        return Err(Error::invalid(format!("video {m} is not in the ground-truth manifest")));
    }
    Ok(())
}

/// Load both roots and score them.
pub fn evaluate_roots(cfg: &RunConfig, gt_root: &Path, gen_root: &Path) -> Result<ScoreReport> {
    let videos = load_dataset(cfg, gt_root)?;
    let generated = load_generated(gen_root, &videos)?;
    evaluate(cfg, &videos, &generated)
}
