//! Flat `key = value` run configuration shared by every command.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::conditioning::{GazeOracleParams, SynthSceneSpec};
use crate::denoiser::{AdamConfig, DenoiserConfig, Precondition, TrainConfig, COND_DIM};
use crate::diffusion::{linear_beta_schedule, DiffusionConfig, NoiseSchedule};
use crate::error::{Error, Result};
use crate::gaze::WindowSpec;
use crate::metrics::{MetricConfig, Space};

/// Every tunable of the pipeline. Defaults describe the desk-scale toy setup.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset_root: PathBuf,
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
    pub gen_root: PathBuf,
    pub report: PathBuf,

    pub clips: usize,
    pub observers: usize,
    pub duration_s: f64,
    pub rate_hz: f64,
    /// Blob count of clip `c` is `blob_counts[c % len]`.
    pub blob_counts: Vec<usize>,
    pub blob_sigma: f64,
    pub motion_speed: f64,
    pub saliency_height: usize,
    pub saliency_width: usize,
    pub width_px: u32,
    pub height_px: u32,
    pub dwell_s: f64,
    pub saccade_s: f64,
    pub pursuit_gain: f64,
    pub jitter: f64,

    pub history_len: usize,
    pub predict_len: usize,
    pub cond_stride: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,

    pub train_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub sample_steps: usize,
    pub eta: f64,

    pub base_width: usize,
    pub level_mults: Vec<usize>,
    pub attn_levels: Vec<usize>,
    pub heads: usize,
    /// Analytic-skip output preconditioning of the denoiser.
    pub precondition: bool,
    pub data_mean: f64,
    pub data_std: f64,

    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub history_min: usize,
    pub history_max: usize,
    /// Observers `0..train_observers` of each video are used for training.
    pub train_observers: usize,

    pub horizon_s: f64,
    pub num_samples: usize,
    /// Observer whose first `history_len` samples seed warm-start rollouts.
    pub warm_observer: usize,
    /// Replicate one point over the first history instead of using observed samples.
    pub cold_start: bool,
    /// Point replicated on cold start; `None` takes the warm observer's last
    /// history sample.
    pub cold_point: Option<[f64; 2]>,
    /// Observers used as ground truth by `evaluate`; empty means all.
    pub eval_observers: Vec<usize>,

    pub lev_rows: usize,
    pub lev_cols: usize,
    pub max_lag_s: f64,
    pub space: Space,

    pub seed: u64,
    /// Worker threads; 0 uses every logical core.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset_root: "data".into(),
            checkpoint: "model.gzdf".into(),
            loss_csv: "loss.csv".into(),
            gen_root: "generated".into(),
            report: "report.csv".into(),
            clips: 8,
            observers: 4,
            duration_s: 60.0,
            rate_hz: 30.0,
            blob_counts: vec![1, 2],
            blob_sigma: 0.06,
            motion_speed: 0.15,
            saliency_height: 36,
            saliency_width: 64,
            width_px: 1280,
            height_px: 720,
            dwell_s: 1.0,
            saccade_s: 0.1,
            pursuit_gain: 0.3,
            jitter: 0.004,
            history_len: 90,
            predict_len: 45,
            cond_stride: 5,
            grid_rows: 4,
            grid_cols: 4,
            train_steps: 1000,
            beta_start: 1e-4,
            beta_end: 2e-2,
            sample_steps: 50,
            eta: 0.0,
            base_width: 16,
            level_mults: vec![1, 2, 4],
            attn_levels: vec![2],
            heads: 1,
            precondition: true,
            data_mean: 0.5,
            data_std: 0.25,
            epochs: 30,
            batch_size: 16,
            lr: 1e-3,
            history_min: 90,
            history_max: 90,
            train_observers: 3,
            horizon_s: 10.0,
            num_samples: 10,
            warm_observer: 3,
            cold_start: false,
            cold_point: None,
            eval_observers: vec![3],
            lev_rows: 8,
            lev_cols: 8,
            max_lag_s: 2.0,
            space: Space::Pixels,
            seed: 0,
            workers: 0,
        }
    }
}

fn parse_list(v: &str) -> std::result::Result<Vec<usize>, String> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|e| format!("`{s}`: {e}")))
        .collect()
}

fn fmt_list(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

/// `x,y` in the unit square, or empty for none.
pub fn parse_point(v: &str) -> std::result::Result<Option<[f64; 2]>, String> {
    let v = v.trim();
    if v.is_empty() {
        return Ok(None);
    }
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(format!("expected `x,y`, got `{v}`"));
    }
    let x: f64 = parts[0].parse().map_err(|e| format!("`{}`: {e}", parts[0]))?;
    let y: f64 = parts[1].parse().map_err(|e| format!("`{}`: {e}", parts[1]))?;
    if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
        return Err(format!("point ({x}, {y}) lies outside the unit square"));
    }
    Ok(Some([x, y]))
}

macro_rules! config_keys {
    ($($key:ident: $kind:ident),* $(,)?) => {
        impl RunConfig {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($key)),*];

            /// Assign one key from its textual value.
            pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
                match key {
                    $(stringify!($key) => config_keys!(@parse self.$key, $kind, value),)*
                    _ => return Err(format!("unknown key `{key}`")),
                }
                Ok(())
            }

            /// Canonical text form; parsing it yields `self` again.
            pub fn to_text(&self) -> String {
                let mut out = String::new();
                $(let _ = writeln!(out, "{} = {}", stringify!($key), config_keys!(@fmt self.$key, $kind));)*
                out
            }
        }
    };
    (@parse $f:expr, num, $v:expr) => { $f = $v.parse().map_err(|e| format!("`{}`: {e}", $v))? };
    (@parse $f:expr, path, $v:expr) => { $f = PathBuf::from($v) };
    (@parse $f:expr, list, $v:expr) => { $f = parse_list($v)? };
    (@parse $f:expr, point, $v:expr) => { $f = parse_point($v)? };
    (@parse $f:expr, space, $v:expr) => {
        $f = match $v {
            "pixels" => Space::Pixels,
            "normalized" => Space::Normalized,
            other => return Err(format!("space must be `pixels` or `normalized`, got `{other}`")),
        }
    };
    (@fmt $f:expr, num) => { $f.to_string() };
    (@fmt $f:expr, path) => { $f.display().to_string() };
    (@fmt $f:expr, list) => { fmt_list(&$f) };
    (@fmt $f:expr, point) => { $f.map_or(String::new(), |p| format!("{},{}", p[0], p[1])) };
    (@fmt $f:expr, space) => {
        match $f {
            Space::Pixels => "pixels".to_string(),
            Space::Normalized => "normalized".to_string(),
        }
    };
}

config_keys! {
    dataset_root: path, checkpoint: path, loss_csv: path, gen_root: path, report: path,
    clips: num, observers: num, duration_s: num, rate_hz: num, blob_counts: list,
    blob_sigma: num, motion_speed: num, saliency_height: num, saliency_width: num,
    width_px: num, height_px: num, dwell_s: num, saccade_s: num, pursuit_gain: num, jitter: num,
    history_len: num, predict_len: num, cond_stride: num, grid_rows: num, grid_cols: num,
    train_steps: num, beta_start: num, beta_end: num, sample_steps: num, eta: num,
    base_width: num, level_mults: list, attn_levels: list, heads: num, precondition: num, data_mean: num, data_std: num,
    epochs: num, batch_size: num, lr: num, history_min: num, history_max: num, train_observers: num,
    horizon_s: num, num_samples: num, warm_observer: num, cold_start: num, cold_point: point, eval_observers: list,
    lev_rows: num, lev_cols: num, max_lag_s: num, space: space,
    seed: num, workers: num,
}

impl RunConfig {
    /// Parse `key = value` lines over the defaults. `#` starts a comment.
    /// Unknown and repeated keys are errors.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i as u64 + 1;
            let err = |message: String| Error::Parse {
                path: origin.to_path_buf(),
                line: line_no,
                message,
            };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(err(format!("key `{key}` given twice")));
            }
            cfg.set(key, value).map_err(err)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn window(&self) -> Result<WindowSpec> {
        WindowSpec::new(self.history_len, self.predict_len)
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        linear_beta_schedule(self.train_steps, self.beta_start, self.beta_end)
    }

    pub fn diffusion(&self) -> Result<DiffusionConfig> {
        DiffusionConfig::new(self.schedule()?, self.sample_steps, self.window()?, self.cond_stride, self.eta)
    }

    pub fn denoiser(&self) -> Result<DenoiserConfig> {
        let precondition = if self.precondition {
            Some(Precondition {
                schedule: self.schedule()?,
                data_mean: self.data_mean,
                data_std: self.data_std,
            })
        } else {
            None
        };
        Ok(DenoiserConfig {
            base_width: self.base_width,
            level_mults: self.level_mults.clone(),
            attn_levels: self.attn_levels.clone(),
            cond_dim: COND_DIM,
            heads: self.heads,
            window_len: self.history_len + self.predict_len,
            precondition,
        })
    }

    pub fn train(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            epochs: self.epochs,
            start_epoch: 0,
            batch_size: self.batch_size,
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            history_min: self.history_min,
            history_max: self.history_max,
            schedule: self.schedule()?,
            seed: self.seed,
        })
    }

    pub fn metrics(&self) -> MetricConfig {
        MetricConfig {
            grid: (self.lev_rows, self.lev_cols),
            max_lag_s: self.max_lag_s,
            space: self.space,
        }
    }

    pub fn oracle(&self) -> GazeOracleParams {
        GazeOracleParams {
            fixation_dwell_s: self.dwell_s,
            saccade_dur_s: self.saccade_s,
            pursuit_gain: self.pursuit_gain,
            jitter_sigma: self.jitter,
        }
    }

    /// Scene of clip `c`.
    pub fn scene(&self, c: usize) -> SynthSceneSpec {
        SynthSceneSpec {
            blob_count: self.blob_counts[c % self.blob_counts.len()],
            blob_sigma: self.blob_sigma,
            motion_speed: self.motion_speed,
            seed: crate::seed::derive(self.seed, &[0x5343_454e, c as u64]),
            duration_s: self.duration_s,
            rate_hz: self.rate_hz,
            height: self.saliency_height,
            width: self.saliency_width,
        }
    }

    /// Oracle seed of observer `o` on clip `c`.
    pub fn observer_seed(&self, c: usize, o: usize) -> u64 {
        crate::seed::derive(self.seed, &[0x4f4253, c as u64, o as u64])
    }

    pub fn horizon_samples(&self) -> usize {
        (self.horizon_s * self.rate_hz).round() as usize
    }

    /// Check every module invariant that does not need the file system.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.blob_counts.is_empty() || self.blob_counts.contains(&0) {
            return bad("blob_counts must list positive counts".into());
        }
        if self.clips == 0 || self.observers == 0 {
            return bad("clips and observers must be positive".into());
        }
        if self.train_observers == 0 || self.train_observers > self.observers {
            return bad(format!("train_observers must lie in 1..={}", self.observers));
        }
        if self.warm_observer >= self.observers {
            return bad(format!("warm_observer {} exceeds {} observers", self.warm_observer, self.observers));
        }
        if let Some(o) = self.eval_observers.iter().find(|&&o| o >= self.observers) {
            return bad(format!("eval observer {o} exceeds {} observers", self.observers));
        }
        if self.grid_rows == 0 || self.grid_cols == 0 {
            return bad("pooling grid must be at least 1x1".into());
        }
        if self.grid_rows > self.saliency_height || self.grid_cols > self.saliency_width {
            return bad("pooling grid is finer than the saliency frames".into());
        }
        if self.width_px == 0 || self.height_px == 0 {
            return bad("video size must be positive".into());
        }
        if !(self.rate_hz > 0.0) || !(self.duration_s > 0.0) || !(self.horizon_s > 0.0) {
            return bad("rate, duration and horizon must be positive".into());
        }
        if self.num_samples == 0 || self.epochs == 0 {
            return bad("num_samples and epochs must be positive".into());
        }
        if self.history_len == 0 {
            return bad("history_len must be positive".into());
        }
        self.diffusion()?.validate()?;
        self.denoiser()?.validate()?;
        self.metrics().validate()?;
        let tc = self.train()?;
        if tc.batch_size == 0 || !(tc.adam.lr > 0.0) {
            return bad("batch_size and lr must be positive".into());
        }
        if self.history_min > self.history_max || self.history_max >= self.history_len + self.predict_len {
            return bad("need history_min <= history_max < window length".into());
        }
        Ok(())
    }
}
