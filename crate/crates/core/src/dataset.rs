//! On-disk dataset layout shared by the commands.
//!
//! ```text
//! <root>/manifest.csv
//! <root>/saliency/<video>.salb
//! <root>/gaze/<video>/<observer>.csv
//! ```
//!
//! The manifest has one row per video:
//! `video_id,width_px,height_px,rate_hz,frame_count,saliency,gaze`, where
//! `gaze` lists `;`-separated paths relative to the root. Generated sets use
//! `<gen_root>/<video>/sample_XX.csv` with no manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::conditioning::{read_salb, synth_gaze_oracle, synth_scene, write_salb, SaliencyClip};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::gaze::{ingest_gaze_csv, write_trajectory_csv, GazeTrajectory, VideoMeta};

pub const MANIFEST_FILE: &str = "manifest.csv";
const MANIFEST_HEADER: [&str; 7] = ["video_id", "width_px", "height_px", "rate_hz", "frame_count", "saliency", "gaze"];

/// Relative rate difference below which an ingested trajectory is snapped to
/// the video rate; estimates from printed timestamps carry rounding noise.
const RATE_SNAP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub meta: VideoMeta,
    /// Relative to the dataset root.
    pub saliency: PathBuf,
    /// Relative to the dataset root, in observer order.
    pub gaze: Vec<PathBuf>,
}

/// One synthetic video held in memory.
#[derive(Debug, Clone)]
pub struct SynthVideo {
    pub meta: VideoMeta,
    pub clip: SaliencyClip,
    /// Observer `o` has id `obs<o>`.
    pub observers: Vec<GazeTrajectory>,
}

pub fn write_manifest(root: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let path = root.join(MANIFEST_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_io(&path, e))?;
    w.write_record(MANIFEST_HEADER).map_err(|e| csv_io(&path, e))?;
    for e in entries {
        let gaze: Vec<String> = e.gaze.iter().map(|p| p.display().to_string()).collect();
        if gaze.iter().any(|g| g.contains(';')) {
            return Err(Error::invalid("gaze paths must not contain `;`"));
        }
        w.write_record([
            e.meta.video_id.clone(),
            e.meta.width_px.to_string(),
            e.meta.height_px.to_string(),
            e.meta.rate_hz.to_string(),
            e.meta.frame_count.to_string(),
            e.saliency.display().to_string(),
            gaze.join(";"),
        ])
        .map_err(|e| csv_io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

pub fn read_manifest(root: &Path) -> Result<Vec<ManifestEntry>> {
    let path = root.join(MANIFEST_FILE);
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let parse = |line: u64, message: String| Error::Parse {
        path: path.clone(),
        line,
        message,
    };
    let headers = r.headers().map_err(|e| parse(1, e.to_string()))?.clone();
    if headers.iter().ne(MANIFEST_HEADER) {
        return Err(parse(1, format!("expected header `{}`", MANIFEST_HEADER.join(","))));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| parse(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != MANIFEST_HEADER.len() {
            return Err(parse(line, format!("expected {} fields, got {}", MANIFEST_HEADER.len(), rec.len())));
        }
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .map_err(|_| parse(line, format!("field `{}` is not a number: `{}`", MANIFEST_HEADER[i], &rec[i])))
        };
        let int = |i: usize| -> Result<u32> {
            rec[i]
                .parse::<u32>()
                .map_err(|_| parse(line, format!("field `{}` is not a count: `{}`", MANIFEST_HEADER[i], &rec[i])))
        };
        let meta = VideoMeta::new(&rec[0], int(1)?, int(2)?, num(3)?, int(4)?).map_err(|e| parse(line, e.to_string()))?;
        if out.iter().any(|o: &ManifestEntry| o.meta.video_id == meta.video_id) {
            return Err(parse(line, format!("video `{}` listed twice", meta.video_id)));
        }
        let gaze: Vec<PathBuf> = rec[6].split(';').filter(|s| !s.trim().is_empty()).map(|s| PathBuf::from(s.trim())).collect();
        if gaze.is_empty() {
            return Err(parse(line, format!("video `{}` lists no gaze files", meta.video_id)));
        }
        out.push(ManifestEntry {
            meta,
            saliency: PathBuf::from(&rec[5]),
            gaze,
        });
    }
    if out.is_empty() {
        return Err(parse(1, "manifest lists no videos".into()));
    }
    Ok(out)
}

pub fn load_clip(root: &Path, entry: &ManifestEntry) -> Result<SaliencyClip> {
    read_salb(&root.join(&entry.saliency), entry.meta.rate_hz, &entry.meta.video_id)
}

fn snap_rate(mut t: GazeTrajectory, rate: f64) -> GazeTrajectory {
    if ((t.rate_hz - rate) / rate).abs() < RATE_SNAP {
        t.rate_hz = rate;
    }
    t
}

/// Read CSV files in order, concatenating their observers.
pub fn load_trajectories(paths: &[PathBuf], meta: &VideoMeta) -> Result<Vec<GazeTrajectory>> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(ingest_gaze_csv(p, meta)?.into_iter().map(|t| snap_rate(t, meta.rate_hz)));
    }
    Ok(out)
}

/// Observers of a manifest entry in manifest order.
pub fn load_observers(root: &Path, entry: &ManifestEntry) -> Result<Vec<GazeTrajectory>> {
    let paths: Vec<PathBuf> = entry.gaze.iter().map(|g| root.join(g)).collect();
    load_trajectories(&paths, &entry.meta)
}

/// Sorted `*.csv` files of `<gen_root>/<video>`.
pub fn generated_files(gen_root: &Path, video_id: &str) -> Result<Vec<PathBuf>> {
    let dir = gen_root.join(video_id);
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    Ok(files)
}

/// Write `sample_XX.csv` files under `<gen_root>/<video>`, replacing the directory contents' CSVs.
pub fn write_generated(gen_root: &Path, meta: &VideoMeta, samples: &[GazeTrajectory]) -> Result<Vec<PathBuf>> {
    let dir = gen_root.join(&meta.video_id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    if let Ok(old) = generated_files(gen_root, &meta.video_id) {
        for f in old {
            fs::remove_file(&f).map_err(|e| Error::io(&f, e))?;
        }
    }
    let mut out = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let path = dir.join(format!("sample_{i:02}.csv"));
        write_trajectory_csv(s, meta, &path)?;
        out.push(path);
    }
    Ok(out)
}

pub fn synth_video_id(c: usize) -> String {
    format!("synth{c:03}")
}

/// Render clip `c` and simulate its observers.
pub fn synth_video(cfg: &RunConfig, c: usize) -> Result<SynthVideo> {
    let id = synth_video_id(c);
    let mut clip = synth_scene(&cfg.scene(c))?;
    clip.video_id = id.clone();
    let meta = VideoMeta::new(&id, cfg.width_px, cfg.height_px, cfg.rate_hz, clip.frame_count as u32)?;
    let observers = (0..cfg.observers)
        .map(|o| {
            let mut t = synth_gaze_oracle(&clip, cfg.observer_seed(c, o), &cfg.oracle())?;
            t.observer_id = format!("obs{o}");
            t.video_id = id.clone();
            Ok(t)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthVideo { meta, clip, observers })
}

/// Write `cfg.clips` synthetic videos under `root` and return the manifest.
pub fn synth_dataset(cfg: &RunConfig, root: &Path) -> Result<Vec<ManifestEntry>> {
    cfg.validate()?;
    let sal_dir = root.join("saliency");
    fs::create_dir_all(&sal_dir).map_err(|e| Error::io(&sal_dir, e))?;
    let mut entries = Vec::with_capacity(cfg.clips);
    for c in 0..cfg.clips {
        let v = synth_video(cfg, c)?;
        let id = &v.meta.video_id;
        let saliency = PathBuf::from("saliency").join(format!("{id}.salb"));
        write_salb(&v.clip, &root.join(&saliency))?;
        let gaze_dir = PathBuf::from("gaze").join(id);
        fs::create_dir_all(root.join(&gaze_dir)).map_err(|e| Error::io(root.join(&gaze_dir), e))?;
        let mut gaze = Vec::with_capacity(v.observers.len());
        for t in &v.observers {
            let rel = gaze_dir.join(format!("{}.csv", t.observer_id));
            write_trajectory_csv(t, &v.meta, &root.join(&rel))?;
            gaze.push(rel);
        }
        entries.push(ManifestEntry {
            meta: v.meta,
            saliency,
            gaze,
        });
    }
    write_manifest(root, &entries)?;
    Ok(entries)
}

/// Write the effective configuration next to an artifact.
pub fn write_config(cfg: &RunConfig, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(cfg.to_text().as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RunConfig {
        RunConfig {
            clips: 2,
            observers: 2,
            train_observers: 1,
            warm_observer: 1,
            eval_observers: vec![1],
            duration_s: 6.0,
            ..RunConfig::default()
        }
    }

    #[test]
    fn synth_dataset_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small();
        let entries = synth_dataset(&cfg, dir.path()).unwrap();
        assert_eq!(read_manifest(dir.path()).unwrap(), entries);
        let mem = synth_video(&cfg, 1).unwrap();
        let e = &entries[1];
        assert_eq!(load_clip(dir.path(), e).unwrap(), mem.clip);
        let obs = load_observers(dir.path(), e).unwrap();
        assert_eq!(obs.len(), 2);
        for (a, b) in obs.iter().zip(&mem.observers) {
            assert_eq!(a.observer_id, b.observer_id);
            assert_eq!(a.rate_hz, cfg.rate_hz);
            assert_eq!(a.len(), b.len());
            for (s, r) in a.samples.iter().zip(&b.samples) {
                assert!((s.x - r.x).abs() < 1e-12 && (s.y - r.y).abs() < 1e-12 && s.t == r.t);
            }
        }
    }

    #[test]
    fn synthesis_is_deterministic_and_varies_by_clip() {
        let cfg = small();
        let a = synth_video(&cfg, 0).unwrap();
        let b = synth_video(&cfg, 0).unwrap();
        let c = synth_video(&cfg, 1).unwrap();
        assert_eq!(a.clip, b.clip);
        assert_eq!(a.observers, b.observers);
        assert_ne!(a.clip.data, c.clip.data);
        assert_ne!(a.observers[0].points(), a.observers[1].points());
    }

    #[test]
    fn manifest_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_manifest(dir.path()), Err(Error::Io { .. })));
        fs::write(dir.path().join(MANIFEST_FILE), "video_id,w\n").unwrap();
        assert!(matches!(read_manifest(dir.path()), Err(Error::Parse { line: 1, .. })));
        fs::write(
            dir.path().join(MANIFEST_FILE),
            "video_id,width_px,height_px,rate_hz,frame_count,saliency,gaze\nv,10,10,x,5,s.salb,g.csv\n",
        )
        .unwrap();
        assert!(matches!(read_manifest(dir.path()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn generated_files_are_replaced() {
        let dir = tempfile::tempdir().unwrap();
        let meta = VideoMeta::new("v", 10, 10, 10.0, 10).unwrap();
        let t = GazeTrajectory::from_points(&[[0.5, 0.5], [0.6, 0.5]], 0.0, 10.0, "s", "v").unwrap();
        write_generated(dir.path(), &meta, &[t.clone(), t.clone(), t.clone()]).unwrap();
        write_generated(dir.path(), &meta, std::slice::from_ref(&t)).unwrap();
        let files = generated_files(dir.path(), "v").unwrap();
        assert_eq!(files.len(), 1);
        assert!(files[0].ends_with("sample_00.csv"));
    }
}
