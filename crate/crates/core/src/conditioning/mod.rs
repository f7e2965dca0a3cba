//! Saliency conditioning: spatial average pooling of per-frame saliency maps,
//! temporal subsampling into token sets, and the positional tags attached to
//! every token.

mod salb;
pub mod synth;

pub use salb::{decode_salb, read_pgm_dir, read_salb, read_salb_header, write_salb, SalbHeader, SALB_MAGIC};
pub use synth::{synth_gaze_oracle, synth_scene, synth_scene_tracks, GazeOracleParams, SynthSceneSpec};

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Number of octaves in each sinusoidal positional tag.
pub const TAG_OCTAVES: usize = 3;
/// Width of a one-dimensional positional tag.
pub const TAG_DIM_1D: usize = 2 * TAG_OCTAVES;
/// Feature width of a token: pooled value followed by the (row, col) tag.
pub const TOKEN_DIM: usize = 1 + 2 * TAG_DIM_1D;

/// Per-frame single-channel saliency maps, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyClip {
    /// Frame-major, row-major values.
    pub data: Vec<f32>,
    pub frame_count: usize,
    pub height: usize,
    pub width: usize,
    pub rate_hz: f64,
    pub video_id: String,
}

impl SaliencyClip {
    pub fn new(
        data: Vec<f32>,
        frame_count: usize,
        height: usize,
        width: usize,
        rate_hz: f64,
        video_id: impl Into<String>,
    ) -> Result<Self> {
        if frame_count == 0 || height == 0 || width == 0 {
            return Err(Error::invalid("saliency clip needs at least one non-empty frame"));
        }
        if data.len() != frame_count * height * width {
            return Err(Error::shape(
                "saliency clip",
                frame_count * height * width,
                data.len(),
            ));
        }
        if let Some((i, v)) = data.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("saliency value {v} at index {i} outside [0,1]")));
        }
        if !(rate_hz > 0.0 && rate_hz.is_finite()) {
            return Err(Error::invalid(format!("clip rate must be positive, got {rate_hz}")));
        }
        Ok(Self {
            data,
            frame_count,
            height,
            width,
            rate_hz,
            video_id: video_id.into(),
        })
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        let sz = self.height * self.width;
        &self.data[i * sz..(i + 1) * sz]
    }

    pub fn at(&self, frame: usize, row: usize, col: usize) -> f32 {
        self.data[(frame * self.height + row) * self.width + col]
    }
}

/// Bounds of pooling cell `i` out of `cells` over an axis of length `len`.
/// Every cell spans `len / cells` entries; the last also takes the remainder.
pub fn cell_bounds(i: usize, cells: usize, len: usize) -> (usize, usize) {
    let base = len / cells;
    let start = i * base;
    let end = if i + 1 == cells { len } else { start + base };
    (start, end)
}

/// Spatially pooled frames, `frame_count x rows x cols` cell means.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledFrames {
    pub cells: Vec<f64>,
    pub frame_count: usize,
    pub rows: usize,
    pub cols: usize,
    pub rate_hz: f64,
}

impl PooledFrames {
    pub fn frame(&self, i: usize) -> &[f64] {
        let sz = self.rows * self.cols;
        &self.cells[i * sz..(i + 1) * sz]
    }
}

/// Average-pool every frame onto a `rows x cols` partition of the image.
pub fn pool_compress(clip: &SaliencyClip, grid: (usize, usize)) -> Result<PooledFrames> {
    let (rows, cols) = grid;
    if rows == 0 || cols == 0 || rows > clip.height || cols > clip.width {
        return Err(Error::invalid(format!(
            "pooling grid {rows}x{cols} does not fit frame {}x{}",
            clip.height, clip.width
        )));
    }
    let per_frame = rows * cols;
    let mut cells = vec![0.0; clip.frame_count * per_frame];
    cells
        .par_chunks_mut(per_frame)
        .enumerate()
        .for_each(|(f, out)| {
            let frame = clip.frame(f);
            for r in 0..rows {
                let (r0, r1) = cell_bounds(r, rows, clip.height);
                for c in 0..cols {
                    let (c0, c1) = cell_bounds(c, cols, clip.width);
                    let mut sum = 0.0f64;
                    for y in r0..r1 {
                        let line = &frame[y * clip.width..(y + 1) * clip.width];
                        sum += line[c0..c1].iter().map(|&v| v as f64).sum::<f64>();
                    }
                    out[r * cols + c] = sum / ((r1 - r0) * (c1 - c0)) as f64;
                }
            }
        });
    Ok(PooledFrames {
        cells,
        frame_count: clip.frame_count,
        rows,
        cols,
        rate_hz: clip.rate_hz,
    })
}

/// Sinusoidal tag of a normalized position `p`: `sin(pi 2^j p), cos(pi 2^j p)`.
pub fn positional_tag(p: f64, out: &mut [f64]) {
    debug_assert_eq!(out.len(), TAG_DIM_1D);
    for j in 0..TAG_OCTAVES {
        let a = std::f64::consts::PI * (1u32 << j) as f64 * p;
        out[2 * j] = a.sin();
        out[2 * j + 1] = a.cos();
    }
}

/// Pooled grid values of one conditioning frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSet {
    /// Source frame index.
    pub frame: usize,
    pub values: Vec<f64>,
}

/// Temporally subsampled pooled saliency: one token set every `stride_frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSequence {
    pub sets: Vec<TokenSet>,
    pub rows: usize,
    pub cols: usize,
    pub stride_frames: usize,
    pub source_rate_hz: f64,
    /// Frames of the source clip.
    pub frame_count: usize,
    /// `(rows*cols) x 2*TAG_DIM_1D` fixed (row, col) tags, shared by all sets.
    pub tags: Vec<f64>,
}

/// Keep frames `0, s, 2s, ...` and attach positional tags.
pub fn temporal_subsample(pooled: &PooledFrames, stride_frames: usize) -> Result<LatentSequence> {
    if stride_frames == 0 {
        return Err(Error::invalid("conditioning stride must be at least 1"));
    }
    let sets = (0..pooled.frame_count)
        .step_by(stride_frames)
        .map(|f| TokenSet {
            frame: f,
            values: pooled.frame(f).to_vec(),
        })
        .collect();

    let mut tags = vec![0.0; pooled.rows * pooled.cols * 2 * TAG_DIM_1D];
    // Tags sit at cell centers in unit-square coordinates; with unequal cells
    // the exact pixel centers differ slightly, which only shifts the encoding.
    for r in 0..pooled.rows {
        for c in 0..pooled.cols {
            let base = (r * pooled.cols + c) * 2 * TAG_DIM_1D;
            let row_p = (r as f64 + 0.5) / pooled.rows as f64;
            let col_p = (c as f64 + 0.5) / pooled.cols as f64;
            positional_tag(row_p, &mut tags[base..base + TAG_DIM_1D]);
            positional_tag(col_p, &mut tags[base + TAG_DIM_1D..base + 2 * TAG_DIM_1D]);
        }
    }

    Ok(LatentSequence {
        sets,
        rows: pooled.rows,
        cols: pooled.cols,
        stride_frames,
        source_rate_hz: pooled.rate_hz,
        frame_count: pooled.frame_count,
        tags,
    })
}

/// Pool and subsample in one go.
pub fn encode_clip(clip: &SaliencyClip, grid: (usize, usize), stride_frames: usize) -> Result<LatentSequence> {
    temporal_subsample(&pool_compress(clip, grid)?, stride_frames)
}

impl LatentSequence {
    pub fn tokens_per_set(&self) -> usize {
        self.rows * self.cols
    }

    pub fn tag(&self, token: usize) -> &[f64] {
        let w = 2 * TAG_DIM_1D;
        &self.tags[token * w..(token + 1) * w]
    }

    /// Write the `TOKEN_DIM` features of `token` in `set` into `out`.
    pub fn token_features(&self, set: &TokenSet, token: usize, out: &mut [f64]) {
        out[0] = set.values[token];
        out[1..TOKEN_DIM].copy_from_slice(self.tag(token));
    }

    /// Token sets whose frame lies in `[start, start + len)`.
    pub fn sets_in(&self, start: usize, len: usize) -> &[TokenSet] {
        let s = self.stride_frames;
        let lo = start.div_ceil(s).min(self.sets.len());
        let hi = (start + len).div_ceil(s).min(self.sets.len());
        &self.sets[lo..hi]
    }

    /// True when every frame of `[start, start + len)` exists in the source clip.
    pub fn covers(&self, start: usize, len: usize) -> bool {
        start + len <= self.frame_count
    }

    /// Per-frame view obtained by repeating each set over its stride.
    pub fn expand(&self) -> Vec<&TokenSet> {
        (0..self.frame_count)
            .map(|f| &self.sets[f / self.stride_frames])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn clip(frames: usize, h: usize, w: usize, data: Vec<f32>) -> SaliencyClip {
        SaliencyClip::new(data, frames, h, w, 30.0, "v").unwrap()
    }

    #[test]
    fn constant_field_pools_to_constant() {
        let c = clip(1, 4, 4, vec![1.0; 16]);
        let p = pool_compress(&c, (2, 2)).unwrap();
        assert_eq!(p.cells, vec![1.0; 4]);
    }

    #[test]
    fn checkerboard_mean() {
        let c = clip(1, 2, 2, vec![0.0, 1.0, 1.0, 0.0]);
        let p = pool_compress(&c, (1, 1)).unwrap();
        assert_eq!(p.cells, vec![0.5]);
    }

    #[test]
    fn uneven_partition_matches_naive_loop() {
        let mut rng = crate::seed::rng(11);
        let data: Vec<f32> = (0..25).map(|_| rng.gen::<f32>()).collect();
        let c = clip(1, 5, 5, data.clone());
        let p = pool_compress(&c, (2, 2)).unwrap();
        // Partition of a 5-long axis into 2 cells: [0,2) and [2,5).
        let ranges = [(0usize, 2usize), (2, 5)];
        for (r, &(r0, r1)) in ranges.iter().enumerate() {
            for (cc, &(c0, c1)) in ranges.iter().enumerate() {
                let mut sum = 0.0f64;
                let mut n = 0;
                for y in r0..r1 {
                    for x in c0..c1 {
                        sum += data[y * 5 + x] as f64;
                        n += 1;
                    }
                }
                assert_eq!(p.cells[r * 2 + cc], sum / n as f64);
            }
        }
    }

    #[test]
    fn grid_larger_than_frame_is_rejected() {
        let c = clip(1, 2, 2, vec![0.0; 4]);
        assert!(pool_compress(&c, (3, 1)).is_err());
        assert!(pool_compress(&c, (0, 1)).is_err());
    }

    #[test]
    fn subsample_counts() {
        let pooled = |n| PooledFrames {
            cells: (0..n).map(|i| i as f64 / n as f64).collect(),
            frame_count: n,
            rows: 1,
            cols: 1,
            rate_hz: 30.0,
        };
        assert_eq!(temporal_subsample(&pooled(135), 5).unwrap().sets.len(), 27);
        assert_eq!(temporal_subsample(&pooled(10), 1).unwrap().sets.len(), 10);
        let l = temporal_subsample(&pooled(7), 3).unwrap();
        let frames: Vec<usize> = l.sets.iter().map(|s| s.frame).collect();
        assert_eq!(frames, vec![0, 3, 6]);
        assert!(temporal_subsample(&pooled(7), 0).is_err());
    }

    #[test]
    fn sets_in_window() {
        let pooled = PooledFrames {
            cells: vec![0.0; 300],
            frame_count: 300,
            rows: 1,
            cols: 1,
            rate_hz: 30.0,
        };
        let l = temporal_subsample(&pooled, 5).unwrap();
        let s = l.sets_in(45, 135);
        assert_eq!(s.len(), 27);
        assert_eq!(s[0].frame, 45);
        assert_eq!(s.last().unwrap().frame, 175);
        assert_eq!(l.sets_in(1, 4).len(), 0);
        assert_eq!(l.sets_in(1, 5).len(), 1);
    }

    #[test]
    fn clip_rejects_out_of_range_values() {
        assert!(SaliencyClip::new(vec![1.5], 1, 1, 1, 30.0, "v").is_err());
        assert!(SaliencyClip::new(vec![0.5; 3], 1, 2, 2, 30.0, "v").is_err());
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn equal_partitions_preserve_mean(
            rows in 1usize..4, cols in 1usize..4, fr in 1usize..4, fc in 1usize..4,
            seed in any::<u64>(),
        ) {
            use rand::Rng;
            let (h, w) = (rows * fr, cols * fc);
            let mut rng = crate::seed::rng(seed);
            let data: Vec<f32> = (0..h * w).map(|_| rng.gen::<f32>()).collect();
            let c = SaliencyClip::new(data.clone(), 1, h, w, 30.0, "v").unwrap();
            let p = pool_compress(&c, (rows, cols)).unwrap();
            let m_frame = data.iter().map(|&v| v as f64).sum::<f64>() / (h * w) as f64;
            let m_pool = p.cells.iter().sum::<f64>() / p.cells.len() as f64;
            prop_assert!((m_frame - m_pool).abs() < 1e-6);
            prop_assert!(p.cells.iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn expansion_repeats_kept_frames(n in 1usize..50, stride in 1usize..9) {
            let pooled = PooledFrames {
                cells: (0..n).map(|i| i as f64).collect(),
                frame_count: n,
                rows: 1,
                cols: 1,
                rate_hz: 30.0,
            };
            let l = temporal_subsample(&pooled, stride).unwrap();
            prop_assert_eq!(l.sets.len(), n.div_ceil(stride));
            let expanded = l.expand();
            prop_assert_eq!(expanded.len(), n);
            for (f, set) in expanded.iter().enumerate() {
                prop_assert_eq!(set.frame, (f / stride) * stride);
                prop_assert_eq!(set.values[0], set.frame as f64);
            }
        }
    }
}
