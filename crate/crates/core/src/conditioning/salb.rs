//! `SALB` saliency container and PGM frame directories.
//!
//! Layout: magic `SALB`, then little-endian u32 `version, frame_count, H, W`,
//! then `frame_count*H*W` little-endian f32 values, frame-major, row-major.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::SaliencyClip;
use crate::error::{Error, Result};

pub const SALB_MAGIC: &[u8; 4] = b"SALB";
const SALB_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SalbHeader {
    pub version: u32,
    pub frame_count: u32,
    pub height: u32,
    pub width: u32,
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        format: "SALB",
        offset: offset as u64,
        message: message.into(),
    }
}

fn u32_at(bytes: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap())
}

/// Parse and validate the fixed header.
pub fn read_salb_header(bytes: &[u8]) -> Result<SalbHeader> {
    if bytes.len() < 4 || &bytes[..4] != SALB_MAGIC {
        return Err(format_err(0, "missing SALB magic"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(format_err(bytes.len(), "truncated header"));
    }
    let header = SalbHeader {
        version: u32_at(bytes, 4),
        frame_count: u32_at(bytes, 8),
        height: u32_at(bytes, 12),
        width: u32_at(bytes, 16),
    };
    if header.version != SALB_VERSION {
        return Err(format_err(4, format!("unsupported version {}", header.version)));
    }
    if header.frame_count == 0 || header.height == 0 || header.width == 0 {
        return Err(format_err(8, "zero frame count or frame size"));
    }
    Ok(header)
}

/// Decode a SALB byte buffer.
pub fn decode_salb(bytes: &[u8], rate_hz: f64, video_id: &str) -> Result<SaliencyClip> {
    let h = read_salb_header(bytes)?;
    let count = h.frame_count as usize * h.height as usize * h.width as usize;
    let expected = HEADER_LEN + 4 * count;
    if bytes.len() < expected {
        return Err(format_err(bytes.len(), format!("truncated data, expected {expected} bytes")));
    }
    if bytes.len() > expected {
        return Err(format_err(expected, "trailing bytes after frame data"));
    }
    let mut data = Vec::with_capacity(count);
    for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !(0.0..=1.0).contains(&v) {
            return Err(format_err(HEADER_LEN + 4 * i, format!("value {v} outside [0,1]")));
        }
        data.push(v);
    }
    SaliencyClip::new(
        data,
        h.frame_count as usize,
        h.height as usize,
        h.width as usize,
        rate_hz,
        video_id,
    )
}

pub fn read_salb(path: &Path, rate_hz: f64, video_id: &str) -> Result<SaliencyClip> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_salb(&bytes, rate_hz, video_id)
}

pub fn write_salb(clip: &SaliencyClip, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(SALB_MAGIC).map_err(io)?;
    for v in [
        SALB_VERSION,
        clip.frame_count as u32,
        clip.height as u32,
        clip.width as u32,
    ] {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    for v in &clip.data {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Parse one binary (P5) 8-bit PGM image into `(height, width, values/255)`.
fn parse_pgm(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let err = |offset: usize, msg: &str| Error::Format {
        format: "PGM",
        offset: offset as u64,
        message: format!("{}: {msg}", path.display()),
    };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(err(0, "not a binary PGM (P5)"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err(start, "bad header field"))?;
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(err(pos, "only 8-bit PGM (maxval 255) is supported"));
    }
    if w == 0 || h == 0 || bytes.len() < pos + w * h {
        return Err(err(bytes.len(), "truncated raster"));
    }
    let data = bytes[pos..pos + w * h].iter().map(|&b| b as f32 / 255.0).collect();
    Ok((h, w, data))
}

/// Read `000000.pgm, 000001.pgm, ...` from a directory, stopping at the first gap.
pub fn read_pgm_dir(dir: &Path, rate_hz: f64, video_id: &str) -> Result<SaliencyClip> {
    let mut data = Vec::new();
    let mut shape = None;
    let mut frames = 0usize;
    loop {
        let path = dir.join(format!("{frames:06}.pgm"));
        if !path.exists() {
            break;
        }
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let (h, w, values) = parse_pgm(&bytes, &path)?;
        match shape {
            None => shape = Some((h, w)),
            Some(s) if s != (h, w) => {
                return Err(Error::shape(path.display().to_string(), format!("{s:?}"), format!("{:?}", (h, w))))
            }
            _ => {}
        }
        data.extend(values);
        frames += 1;
    }
    let (h, w) = shape.ok_or_else(|| Error::invalid(format!("no 000000.pgm in {}", dir.display())))?;
    SaliencyClip::new(data, frames, h, w, rate_hz, video_id)
}
