//! GZDF checkpoints.
//!
//! Layout: `GZDF`, u32 version, u32 tensor count, then per tensor a u16 name
//! length, the name, u8 rank, rank u32 dims and f32 data, all little endian
//! and sorted by name; a trailing u64 step counter. Adam moments travel as
//! extra tensors named `adam.m.<param>` and `adam.v.<param>`.

use std::path::Path;

use super::params::ParameterSet;
use super::{Denoiser, DenoiserConfig};
use crate::error::{Error, Result};

pub const GZDF_MAGIC: &[u8; 4] = b"GZDF";
pub const GZDF_VERSION: u32 = 1;
const MOMENT_M: &str = "adam.m.";
const MOMENT_V: &str = "adam.v.";

#[derive(Debug, Clone, PartialEq)]
pub struct GzdfTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GzdfFile {
    pub tensors: Vec<GzdfTensor>,
    pub step: u64,
}

impl GzdfFile {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut sorted: Vec<&GzdfTensor> = self.tensors.iter().collect();
        sorted.sort_by(|a, b| a.name.cmp(&b.name));
        if sorted.windows(2).any(|w| w[0].name == w[1].name) {
            return Err(Error::invalid("duplicate tensor names"));
        }
        let mut out = Vec::new();
        out.extend_from_slice(GZDF_MAGIC);
        out.extend_from_slice(&GZDF_VERSION.to_le_bytes());
        out.extend_from_slice(&u32::try_from(sorted.len()).map_err(|_| Error::invalid("too many tensors"))?.to_le_bytes());
        for t in sorted {
            let name = t.name.as_bytes();
            let len = u16::try_from(name.len()).map_err(|_| Error::invalid(format!("tensor name too long: {}", t.name)))?;
            let rank = u8::try_from(t.dims.len()).map_err(|_| Error::invalid("tensor rank above 255"))?;
            if t.dims.iter().product::<usize>() != t.data.len() {
                return Err(Error::shape(format!("tensor {}", t.name), t.dims.iter().product::<usize>(), t.data.len()));
            }
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name);
            out.push(rank);
            for &d in &t.dims {
                out.extend_from_slice(&u32::try_from(d).map_err(|_| Error::invalid("dimension above u32"))?.to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&self.step.to_le_bytes());
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != GZDF_MAGIC {
            return Err(r.err(0, format!("bad magic {magic:?}")));
        }
        let version = r.u32("version")?;
        if version != GZDF_VERSION {
            return Err(r.err(4, format!("unsupported version {version}")));
        }
        let count = r.u32("tensor count")? as usize;
        let mut tensors: Vec<GzdfTensor> = Vec::with_capacity(count.min(4096));
        for i in 0..count {
            let at = r.pos;
            let len = r.u16("name length")? as usize;
            let name = String::from_utf8(r.take(len, "name")?.to_vec())
                .map_err(|_| r.err(at + 2, format!("tensor {i} name is not utf-8")))?;
            if let Some(prev) = tensors.last() {
                if prev.name >= name {
                    return Err(r.err(at, format!("tensor {name} out of order or duplicated")));
                }
            }
            let rank = r.take(1, "rank")?[0] as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32("dimension")? as usize);
            }
            let n = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| r.err(at, format!("tensor {name} is too large")))?;
            let raw = r.take(n.checked_mul(4).ok_or_else(|| r.err(at, "tensor too large".into()))?, &format!("data of {name}"))?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            tensors.push(GzdfTensor { name, dims, data });
        }
        let step = u64::from_le_bytes(r.take(8, "step counter")?.try_into().expect("8 bytes"));
        if r.pos != bytes.len() {
            return Err(r.err(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(GzdfFile { tensors, step })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, offset: usize, message: String) -> Error {
        Error::Format {
            format: "GZDF",
            offset: offset as u64,
            message,
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(
                self.pos,
                format!("truncated {what}: need {n} bytes, {} remain", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn write_gzdf(path: &Path, file: &GzdfFile) -> Result<()> {
    let bytes = file.encode()?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_gzdf(path: &Path) -> Result<GzdfFile> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    GzdfFile::decode(&bytes)
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// Parameters and Adam state as a GZDF image.
pub fn checkpoint_file(params: &ParameterSet) -> GzdfFile {
    let mut tensors = Vec::with_capacity(3 * params.len());
    for i in 0..params.len() {
        let dims = params.shape(i).to_vec();
        let name = params.name(i);
        tensors.push(GzdfTensor {
            name: name.to_string(),
            dims: dims.clone(),
            data: to_f32(&params.values[i]),
        });
        tensors.push(GzdfTensor {
            name: format!("{MOMENT_M}{name}"),
            dims: dims.clone(),
            data: to_f32(&params.adam_m[i]),
        });
        tensors.push(GzdfTensor {
            name: format!("{MOMENT_V}{name}"),
            dims,
            data: to_f32(&params.adam_v[i]),
        });
    }
    tensors.sort_by(|a, b| a.name.cmp(&b.name));
    GzdfFile {
        tensors,
        step: params.step,
    }
}

pub fn save_checkpoint(path: &Path, model: &Denoiser) -> Result<()> {
    write_gzdf(path, &checkpoint_file(&model.params))
}

/// Rebuild a denoiser from a GZDF image, rejecting missing, unknown or
/// misshapen tensors. Absent Adam moments load as zeros.
pub fn denoiser_from_file(file: &GzdfFile, config: DenoiserConfig) -> Result<Denoiser> {
    let mut model = Denoiser::new(config, 0)?;
    let p = &mut model.params;
    let mut seen = vec![false; p.len()];
    for t in &file.tensors {
        let (base, slot) = if let Some(b) = t.name.strip_prefix(MOMENT_M) {
            (b, 1)
        } else if let Some(b) = t.name.strip_prefix(MOMENT_V) {
            (b, 2)
        } else {
            (t.name.as_str(), 0)
        };
        let i = p
            .index_of(base)
            .ok_or_else(|| Error::invalid(format!("checkpoint tensor {} does not belong to this configuration", t.name)))?;
        if t.dims != p.shape(i) {
            return Err(Error::shape(format!("checkpoint tensor {}", t.name), format!("{:?}", p.shape(i)), format!("{:?}", t.dims)));
        }
        let values: Vec<f64> = t.data.iter().map(|&v| v as f64).collect();
        match slot {
            0 => {
                p.values[i] = values;
                seen[i] = true;
            }
            1 => p.adam_m[i] = values,
            _ => p.adam_v[i] = values,
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::invalid(format!("checkpoint lacks tensor {}", p.name(i))));
    }
    p.step = file.step;
    Ok(model)
}

pub fn load_checkpoint(path: &Path, config: DenoiserConfig) -> Result<Denoiser> {
    denoiser_from_file(&read_gzdf(path)?, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> GzdfFile {
        GzdfFile {
            tensors: vec![
                GzdfTensor {
                    name: "b".into(),
                    dims: vec![2, 3],
                    data: (0..6).map(|i| i as f32 * 0.5 - 1.0).collect(),
                },
                GzdfTensor {
                    name: "a".into(),
                    dims: vec![1],
                    data: vec![f32::MIN_POSITIVE],
                },
            ],
            step: 77,
        }
    }

    #[test]
    fn round_trip_sorts_by_name() {
        let bytes = sample().encode().unwrap();
        assert_eq!(&bytes[..4], b"GZDF");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        // First tensor record: name length 1, name "a".
        assert_eq!(&bytes[12..15], &[1, 0, b'a']);
        let back = GzdfFile::decode(&bytes).unwrap();
        assert_eq!(back.tensors[0].name, "a");
        assert_eq!(back.tensors[1], sample().tensors[0]);
        assert_eq!(back.step, 77);
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = sample().encode().unwrap();
        for cut in [3usize, 10, 20, bytes.len() - 9, bytes.len() - 1] {
            match GzdfFile::decode(&bytes[..cut]) {
                Err(Error::Format { offset, .. }) => assert!(offset as usize <= cut),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(GzdfFile::decode(&extra), Err(Error::Format { offset, .. }) if offset as usize == bytes.len()));
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(GzdfFile::decode(&bad).is_err());
    }

    #[test]
    fn denoiser_round_trip_is_exact() {
        let cfg = DenoiserConfig::tiny(16);
        let mut model = Denoiser::new(cfg.clone(), 9).unwrap();
        model.params.step = 5;
        model.params.adam_m[0][0] = super::super::to_f32_grid(0.123);
        let file = checkpoint_file(&model.params);
        let bytes = file.encode().unwrap();
        let back = denoiser_from_file(&GzdfFile::decode(&bytes).unwrap(), cfg.clone()).unwrap();
        assert_eq!(back.params, model.params);
        assert_eq!(checkpoint_file(&back.params).encode().unwrap(), bytes);

        let mut other = DenoiserConfig::tiny(16);
        other.base_width = 4;
        assert!(denoiser_from_file(&file, other).is_err());
        let mut missing = file.clone();
        missing.tensors.retain(|t| t.name != "in.w");
        assert!(denoiser_from_file(&missing, cfg).is_err());
    }
}
