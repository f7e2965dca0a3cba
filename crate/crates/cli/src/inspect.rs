//! `inspect`: format detection, a short summary and invariant checks.

use std::collections::BTreeMap;
use std::path::Path;

use gazegen::conditioning::{decode_salb, read_salb_header, SALB_MAGIC};
use gazegen::denoiser::{GzdfFile, GZDF_MAGIC};
use gazegen::Error;

use crate::Failure;

const CSV_HEADER: &str = "t,x,y,observer";

pub fn run(path: &Path) -> Result<u8, Failure> {
    let bytes = std::fs::read(path).map_err(|e| crate::io_err(path, e))?;
    let violations = if bytes.starts_with(SALB_MAGIC) {
        salb(&bytes)?
    } else if bytes.starts_with(GZDF_MAGIC) {
        gzdf(&bytes)?
    } else if bytes.starts_with(CSV_HEADER.as_bytes()) {
        trajectory_csv(&bytes)
    } else {
        let magic: Vec<String> = bytes.iter().take(4).map(|b| format!("{b:02x}")).collect();
        return Err(Failure::Data(Error::Format {
            format: "artifact",
            offset: 0,
            message: format!("unknown format magic {}", magic.join(" ")),
        }));
    };
    if violations.is_empty() {
        println!("invariants: ok");
        Ok(0)
    } else {
        println!("invariants: {} violation(s)", violations.len());
        for v in &violations {
            println!("  - {v}");
        }
        Ok(2)
    }
}

fn salb(bytes: &[u8]) -> Result<Vec<String>, Failure> {
    let h = read_salb_header(bytes)?;
    println!("format: SALB v{}", h.version);
    println!("frames: {}  height: {}  width: {}", h.frame_count, h.height, h.width);
    // The rate is not stored; it only matters for timing, not for the checks.
    let clip = decode_salb(bytes, 1.0, "inspect")?;
    let (lo, hi) = clip
        .data
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    println!("values: min {lo} max {hi}");
    Ok(Vec::new())
}

fn gzdf(bytes: &[u8]) -> Result<Vec<String>, Failure> {
    let file = GzdfFile::decode(bytes)?;
    println!("format: GZDF  tensors: {}  step: {}", file.tensors.len(), file.step);
    let mut violations = Vec::new();
    let mut scalars = 0usize;
    for t in &file.tensors {
        scalars += t.data.len();
        let bad = t.data.iter().filter(|v| !v.is_finite()).count();
        let (lo, hi) = t
            .data
            .iter()
            .filter(|v| v.is_finite())
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        println!("  {:<32} {:?}  [{lo}, {hi}]", t.name, t.dims);
        if bad > 0 {
            violations.push(format!("tensor {} holds {bad} non-finite values", t.name));
        }
        if t.name.starts_with("adam.v.") && t.data.iter().any(|&v| v < 0.0) {
            violations.push(format!("tensor {} has negative second moments", t.name));
        }
    }
    println!("scalars: {scalars}");
    Ok(violations)
}

fn trajectory_csv(bytes: &[u8]) -> Vec<String> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let mut violations = Vec::new();
    let mut last_t: BTreeMap<String, f64> = BTreeMap::new();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut ranges = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
    for rec in reader.records() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                violations.push(format!("unreadable row: {e}"));
                continue;
            }
        };
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 4 {
            violations.push(format!("line {line}: expected 4 fields, got {}", rec.len()));
            continue;
        }
        let vals: Vec<Option<f64>> = (0..3).map(|i| rec[i].parse::<f64>().ok().filter(|v| v.is_finite())).collect();
        let (Some(t), Some(x), Some(y)) = (vals[0], vals[1], vals[2]) else {
            violations.push(format!("line {line}: non-numeric or non-finite value"));
            continue;
        };
        let obs = rec[3].to_string();
        if let Some(&prev) = last_t.get(&obs) {
            if t <= prev {
                violations.push(format!("line {line}: observer {obs}: t = {t} does not increase (previous {prev})"));
            }
        }
        if t < 0.0 {
            violations.push(format!("line {line}: negative timestamp {t}"));
        }
        if x < 0.0 || y < 0.0 {
            violations.push(format!("line {line}: negative coordinate ({x}, {y})"));
        }
        last_t.insert(obs.clone(), t);
        *counts.entry(obs).or_default() += 1;
        ranges = [ranges[0].min(x), ranges[1].max(x), ranges[2].min(y), ranges[3].max(y)];
    }
    println!("format: trajectory CSV  observers: {}", counts.len());
    for (o, n) in &counts {
        println!("  {o}: {n} samples");
    }
    if counts.is_empty() {
        violations.push("file holds no samples".into());
    } else {
        println!("x: [{}, {}]  y: [{}, {}] px", ranges[0], ranges[1], ranges[2], ranges[3]);
    }
    violations
}
