//! Point-cloud files.
//!
//! * `.xyz`: text, one `x y z` triple per line, shortest round-trip decimal.
//! * `.pcf`: little-endian binary, `b"PCF1"`, `u32` point count, then
//!   `count * 3` `f32` coordinates.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::pointcloud::PointCloud;

pub const PCF_MAGIC: &[u8; 4] = b"PCF1";

pub fn write_xyz(path: impl AsRef<Path>, pc: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in pc {
        writeln!(w, "{} {} {}", p.x, p.y, p.z).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_xyz(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut points = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut coords = [0.0f64; 3];
        let mut fields = line.split_whitespace();
        for c in coords.iter_mut() {
            let field = fields
                .next()
                .ok_or_else(|| Error::format(path, format!("line {}: expected 3 values", lineno + 1)))?;
            *c = field.parse().map_err(|_| {
                Error::format(path, format!("line {}: bad number {field:?}", lineno + 1))
            })?;
        }
        if fields.next().is_some() {
            return Err(Error::format(
                path,
                format!("line {}: more than 3 values", lineno + 1),
            ));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(path, format!("line {}: non-finite", lineno + 1)));
        }
        points.push(Vec3::from(coords));
    }
    Ok(PointCloud::new(points))
}

pub fn write_pcf(path: impl AsRef<Path>, pc: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    let count = u32::try_from(pc.len())
        .map_err(|_| Error::format(path, "too many points for the binary format"))?;
    let mut buf = Vec::with_capacity(8 + pc.len() * 12);
    buf.extend_from_slice(PCF_MAGIC);
    buf.extend_from_slice(&count.to_le_bytes());
    for p in pc {
        for v in [p.x, p.y, p.z] {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_pcf(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 || &bytes[..4] != PCF_MAGIC {
        return Err(Error::format(path, "missing PCF1 header"));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() != count * 12 {
        return Err(Error::format(
            path,
            format!("expected {} payload bytes, found {}", count * 12, body.len()),
        ));
    }
    let coords: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(PointCloud::from_flat(&coords))
}

/// Reads either format, chosen by extension (`.pcf` binary, otherwise text).
pub fn read_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("pcf") => read_pcf(path),
        _ => read_xyz(path),
    }
}

pub fn write_cloud(path: impl AsRef<Path>, pc: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("pcf") => write_pcf(path, pc),
        _ => write_xyz(path, pc),
    }
}
