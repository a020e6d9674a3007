//! Binary ray-record cache.
//!
//! Layout, all little-endian: 8-byte magic, u32 version, u64 record count,
//! then per record 3 x f64 origin, 3 x f64 direction, 3 x f32 color,
//! 3 x f32 gradient, f32 depth.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::augment::RayRecord;
use crate::error::{Error, Result};
use crate::geometry::Vec3;

pub const RAY_MAGIC: [u8; 8] = *b"PNRDRAYS";
pub const RAY_VERSION: u32 = 1;
pub const RECORD_BYTES: usize = 6 * 8 + 7 * 4;
const HEADER_BYTES: usize = 8 + 4 + 8;

pub fn write_rays<W: Write>(mut w: W, records: &[RayRecord]) -> Result<()> {
    w.write_all(&RAY_MAGIC)?;
    w.write_all(&RAY_VERSION.to_le_bytes())?;
    w.write_all(&(records.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(RECORD_BYTES);
    for r in records {
        buf.clear();
        for v in r.origin.iter().chain(r.direction.iter()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in r.target_color.iter().chain(&r.target_gradient).chain([&r.target_depth]) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

fn f64_at(b: &[u8], i: usize) -> f64 {
    f64::from_le_bytes(b[i..i + 8].try_into().unwrap())
}

fn f32_at(b: &[u8], i: usize) -> f32 {
    f32::from_le_bytes(b[i..i + 4].try_into().unwrap())
}

pub fn read_rays<R: Read>(mut r: R) -> Result<Vec<RayRecord>> {
    let mut header = [0u8; HEADER_BYTES];
    r.read_exact(&mut header)
        .map_err(|_| Error::Format("ray cache is shorter than its header".into()))?;
    if header[..8] != RAY_MAGIC {
        return Err(Error::Format("not a ray cache (bad magic)".into()));
    }
    let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
    if version != RAY_VERSION {
        return Err(Error::Format(format!(
            "ray cache version {version} is not supported (expected {RAY_VERSION})"
        )));
    }
    let count = u64::from_le_bytes(header[12..20].try_into().unwrap()) as usize;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != count * RECORD_BYTES {
        return Err(Error::Format(format!(
            "ray cache declares {count} records but holds {} bytes",
            body.len()
        )));
    }
    Ok(body
        .chunks_exact(RECORD_BYTES)
        .map(|b| RayRecord {
            origin: Vec3::new(f64_at(b, 0), f64_at(b, 8), f64_at(b, 16)),
            direction: Vec3::new(f64_at(b, 24), f64_at(b, 32), f64_at(b, 40)),
            target_color: [f32_at(b, 48), f32_at(b, 52), f32_at(b, 56)],
            target_gradient: [f32_at(b, 60), f32_at(b, 64), f32_at(b, 68)],
            target_depth: f32_at(b, 72),
        })
        .collect())
}

pub fn save_rays(path: &Path, records: &[RayRecord]) -> Result<()> {
    write_rays(BufWriter::new(std::fs::File::create(path)?), records)
}

pub fn load_rays(path: &Path) -> Result<Vec<RayRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    read_rays(BufReader::new(f))
}
