//! PTC1 point-cloud container.
//!
//! A file is a sequence of records. Each record is a 16-byte header followed
//! by little-endian arrays for the fields present:
//!
//! | bytes | content |
//! |-------|---------|
//! | 0..4  | magic `PTC1` |
//! | 4..6  | version, u16 (= 1) |
//! | 6..8  | field mask, u16: bit0 color, bit1 normal, bit2 label |
//! | 8..16 | point count N, u64 |
//!
//! then `coord` (f32 x 3N), `color` (f32 x 3N), `normal` (f32 x 3N) and
//! `label` (i32 x N), each only when flagged.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::pointcore::{PointCloud, Vec3};

pub const MAGIC: &[u8; 4] = b"PTC1";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 16;
pub const FIELD_COLOR: u16 = 1;
pub const FIELD_NORMAL: u16 = 1 << 1;
pub const FIELD_LABEL: u16 = 1 << 2;
const KNOWN_FIELDS: u16 = FIELD_COLOR | FIELD_NORMAL | FIELD_LABEL;

fn push_vec3(out: &mut Vec<u8>, rows: &[Vec3]) -> Result<()> {
    for r in rows {
        for &v in r {
            let f = v as f32;
            if f as f64 != v && v.is_finite() {
                log::trace!("value {v} rounded to f32 on write");
            }
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    Ok(())
}

/// Serializes one cloud as a PTC1 record.
pub fn encode_cloud(cloud: &PointCloud, out: &mut Vec<u8>) -> Result<()> {
    cloud.validate()?;
    let mut mask = 0u16;
    if cloud.color.is_some() {
        mask |= FIELD_COLOR;
    }
    if cloud.normal.is_some() {
        mask |= FIELD_NORMAL;
    }
    if cloud.label.is_some() {
        mask |= FIELD_LABEL;
    }
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&mask.to_le_bytes());
    out.extend_from_slice(&(cloud.len() as u64).to_le_bytes());
    push_vec3(out, &cloud.coord)?;
    if let Some(c) = &cloud.color {
        push_vec3(out, c)?;
    }
    if let Some(n) = &cloud.normal {
        push_vec3(out, n)?;
    }
    if let Some(labels) = &cloud.label {
        for &l in labels {
            let v =
                i32::try_from(l).map_err(|_| Error::invalid(format!("label {l} exceeds i32")))?;
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!(
                    "truncated {what}: need {n} bytes, {} left",
                    self.buf.len() - self.pos
                ),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn vec3s(&mut self, n: usize, what: &str) -> Result<Vec<Vec3>> {
        let bytes = self.take(n * 12, what)?;
        Ok(bytes
            .chunks_exact(12)
            .map(|c| {
                let f =
                    |i: usize| f32::from_le_bytes(c[i..i + 4].try_into().expect("4 bytes")) as f64;
                [f(0), f(4), f(8)]
            })
            .collect())
    }
}

fn decode_record(r: &mut Reader<'_>) -> Result<PointCloud> {
    let start = r.pos as u64;
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(start, format!("bad magic {magic:02x?}")));
    }
    let version = u16::from_le_bytes(r.take(2, "version")?.try_into().expect("2 bytes"));
    if version != VERSION {
        return Err(Error::format(
            start + 4,
            format!("unsupported version {version}"),
        ));
    }
    let mask = u16::from_le_bytes(r.take(2, "field mask")?.try_into().expect("2 bytes"));
    if mask & !KNOWN_FIELDS != 0 {
        return Err(Error::format(
            start + 6,
            format!("unknown field bits {mask:#06x}"),
        ));
    }
    let count = u64::from_le_bytes(r.take(8, "point count")?.try_into().expect("8 bytes"));
    if count == 0 {
        return Err(Error::format(start + 8, "point count is zero"));
    }
    let per_point = 12
        + if mask & FIELD_COLOR != 0 { 12 } else { 0 }
        + if mask & FIELD_NORMAL != 0 { 12 } else { 0 }
        + if mask & FIELD_LABEL != 0 { 4 } else { 0 };
    let remaining = (r.buf.len() - r.pos) as u64;
    if count
        .checked_mul(per_point)
        .is_none_or(|need| need > remaining)
    {
        return Err(Error::format(
            start + 8,
            format!("point count {count} needs more than the {remaining} bytes left"),
        ));
    }
    let n = count as usize;
    let coord = r.vec3s(n, "coord")?;
    let mut cloud = PointCloud::from_coords(coord);
    if mask & FIELD_COLOR != 0 {
        cloud.color = Some(r.vec3s(n, "color")?);
    }
    if mask & FIELD_NORMAL != 0 {
        cloud.normal = Some(r.vec3s(n, "normal")?);
    }
    if mask & FIELD_LABEL != 0 {
        let at = r.pos as u64;
        let bytes = r.take(n * 4, "label")?;
        let mut labels = Vec::with_capacity(n);
        for (i, c) in bytes.chunks_exact(4).enumerate() {
            let v = i32::from_le_bytes(c.try_into().expect("4 bytes"));
            let l = u32::try_from(v)
                .map_err(|_| Error::format(at + 4 * i as u64, format!("negative label {v}")))?;
            labels.push(l);
        }
        cloud.label = Some(labels);
    }
    cloud
        .validate()
        .map_err(|e| Error::format(start, format!("record payload invalid: {e}")))?;
    Ok(cloud)
}

/// Parses every record in a PTC1 byte buffer.
pub fn decode_clouds(buf: &[u8]) -> Result<Vec<PointCloud>> {
    if buf.is_empty() {
        return Err(Error::format(0, "empty file"));
    }
    let mut r = Reader { buf, pos: 0 };
    let mut out = Vec::new();
    while r.pos < buf.len() {
        out.push(decode_record(&mut r)?);
    }
    Ok(out)
}

pub fn encode_clouds(clouds: &[PointCloud]) -> Result<Vec<u8>> {
    if clouds.is_empty() {
        return Err(Error::invalid("cannot write an empty dataset"));
    }
    let mut out = Vec::new();
    for c in clouds {
        encode_cloud(c, &mut out)?;
    }
    Ok(out)
}

/// Writes clouds to `path` as consecutive PTC1 records.
pub fn write_dataset(clouds: &[PointCloud], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_clouds(clouds)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    f.sync_all().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<PointCloud>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_clouds(&bytes)
}
