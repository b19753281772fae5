//! Binary checkpoint: `SPL2`, version `u32`, count `u64`, then fourteen
//! little-endian `f32` raw parameters per splat.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{param, Splat2D, SplatField};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SPL2";
pub const VERSION: u32 = 1;

const HEADER_LEN: usize = 16;
const SPLAT_LEN: usize = param::COUNT * 4;

pub fn write_field_to(field: &SplatField, out: &mut impl Write) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(HEADER_LEN + field.len() * SPLAT_LEN);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(field.len() as u64).to_le_bytes());
    for s in &field.splats {
        for v in s.to_raw() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out.write_all(&buf)
}

/// Parses a checkpoint. `origin` only labels errors.
pub fn read_field_from(input: &mut impl Read, origin: &Path) -> Result<SplatField> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(|e| Error::io(origin, e))?;
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::format(origin, "missing SPL2 header"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(origin, format!("unsupported version {version}")));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = &bytes[HEADER_LEN..];
    if count.checked_mul(SPLAT_LEN) != Some(body.len()) {
        return Err(Error::format(
            origin,
            format!("header declares {count} splats but body has {} bytes", body.len()),
        ));
    }
    let splats = body
        .chunks_exact(SPLAT_LEN)
        .map(|chunk| {
            let raw: [f64; param::COUNT] =
                std::array::from_fn(|i| f32::from_le_bytes(chunk[4 * i..4 * i + 4].try_into().unwrap()) as f64);
            Splat2D::from_raw(&raw)
        })
        .collect();
    Ok(SplatField::new(splats))
}

pub fn write_field(field: &SplatField, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_field_to(field, &mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_field(path: &Path) -> Result<SplatField> {
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_field_from(&mut f, path)
}
