//! Binary PPM (`P6`, maxval 255).

use std::path::Path;

use super::write_bytes;
use crate::calib::Image;
use crate::error::{Error, Result};
use crate::geometry::Vec3;

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
    line: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                if b == b'\n' {
                    self.line += 1;
                }
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Option<&str> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#') {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).ok().filter(|t| !t.is_empty())
    }

    fn number(&mut self, path: &Path, what: &str) -> Result<usize> {
        let line = self.line;
        self.token()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::parse(path, line, format!("bad PPM {what}")))
    }
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut h = Header {
        bytes: &bytes,
        pos: 0,
        line: 1,
    };
    if h.token() != Some("P6") {
        return Err(Error::parse(path, 1, "not a binary PPM (expected P6)"));
    }
    let width = h.number(path, "width")?;
    let height = h.number(path, "height")?;
    let maxval = h.number(path, "maxval")?;
    if maxval != 255 {
        return Err(Error::parse(path, h.line, format!("maxval {maxval} is not supported")));
    }
    if width == 0 || height == 0 {
        return Err(Error::parse(path, h.line, "zero image dimension"));
    }
    // exactly one whitespace byte separates the header from the raster
    if !h.bytes.get(h.pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(Error::parse(path, h.line, "missing separator after maxval"));
    }
    let body = &bytes[h.pos + 1..];
    let n = width * height * 3;
    if body.len() != n {
        return Err(Error::format(path, format!("expected {n} raster bytes, found {}", body.len())));
    }
    let data = body
        .chunks_exact(3)
        .map(|c| Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64) / 255.0)
        .collect();
    Image::new(width, height, data)
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes `round(255 v)` per channel after clamping to `[0, 1]`.
pub fn write_ppm(path: &Path, image: &Image) -> Result<()> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    for c in &image.data {
        out.extend_from_slice(&[quantize(c.x), quantize(c.y), quantize(c.z)]);
    }
    write_bytes(path, &out)
}

/// Gray image of `values` mapped linearly from `[lo, hi]` to `[0, 1]`;
/// missing values are black.
pub fn scalar_image(values: &[Option<f64>], width: usize, height: usize, lo: f64, hi: f64) -> Result<Image> {
    let span = if hi > lo { hi - lo } else { 1.0 };
    let data = values
        .iter()
        .map(|v| match v {
            Some(x) => Vec3::repeat(((x - lo) / span).clamp(0.0, 1.0)),
            None => Vec3::zeros(),
        })
        .collect();
    Image::new(width, height, data)
}
