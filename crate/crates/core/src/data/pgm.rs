//! 8-bit binary PGM (P5) rendering of matrices.

use std::path::Path;

use crate::matrix::Matrix;
use crate::{Error, Result};

/// Renders frames left to right and bands bottom to top, min-max scaled to
/// 0..=255. A constant matrix renders black.
pub fn encode_pgm(m: &Matrix) -> Vec<u8> {
    let (frames, bands) = m.shape();
    let (lo, hi) = m.min_max();
    let span = hi - lo;
    let mut out = format!("P5\n{frames} {bands}\n255\n").into_bytes();
    for b in (0..bands).rev() {
        for t in 0..frames {
            let v = if span > 0.0 { (m.get(t, b) - lo) / span } else { 0.0 };
            out.push((v * 255.0).round() as u8);
        }
    }
    out
}

pub fn write_pgm(path: &Path, m: &Matrix) -> Result<()> {
    super::write_atomic(path, &encode_pgm(m))
}

/// Width, height and pixels of a P5 image with maxval 255.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |detail: &str| Error::Format {
        context: "pgm".into(),
        field: "header",
        detail: detail.into(),
    };
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad("expected P5 with maxval 255"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("height"))?;
    let pixels = bytes.get(pos + 1..).ok_or_else(|| bad("missing pixels"))?.to_vec();
    if pixels.len() != w * h {
        return Err(bad("pixel count does not match dimensions"));
    }
    Ok((w, h, pixels))
}
