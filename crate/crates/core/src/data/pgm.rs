//! 16-bit binary PGM (P5) export for visual inspection.

use std::path::Path;

use crate::error::{Error, Result};

/// Encode `[0, 1]` intensities as a P5 image with maxval 65535 (big-endian
/// samples, as the format requires).
pub fn encode_pgm16(height: usize, width: usize, pixels: &[f32]) -> Result<Vec<u8>> {
    if pixels.len() != height * width {
        return Err(Error::Shape(format!(
            "{} pixels for a {height}x{width} image",
            pixels.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for &p in pixels {
        let v = (p.clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.extend_from_slice(&v.to_be_bytes());
    }
    Ok(out)
}

pub fn write_pgm16(path: &Path, height: usize, width: usize, pixels: &[f32]) -> Result<()> {
    let bytes = encode_pgm16(height, width, pixels)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
