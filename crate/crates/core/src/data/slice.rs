//! CT slices, HU windowing and raw `u16` slice files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dose {
    Low,
    Normal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SliceSource {
    RawFile,
    Synthetic,
}

/// One 2-D slice in normalised intensity units (`[0, 1]` after windowing).
#[derive(Clone, Debug, PartialEq)]
pub struct CtSlice {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
    pub subject_id: String,
    pub dose: Dose,
    pub source: SliceSource,
}

impl CtSlice {
    pub fn new(
        height: usize,
        width: usize,
        pixels: Vec<f32>,
        subject_id: impl Into<String>,
        dose: Dose,
        source: SliceSource,
    ) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::Data(format!(
                "slice has {} pixels, expected {}x{}",
                pixels.len(),
                height,
                width
            )));
        }
        if let Some(i) = pixels.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "slice pixel {i} is {}",
                pixels[i]
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
            subject_id: subject_id.into(),
            dose,
            source,
        })
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_image(self.height, self.width, self.pixels.clone())
            .expect("slice dims are consistent")
    }

    pub fn with_pixels(&self, pixels: Vec<f32>, dose: Dose) -> Result<Self> {
        Self::new(
            self.height,
            self.width,
            pixels,
            self.subject_id.clone(),
            dose,
            self.source,
        )
    }
}

/// Display window in HU, mapped linearly onto `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HuWindow {
    pub center: f32,
    pub width: f32,
}

impl Default for HuWindow {
    fn default() -> Self {
        Self {
            center: 40.0,
            width: 400.0,
        }
    }
}

impl HuWindow {
    pub fn lower(&self) -> f32 {
        self.center - self.width / 2.0
    }

    pub fn normalize(&self, hu: f32) -> f32 {
        ((hu - self.lower()) / self.width).clamp(0.0, 1.0)
    }

    pub fn denormalize(&self, v: f32) -> f32 {
        v * self.width + self.lower()
    }
}

/// Linear rescale from stored `u16` to HU.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawEncoding {
    pub slope: f32,
    pub intercept: f32,
}

impl Default for RawEncoding {
    fn default() -> Self {
        Self {
            slope: 1.0,
            intercept: -1024.0,
        }
    }
}

impl RawEncoding {
    pub fn to_hu(&self, raw: u16) -> f32 {
        f32::from(raw) * self.slope + self.intercept
    }

    pub fn from_hu(&self, hu: f32) -> u16 {
        ((hu - self.intercept) / self.slope)
            .round()
            .clamp(0.0, f32::from(u16::MAX)) as u16
    }
}

pub fn decode_raw(
    bytes: &[u8],
    width: usize,
    height: usize,
    enc: RawEncoding,
    window: HuWindow,
) -> Result<Vec<f32>> {
    let expected = 2 * width * height;
    if bytes.len() != expected {
        return Err(Error::Data(format!(
            "raw slice size mismatch: expected {expected} bytes for {width}x{height} u16, got {}",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(2)
        .map(|b| window.normalize(enc.to_hu(u16::from_le_bytes([b[0], b[1]]))))
        .collect())
}

pub fn encode_raw(pixels: &[f32], enc: RawEncoding, window: HuWindow) -> Vec<u8> {
    let mut out = Vec::with_capacity(2 * pixels.len());
    for &p in pixels {
        out.extend_from_slice(&enc.from_hu(window.denormalize(p)).to_le_bytes());
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn load_raw_slice(
    path: &Path,
    width: usize,
    height: usize,
    enc: RawEncoding,
    window: HuWindow,
    subject_id: &str,
    dose: Dose,
) -> Result<CtSlice> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let pixels = decode_raw(&bytes, width, height, enc, window)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    CtSlice::new(
        height,
        width,
        pixels,
        subject_id,
        dose,
        SliceSource::RawFile,
    )
}

pub fn write_raw_slice(
    path: &Path,
    slice: &CtSlice,
    enc: RawEncoding,
    window: HuWindow,
) -> Result<()> {
    std::fs::write(path, encode_raw(&slice.pixels, enc, window)).map_err(|e| Error::io(path, e))
}
