//! Blind-spot masking for Noise2Void training.

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive, rng};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct N2vConfig {
    pub mask_fraction: f32,
    /// Side of the square neighbourhood replacement values are drawn from.
    pub window: usize,
}

impl Default for N2vConfig {
    fn default() -> Self {
        Self {
            mask_fraction: 0.008,
            window: 5,
        }
    }
}

/// Masked positions of one `h x w` plane and, for each, the pixel whose
/// value replaces it. Sources are never themselves masked.
#[derive(Clone, Debug, PartialEq)]
pub struct N2vMask {
    pub mask: Vec<bool>,
    pub replacements: Vec<(usize, usize)>,
}

impl N2vMask {
    pub fn count(&self) -> usize {
        self.replacements.len()
    }

    /// The network input: `plane` with every masked pixel overwritten by its
    /// source pixel.
    pub fn apply(&self, plane: &[f32]) -> Vec<f32> {
        let mut out = plane.to_vec();
        for &(dst, src) in &self.replacements {
            out[dst] = plane[src];
        }
        out
    }
}

pub fn n2v_mask(h: usize, w: usize, cfg: &N2vConfig, seed: u64) -> Result<N2vMask> {
    if !(cfg.mask_fraction > 0.0 && cfg.mask_fraction < 0.5) {
        return Err(Error::Config(format!(
            "N2V mask fraction must be in (0, 0.5), got {}",
            cfg.mask_fraction
        )));
    }
    if cfg.window < 3 || cfg.window % 2 == 0 {
        return Err(Error::Config(format!(
            "N2V window must be odd and >= 3, got {}",
            cfg.window
        )));
    }
    let len = h * w;
    let count = ((len as f32 * cfg.mask_fraction).round() as usize).clamp(1, len);
    let mut r = rng(seed);
    let mut positions = sample(&mut r, len, count).into_vec();
    positions.sort_unstable();
    let mut mask = vec![false; len];
    for &p in &positions {
        mask[p] = true;
    }
    let half = (cfg.window / 2) as isize;
    let mut replacements = Vec::with_capacity(count);
    let mut candidates = Vec::new();
    for &p in &positions {
        let (py, px) = ((p / w) as isize, (p % w) as isize);
        candidates.clear();
        for dy in -half..=half {
            for dx in -half..=half {
                let (y, x) = (py + dy, px + dx);
                if (dy, dx) == (0, 0) || y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                    continue;
                }
                let q = y as usize * w + x as usize;
                if !mask[q] {
                    candidates.push(q);
                }
            }
        }
        if candidates.is_empty() {
            return Err(Error::Data(format!(
                "no unmasked neighbour for masked pixel ({py}, {px})"
            )));
        }
        replacements.push((p, candidates[r.random_range(0..candidates.len())]));
    }
    Ok(N2vMask { mask, replacements })
}

/// Mask every item of a single-channel batch independently. Returns the
/// masked input and the flattened loss mask.
pub fn mask_batch(x: &Tensor, cfg: &N2vConfig, seed: u64) -> Result<(Tensor, Vec<bool>)> {
    let [n, c, h, w] = x.shape();
    if c != 1 {
        return Err(Error::Shape(format!(
            "N2V masking expects one channel, got {c}"
        )));
    }
    let mut input = Vec::with_capacity(x.len());
    let mut mask = Vec::with_capacity(x.len());
    for i in 0..n {
        let m = n2v_mask(h, w, cfg, derive(seed, "n2v", i as u64))?;
        input.extend(m.apply(x.item(i)));
        mask.extend_from_slice(&m.mask);
    }
    Ok((Tensor::from_vec([n, c, h, w], input)?, mask))
}
