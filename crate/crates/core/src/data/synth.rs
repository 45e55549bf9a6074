//! Synthetic normal-dose phantoms and a low-dose noise simulator.
//!
//! The simulated low-dose noise is deliberately not pixel-independent: it is
//! signal-dependent white noise passed through a 5x5 smoothing kernel, plus a
//! faint streak pattern whose orientation is fixed per subject.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::slice::{CtSlice, Dose, SliceSource};
use crate::error::{Error, Result};
use crate::rng::{derive, rng};

/// Soft-tissue background level of the phantoms.
pub const BACKGROUND: f32 = 0.45;
const MIN_INTENSITY: f32 = 0.15;
const MAX_INTENSITY: f32 = 0.8;

pub fn synth_phantom(seed: u64, size: usize, subject_id: &str) -> Result<CtSlice> {
    if size < 32 || size % 4 != 0 {
        return Err(Error::Config(format!(
            "phantom size must be >= 32 and divisible by 4, got {size}"
        )));
    }
    let mut r = rng(seed);
    let n_ellipses = r.random_range(5..=12);
    let s = size as f32;
    let mut img = vec![BACKGROUND; size * size];
    for _ in 0..n_ellipses {
        let cy = r.random_range(0.15..0.85) * s;
        let cx = r.random_range(0.15..0.85) * s;
        let ay = r.random_range(s / 16.0..s / 4.0);
        let ax = r.random_range(s / 16.0..s / 4.0);
        let theta: f32 = r.random_range(0.0..std::f32::consts::PI);
        let delta: f32 = r.random_range(-0.28..0.33);
        let (sin, cos) = theta.sin_cos();
        for y in 0..size {
            for x in 0..size {
                let dy = y as f32 + 0.5 - cy;
                let dx = x as f32 + 0.5 - cx;
                let u = (dx * cos + dy * sin) / ax;
                let v = (-dx * sin + dy * cos) / ay;
                if u * u + v * v <= 1.0 {
                    img[y * size + x] += delta;
                }
            }
        }
    }
    for p in &mut img {
        *p = p.clamp(MIN_INTENSITY, MAX_INTENSITY);
    }
    CtSlice::new(
        size,
        size,
        img,
        subject_id,
        Dose::Normal,
        SliceSource::Synthetic,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LdctNoiseModel {
    /// Base noise scale.
    pub sigma0: f32,
    /// Width of the Gaussian smoothing kernel, in pixels.
    pub kernel_sigma: f32,
    /// Streak amplitude relative to `sigma0`.
    pub streak_strength: f32,
}

impl Default for LdctNoiseModel {
    fn default() -> Self {
        Self {
            sigma0: 0.06,
            kernel_sigma: 0.55,
            streak_strength: 0.35,
        }
    }
}

/// Orientation (radians in `[0, pi)`) of the streak normal for a subject.
pub fn streak_angle(subject_seed: u64) -> f32 {
    let mut r = rng(derive(subject_seed, "streak", 0));
    r.random_range(0.0..std::f32::consts::PI)
}

/// Smoothing kernel: 5x5 Gaussian scaled to unit L2 norm so the filtered
/// field keeps the variance of the white input.
pub fn smoothing_kernel(sigma: f32) -> [f32; 25] {
    let mut k = [0.0f32; 25];
    for y in 0..5 {
        for x in 0..5 {
            let (dy, dx) = (y as f32 - 2.0, x as f32 - 2.0);
            k[y * 5 + x] = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
        }
    }
    let norm = k.iter().map(|v| v * v).sum::<f32>().sqrt();
    k.iter_mut().for_each(|v| *v /= norm);
    k
}

/// Low-dose realisation of `ndct`. `noise_seed` selects the realisation;
/// `subject_seed` fixes the per-subject streak orientation.
pub fn synth_ldct(
    ndct: &CtSlice,
    dose_factor: f32,
    subject_seed: u64,
    noise_seed: u64,
    model: LdctNoiseModel,
) -> Result<CtSlice> {
    if !(dose_factor > 0.0 && dose_factor <= 1.0) {
        return Err(Error::Config(format!(
            "dose factor must be in (0, 1], got {dose_factor}"
        )));
    }
    if !(model.kernel_sigma > 0.0) {
        return Err(Error::Config(format!(
            "noise kernel sigma must be positive, got {}",
            model.kernel_sigma
        )));
    }
    if dose_factor == 1.0 {
        return ndct.with_pixels(ndct.pixels.clone(), Dose::Low);
    }
    let noise = ldct_noise(ndct, dose_factor, subject_seed, noise_seed, model);
    let pixels = ndct
        .pixels
        .iter()
        .zip(&noise)
        .map(|(p, n)| (p + n).clamp(0.0, 1.0))
        .collect();
    ndct.with_pixels(pixels, Dose::Low)
}

/// The additive noise field used by [`synth_ldct`], before clamping.
pub fn ldct_noise(
    ndct: &CtSlice,
    dose_factor: f32,
    subject_seed: u64,
    noise_seed: u64,
    model: LdctNoiseModel,
) -> Vec<f32> {
    let (h, w) = (ndct.height, ndct.width);
    let mut r = rng(noise_seed);
    let (ph, pw) = (h + 4, w + 4);
    let dose_term = 1.0 - dose_factor;
    let mut white = vec![0.0f32; ph * pw];
    for y in 0..ph {
        let sy = y.saturating_sub(2).min(h - 1);
        for x in 0..pw {
            let sx = x.saturating_sub(2).min(w - 1);
            let p = ndct.pixels[sy * w + sx];
            let sigma = model.sigma0 * (dose_term * (0.2 + p)).sqrt();
            let z: f32 = StandardNormal.sample(&mut r);
            white[y * pw + x] = sigma * z;
        }
    }
    let k = smoothing_kernel(model.kernel_sigma);
    let mut out = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f32;
            for ky in 0..5 {
                let row = &white[(y + ky) * pw + x..(y + ky) * pw + x + 5];
                for kx in 0..5 {
                    acc += k[ky * 5 + kx] * row[kx];
                }
            }
            out[y * w + x] = acc;
        }
    }

    // Streaks: a random profile along the streak normal, constant along the
    // streak direction, linearly interpolated between integer offsets.
    let amp = model.streak_strength * model.sigma0 * dose_term.sqrt();
    if amp > 0.0 {
        let (sin, cos) = streak_angle(subject_seed).sin_cos();
        let reach = (h + w) as f32;
        let n_lines = 2 * (h + w) + 2;
        let profile: Vec<f32> = (0..n_lines)
            .map(|_| StandardNormal.sample(&mut r))
            .collect();
        for y in 0..h {
            for x in 0..w {
                let t = x as f32 * cos + y as f32 * sin + reach;
                let i = t.floor();
                let f = t - i;
                let i = i as usize;
                let v = profile[i] * (1.0 - f) + profile[i + 1] * f;
                out[y * w + x] += amp * v;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phantom_deterministic_and_in_range() {
        let a = synth_phantom(5, 64, "s").unwrap();
        assert_eq!(a, synth_phantom(5, 64, "s").unwrap());
        assert!(a.pixels.iter().all(|&p| (0.0..=1.0).contains(&p)));
        assert!(synth_phantom(5, 30, "s").is_err());
        assert!(synth_phantom(5, 34, "s").is_err());
    }

    #[test]
    fn full_dose_is_noiseless() {
        let nd = synth_phantom(1, 32, "s").unwrap();
        let ld = synth_ldct(&nd, 1.0, 2, 3, LdctNoiseModel::default()).unwrap();
        assert_eq!(ld.pixels, nd.pixels);
        assert_eq!(ld.dose, Dose::Low);
    }

    #[test]
    fn dose_out_of_range_rejected() {
        let nd = synth_phantom(1, 32, "s").unwrap();
        for d in [0.0, -0.5, 1.5, f32::NAN] {
            assert!(synth_ldct(&nd, d, 2, 3, LdctNoiseModel::default()).is_err());
        }
    }

    #[test]
    fn kernel_has_unit_energy() {
        let e: f32 = smoothing_kernel(0.7).iter().map(|v| v * v).sum();
        assert!((e - 1.0).abs() < 1e-5);
    }
}
