//! Reference noise generators: empirical histogram, white Gaussian, and a
//! single noise model blended with histogram noise.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::ensemble::NoiseEnsemble;
use crate::error::{Error, Result};
use crate::networks::Network;
use crate::rng::rng;
use crate::tensor::Tensor;

pub const HIST_BINS: usize = 256;
pub const GAUSSIAN_STD: f32 = 0.02;

/// Empirical distribution of pooled difference-map values: a 256-bin
/// histogram over the observed range, sampled with uniform jitter inside
/// the chosen bin.
#[derive(Clone, Debug, PartialEq)]
pub struct HistSampler {
    lo: f32,
    width: f32,
    cumulative: Vec<u64>,
}

impl HistSampler {
    pub fn fit(diff_maps: &[Tensor]) -> Result<Self> {
        let values = || diff_maps.iter().flat_map(|t| t.data().iter().copied());
        if values().next().is_none() {
            return Err(Error::Data(
                "histogram noise needs at least one non-empty difference map".into(),
            ));
        }
        if values().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(
                "difference map contains a non-finite value".into(),
            ));
        }
        let lo = values().fold(f32::INFINITY, f32::min);
        let hi = values().fold(f32::NEG_INFINITY, f32::max);
        let width = (hi - lo) / HIST_BINS as f32;
        let mut counts = vec![0u64; HIST_BINS];
        for v in values() {
            counts[Self::bin_of(lo, width, v)] += 1;
        }
        let mut acc = 0;
        let cumulative = counts
            .into_iter()
            .map(|c| {
                acc += c;
                acc
            })
            .collect();
        Ok(Self {
            lo,
            width,
            cumulative,
        })
    }

    fn bin_of(lo: f32, width: f32, v: f32) -> usize {
        if width <= 0.0 {
            return 0;
        }
        (((v - lo) / width) as usize).min(HIST_BINS - 1)
    }

    pub fn bin_range(&self, bin: usize) -> (f32, f32) {
        let a = self.lo + self.width * bin as f32;
        (a, a + self.width)
    }

    pub fn sample(&self, shape: [usize; 4], seed: u64) -> Tensor {
        let total = *self.cumulative.last().expect("non-empty histogram");
        let mut r = rng(seed);
        let len: usize = shape.iter().product();
        let data = (0..len)
            .map(|_| {
                let u = r.random_range(0..total);
                let bin = self.cumulative.partition_point(|&c| c <= u);
                let (a, _) = self.bin_range(bin);
                a + self.width * r.random::<f32>()
            })
            .collect();
        Tensor::from_vec(shape, data).expect("length matches shape")
    }
}

pub fn hist_noise(diff_maps: &[Tensor], shape: [usize; 4], seed: u64) -> Result<Tensor> {
    Ok(HistSampler::fit(diff_maps)?.sample(shape, seed))
}

/// i.i.d. zero-mean Gaussian noise with standard deviation `std`.
pub fn gaussian_noise(shape: [usize; 4], std: f32, seed: u64) -> Tensor {
    let normal = Normal::new(0.0f32, std).expect("finite std");
    let mut r = rng(seed);
    let len: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| normal.sample(&mut r)).collect())
        .expect("length matches shape")
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BlendWeights {
    pub model: f32,
    pub hist: f32,
}

impl Default for BlendWeights {
    fn default() -> Self {
        Self {
            model: 0.5,
            hist: 0.5,
        }
    }
}

/// Blend a precomputed model noise map with a fresh histogram sample.
pub fn blend_model_hist(
    model_noise: &Tensor,
    sampler: &HistSampler,
    weights: BlendWeights,
    seed: u64,
) -> Result<Tensor> {
    let hist = sampler.sample(model_noise.shape(), seed);
    model_noise.zip_map(&hist, |m, h| weights.model * m + weights.hist * h)
}

/// Single-model prediction blended with histogram noise drawn from
/// `diff_maps`.
pub fn model_plus_hist(
    ens_single: &NoiseEnsemble,
    diff_maps: &[Tensor],
    x: &Tensor,
    weights: BlendWeights,
    mix_seed: u64,
) -> Result<Tensor> {
    if ens_single.len() != 1 {
        return Err(Error::Config(format!(
            "Model+Hist needs exactly one noise model, got {}",
            ens_single.len()
        )));
    }
    let z = ens_single.models()[0].forward(x)?;
    blend_model_hist(&z, &HistSampler::fit(diff_maps)?, weights, mix_seed)
}
