use rand::Rng as _;

use crate::error::{shape_err, Error, Result};
use crate::networks::{Network, NoiseNet};
use crate::rng::rng;
use crate::tensor::Tensor;

/// Frozen per-subject noise models. Immutable once built.
#[derive(Clone, Debug)]
pub struct NoiseEnsemble {
    models: Vec<NoiseNet>,
    subject_ids: Vec<String>,
}

/// One predicted noise map per ensemble member, all the shape of the input.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseMapSet {
    pub maps: Vec<Tensor>,
}

impl NoiseEnsemble {
    pub fn new(models: Vec<NoiseNet>, subject_ids: Vec<String>) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::Config(
                "noise ensemble needs at least one model".into(),
            ));
        }
        if subject_ids.len() != models.len() {
            return Err(Error::Config(format!(
                "{} subject ids for {} noise models",
                subject_ids.len(),
                models.len()
            )));
        }
        Ok(Self {
            models,
            subject_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn models(&self) -> &[NoiseNet] {
        &self.models
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    pub fn predict_noise_set(&self, x: &Tensor) -> Result<NoiseMapSet> {
        let maps = self
            .models
            .iter()
            .map(|m| m.forward(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(NoiseMapSet { maps })
    }
}

impl NoiseMapSet {
    pub fn shape(&self) -> Option<[usize; 4]> {
        self.maps.first().map(Tensor::shape)
    }

    /// Crop every map at the same window.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<NoiseMapSet> {
        Ok(NoiseMapSet {
            maps: self
                .maps
                .iter()
                .map(|m| m.crop(y0, x0, h, w))
                .collect::<Result<_>>()?,
        })
    }
}

/// Per-pixel index of the member each output pixel is drawn from, uniform on
/// `0..m` and independent across pixels.
pub fn selection_indices(len: usize, m: usize, seed: u64) -> Vec<usize> {
    let mut r = rng(seed);
    (0..len).map(|_| r.random_range(0..m)).collect()
}

/// Pixel-wise random selection among the member maps.
pub fn ensemble_noise(set: &NoiseMapSet, seed: u64) -> Result<Tensor> {
    let Some(shape) = set.shape() else {
        return Err(Error::Config(
            "cannot ensemble an empty noise map set".into(),
        ));
    };
    for m in &set.maps {
        if m.shape() != shape {
            shape_err!("noise maps differ in shape: {:?} vs {:?}", m.shape(), shape);
        }
    }
    if set.maps.len() == 1 {
        return Ok(set.maps[0].clone());
    }
    let len = set.maps[0].len();
    let idx = selection_indices(len, set.maps.len(), seed);
    let data = idx
        .iter()
        .enumerate()
        .map(|(p, &j)| set.maps[j].data()[p])
        .collect();
    Tensor::from_vec(shape, data)
}
