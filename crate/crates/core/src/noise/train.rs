//! Per-subject noise-model training on (LDCT, LDCT - NDCT) pairs.

use crate::data::patches::{crop_images, random_origins};
use crate::data::{augment, CtSlice, PatchBatch};
use crate::error::{Error, Result};
use crate::networks::{NoiseNet, NoiseNetConfig};
use crate::tensor::Tensor;
use crate::train::{fit, Batch, TrainConfig, TrainHistory};

/// Noise map of a pair: low-dose minus normal-dose.
pub fn noise_map(x: &CtSlice, y: &CtSlice) -> Result<Tensor> {
    x.to_tensor().sub(&y.to_tensor())
}

/// Train one noise network on pairs `(X, Y)` from a single subject, with L1
/// on `Z = X - Y`. The loss kind in `cfg` is ignored.
pub fn train_noise_model(
    pairs: &[(CtSlice, CtSlice)],
    net_cfg: NoiseNetConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(NoiseNet, TrainHistory)> {
    let Some((first, _)) = pairs.first() else {
        return Err(Error::Data(
            "noise model training needs at least one pair".into(),
        ));
    };
    if let Some((x, _)) = pairs
        .iter()
        .find(|(x, y)| x.subject_id != first.subject_id || y.subject_id != first.subject_id)
    {
        return Err(Error::Data(format!(
            "noise model pairs mix subjects '{}' and '{}'",
            first.subject_id, x.subject_id
        )));
    }
    if cfg.patch % net_cfg.divisor() != 0 {
        return Err(Error::Config(format!(
            "patch size {} must be divisible by {} for the noise network",
            cfg.patch,
            net_cfg.divisor()
        )));
    }
    let xs: Vec<Tensor> = pairs.iter().map(|(x, _)| x.to_tensor()).collect();
    let zs = pairs
        .iter()
        .map(|(x, y)| noise_map(x, y))
        .collect::<Result<Vec<_>>>()?;
    let dims: Vec<(usize, usize)> = pairs.iter().map(|(x, _)| (x.height, x.width)).collect();
    let x_refs: Vec<&Tensor> = xs.iter().collect();
    let z_refs: Vec<&Tensor> = zs.iter().collect();

    let mut net = NoiseNet::new(net_cfg, seed)?;
    let mut cfg = cfg.clone();
    cfg.loss = crate::nn::LossKind::L1;
    let history = fit(&mut net, &cfg, seed, |s| {
        let origins = random_origins(&dims, cfg.batch_size, cfg.patch, s)?;
        let batch = PatchBatch {
            x: crop_images(&x_refs, &origins, cfg.patch)?,
            y: crop_images(&z_refs, &origins, cfg.patch)?,
            origins,
        };
        let batch = augment(&batch, &cfg.augment, s)?;
        Ok(Batch {
            input: batch.x,
            target: batch.y,
            mask: None,
        })
    })?;
    Ok((net, history))
}
