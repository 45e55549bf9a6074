//! Denoiser pre-training under the Noise2Clean, Noise2Noise and Noise2Void
//! schemes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::n2v::{mask_batch, N2vConfig};
use crate::data::patches::{crop_images, random_origins};
use crate::data::{augment, PatchBatch, Subject};
use crate::error::{Error, Result};
use crate::networks::{DenoiserConfig, DenoiserNet};
use crate::rng::derive;
use crate::tensor::Tensor;
use crate::train::{fit, Batch, TrainConfig, TrainHistory};

#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    #[default]
    N2c,
    N2n,
    N2v,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 3] = [SchemeKind::N2c, SchemeKind::N2n, SchemeKind::N2v];

    pub fn label(self) -> &'static str {
        match self {
            SchemeKind::N2c => "N2C",
            SchemeKind::N2n => "N2N",
            SchemeKind::N2v => "N2V",
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "n2c" => Ok(SchemeKind::N2c),
            "n2n" => Ok(SchemeKind::N2n),
            "n2v" => Ok(SchemeKind::N2v),
            _ => Err(Error::Config(format!(
                "unknown scheme '{s}' (expected n2c, n2n or n2v)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainScheme {
    pub kind: SchemeKind,
    #[serde(default)]
    pub n2v: N2vConfig,
}

impl PretrainScheme {
    pub fn new(kind: SchemeKind) -> Self {
        Self {
            kind,
            n2v: N2vConfig::default(),
        }
    }
}

/// Input and target images of every training slice under `scheme`.
pub fn scheme_pairs(
    scheme: SchemeKind,
    subjects: &[&Subject],
) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for s in subjects {
        for (j, pair) in s.slices.iter().enumerate() {
            let target = match scheme {
                SchemeKind::N2c => pair.ndct.as_ref(),
                SchemeKind::N2n => pair.ldct_alt.as_ref(),
                SchemeKind::N2v => Some(&pair.ldct),
            };
            let Some(target) = target else {
                let need = match scheme {
                    SchemeKind::N2c => "a normal-dose target",
                    _ => "a second low-dose realisation",
                };
                return Err(Error::Data(format!(
                    "{scheme} needs {need}, but subject '{}' slice {j} has none",
                    s.id
                )));
            };
            inputs.push(pair.ldct.to_tensor());
            targets.push(target.to_tensor());
        }
    }
    if inputs.is_empty() {
        return Err(Error::Data("no training slices for pre-training".into()));
    }
    Ok((inputs, targets))
}

pub fn pretrain(
    scheme: &PretrainScheme,
    subjects: &[&Subject],
    net_cfg: DenoiserConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(DenoiserNet, TrainHistory)> {
    let (inputs, targets) = scheme_pairs(scheme.kind, subjects)?;
    let dims: Vec<(usize, usize)> = inputs.iter().map(|t| (t.h(), t.w())).collect();
    let in_refs: Vec<&Tensor> = inputs.iter().collect();
    let tg_refs: Vec<&Tensor> = targets.iter().collect();
    let mut net = DenoiserNet::new(net_cfg, derive(seed, "denoiser-init", 0))?;
    let history = fit(&mut net, cfg, seed, |s| {
        let origins = random_origins(&dims, cfg.batch_size, cfg.patch, s)?;
        let batch = PatchBatch {
            x: crop_images(&in_refs, &origins, cfg.patch)?,
            y: crop_images(&tg_refs, &origins, cfg.patch)?,
            origins,
        };
        let batch = augment(&batch, &cfg.augment, s)?;
        Ok(match scheme.kind {
            SchemeKind::N2v => {
                let (input, mask) = mask_batch(&batch.x, &scheme.n2v, s)?;
                Batch {
                    input,
                    target: batch.x,
                    mask: Some(mask),
                }
            }
            _ => Batch {
                input: batch.x,
                target: batch.y,
                mask: None,
            },
        })
    })?;
    Ok((net, history))
}
