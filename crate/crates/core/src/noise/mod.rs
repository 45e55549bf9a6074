//! Noise generation: per-subject noise networks, the pixel-wise ensemble
//! sampler, and the histogram / Gaussian / model+histogram baselines.

pub mod baselines;
pub mod ensemble;
pub mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::{load_noise_net, save_weights};

pub use baselines::{
    blend_model_hist, gaussian_noise, hist_noise, model_plus_hist, BlendWeights, HistSampler,
    GAUSSIAN_STD, HIST_BINS,
};
pub use ensemble::{ensemble_noise, selection_indices, NoiseEnsemble, NoiseMapSet};
pub use train::{noise_map, train_noise_model};

pub const ENSEMBLE_MANIFEST: &str = "ensemble.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMember {
    pub subject_id: String,
    pub weights: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub members: Vec<EnsembleMember>,
}

/// Write every member as `noise_{subject}.pctw` plus `ensemble.json`.
pub fn save_ensemble(dir: &Path, ens: &NoiseEnsemble) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut members = Vec::with_capacity(ens.len());
    for (net, id) in ens.models().iter().zip(ens.subject_ids()) {
        let file = format!("noise_{id}.pctw");
        save_weights(net, &dir.join(&file))?;
        members.push(EnsembleMember {
            subject_id: id.clone(),
            weights: file,
        });
    }
    let path = dir.join(ENSEMBLE_MANIFEST);
    let json = serde_json::to_string_pretty(&EnsembleManifest { members })?;
    std::fs::write(&path, json).map_err(|e| Error::io(path, e))
}

pub fn load_ensemble(dir: &Path) -> Result<NoiseEnsemble> {
    let path = dir.join(ENSEMBLE_MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: EnsembleManifest =
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut models = Vec::new();
    let mut ids = Vec::new();
    for m in manifest.members {
        models.push(load_noise_net(&dir.join(&m.weights))?);
        ids.push(m.subject_id);
    }
    NoiseEnsemble::new(models, ids)
}
