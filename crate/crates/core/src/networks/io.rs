//! Weight files plus a JSON sidecar describing the architecture.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DenoiserConfig, DenoiserNet, Network, NoiseNet, NoiseNetConfig};
use crate::error::{Error, Result};
use crate::nn::weights;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NetworkSidecar {
    Denoiser {
        depth: usize,
        channels: usize,
        seed: Option<u64>,
    },
    NoiseNet {
        levels: usize,
        channels: usize,
        seed: u64,
    },
}

impl From<&DenoiserNet> for NetworkSidecar {
    fn from(net: &DenoiserNet) -> Self {
        let c = net.config();
        NetworkSidecar::Denoiser {
            depth: c.depth,
            channels: c.channels,
            seed: net.seed(),
        }
    }
}

impl From<&NoiseNet> for NetworkSidecar {
    fn from(net: &NoiseNet) -> Self {
        let c = net.config();
        NetworkSidecar::NoiseNet {
            levels: c.levels,
            channels: c.channels,
            seed: net.seed(),
        }
    }
}

pub fn sidecar_path(weights_path: &Path) -> PathBuf {
    weights_path.with_extension("json")
}

/// Write `path` (weights) and its `.json` sidecar.
pub fn save_weights<N>(net: &N, path: &Path) -> Result<()>
where
    N: Network,
    for<'a> &'a N: Into<NetworkSidecar>,
{
    weights::write_file(path, &net.to_entries())?;
    let sidecar: NetworkSidecar = net.into();
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(&sidecar)?;
    std::fs::write(&side, json).map_err(|e| Error::io(side, e))
}

fn read_sidecar(path: &Path) -> Result<NetworkSidecar> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn load_denoiser(path: &Path) -> Result<DenoiserNet> {
    let entries = weights::read_file(path)?;
    let NetworkSidecar::Denoiser {
        depth,
        channels,
        seed,
    } = read_sidecar(path)?
    else {
        return Err(Error::Format(format!(
            "{} describes a noise net, not a denoiser",
            sidecar_path(path).display()
        )));
    };
    let config = DenoiserConfig { depth, channels };
    let mut net = match seed {
        Some(s) => DenoiserNet::new(config, s)?,
        None => DenoiserNet::zeros(config)?,
    };
    net.load_entries(&entries)?;
    Ok(net)
}

pub fn load_noise_net(path: &Path) -> Result<NoiseNet> {
    let entries = weights::read_file(path)?;
    let NetworkSidecar::NoiseNet {
        levels,
        channels,
        seed,
    } = read_sidecar(path)?
    else {
        return Err(Error::Format(format!(
            "{} describes a denoiser, not a noise net",
            sidecar_path(path).display()
        )));
    };
    let mut net = NoiseNet::new(NoiseNetConfig { levels, channels }, seed)?;
    net.load_entries(&entries)?;
    Ok(net)
}
