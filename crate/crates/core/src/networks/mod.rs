//! The two fixed architectures: a residual encoder-decoder denoiser and an
//! encoder-decoder noise predictor with skip connections.
//!
//! Both keep parameters as an ordered list of named convolutions. Training
//! uses `forward_train`, which returns the output plus a tape of the
//! intermediates `backward` needs; plain `forward` is a pure function of the
//! frozen parameters.

mod denoiser;
mod io;
mod noisenet;

pub use denoiser::{DenoiserConfig, DenoiserNet, DenoiserTape};
pub use io::{load_denoiser, load_noise_net, save_weights, NetworkSidecar};
pub use noisenet::{NoiseNet, NoiseNetConfig, NoiseNetTape};

use crate::error::{Error, Result};
use crate::nn::weights::WeightEntry;
use crate::nn::{AdamState, Conv2d, ConvGrads, ParamBlock};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedConv {
    pub name: String,
    pub conv: Conv2d,
}

/// Parameter gradients in layer order, plus the optional input gradient.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub layers: Vec<ConvGrads>,
    pub input: Option<Tensor>,
}

impl Gradients {
    /// Flattened view in the same order as [`Network::flat_params`].
    pub fn flat(&self) -> Vec<f32> {
        let mut out = Vec::new();
        for g in &self.layers {
            out.extend_from_slice(&g.weight);
            out.extend_from_slice(&g.bias);
        }
        out
    }
}

pub trait Network: Clone + Send + Sync {
    type Tape;

    fn layers(&self) -> &[NamedConv];
    fn layers_mut(&mut self) -> &mut [NamedConv];

    fn forward(&self, x: &Tensor) -> Result<Tensor>;
    fn forward_train(&self, x: &Tensor) -> Result<(Tensor, Self::Tape)>;
    fn backward(
        &self,
        tape: &Self::Tape,
        grad_out: &Tensor,
        need_input_grad: bool,
    ) -> Result<Gradients>;

    fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.conv.param_count()).sum()
    }

    fn flat_params(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in self.layers() {
            out.extend_from_slice(l.conv.weight.data());
            out.extend_from_slice(&l.conv.bias);
        }
        out
    }

    /// Mutable access to the `i`-th scalar in [`Network::flat_params`] order.
    fn param_mut(&mut self, mut i: usize) -> &mut f32 {
        for l in self.layers_mut() {
            let wl = l.conv.weight.len();
            if i < wl {
                return &mut l.conv.weight.data_mut()[i];
            }
            i -= wl;
            if i < l.conv.bias.len() {
                return &mut l.conv.bias[i];
            }
            i -= l.conv.bias.len();
        }
        panic!("parameter index out of range");
    }

    fn apply_adam(&mut self, grads: &Gradients, adam: &mut AdamState) -> Result<()> {
        if grads.layers.len() != self.layers().len() {
            return Err(Error::Shape(format!(
                "{} gradient layers for a {}-layer network",
                grads.layers.len(),
                self.layers().len()
            )));
        }
        let mut blocks = Vec::with_capacity(2 * grads.layers.len());
        for (layer, g) in self.layers_mut().iter_mut().zip(&grads.layers) {
            let NamedConv { name, conv } = layer;
            blocks.push(ParamBlock {
                name: format!("{name}.weight"),
                value: conv.weight.data_mut(),
                grad: &g.weight,
            });
            blocks.push(ParamBlock {
                name: format!("{name}.bias"),
                value: &mut conv.bias,
                grad: &g.bias,
            });
        }
        adam.step(&mut blocks)
    }

    fn to_entries(&self) -> Vec<WeightEntry> {
        let mut out = Vec::with_capacity(2 * self.layers().len());
        for l in self.layers() {
            out.push(WeightEntry {
                name: format!("{}.weight", l.name),
                dims: l.conv.weight.shape().to_vec(),
                values: l.conv.weight.data().to_vec(),
            });
            out.push(WeightEntry {
                name: format!("{}.bias", l.name),
                dims: vec![l.conv.bias.len()],
                values: l.conv.bias.clone(),
            });
        }
        out
    }

    /// Overwrite parameters from weight entries. Names and shapes must match
    /// this network's topology exactly; on mismatch nothing is modified.
    fn load_entries(&mut self, entries: &[WeightEntry]) -> Result<()> {
        let expected = self.to_entries();
        if expected.len() != entries.len() {
            return Err(Error::Format(format!(
                "topology mismatch: file has {} entries, network expects {}",
                entries.len(),
                expected.len()
            )));
        }
        for (e, got) in expected.iter().zip(entries) {
            if e.name != got.name || e.dims != got.dims {
                return Err(Error::Format(format!(
                    "topology mismatch: expected '{}' {:?}, found '{}' {:?}",
                    e.name, e.dims, got.name, got.dims
                )));
            }
        }
        for (i, layer) in self.layers_mut().iter_mut().enumerate() {
            layer
                .conv
                .weight
                .data_mut()
                .copy_from_slice(&entries[2 * i].values);
            layer.conv.bias.copy_from_slice(&entries[2 * i + 1].values);
        }
        Ok(())
    }
}

/// Forward a conv and its ReLU, returning the pre-activation and the output.
pub(crate) fn conv_relu(conv: &Conv2d, x: &Tensor) -> Result<(Tensor, Tensor)> {
    let pre = conv.forward(x)?;
    let out = crate::nn::relu(&pre);
    Ok((pre, out))
}
