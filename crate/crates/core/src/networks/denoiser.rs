//! Residual encoder-decoder denoiser.
//!
//! `depth` encoder convolutions (3x3, same padding, ReLU) are mirrored by
//! `depth` decoder convolutions. Decoder stage `j` adds the output of encoder
//! stage `depth - 2 - j` before its ReLU, and the final single-channel
//! decoder output is added to the network input without an activation. With
//! all parameters zero the network is therefore the identity map.

use serde::{Deserialize, Serialize};

use super::{conv_relu, Gradients, NamedConv, Network};
use crate::error::{shape_err, Error, Result};
use crate::nn::{relu, relu_backward, Conv2d, ConvGrads};
use crate::rng::rng;
use crate::tensor::Tensor;

pub const MIN_DENOISER_SIZE: usize = 16;

/// Scale applied to the He-initialised last decoder layer, so a fresh
/// network starts close to the identity map.
pub const OUTPUT_GAIN: f32 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub depth: usize,
    pub channels: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            depth: 5,
            channels: 32,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::Config(format!(
                "denoiser depth must be at least 2, got {}",
                self.depth
            )));
        }
        if self.channels == 0 {
            return Err(Error::Config("denoiser needs at least one channel".into()));
        }
        Ok(())
    }

    /// Closed-form parameter count for this topology.
    pub fn param_count(&self) -> usize {
        let (d, c) = (self.depth, self.channels);
        let thin = 9 * c + c;
        let wide = 9 * c * c + c;
        let last = 9 * c + 1;
        thin + (d - 1) * wide + (d - 1) * wide + last
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserNet {
    config: DenoiserConfig,
    seed: Option<u64>,
    layers: Vec<NamedConv>,
}

pub struct DenoiserTape {
    input: Tensor,
    enc_inputs: Vec<Tensor>,
    enc_pre: Vec<Tensor>,
    dec_inputs: Vec<Tensor>,
    dec_pre: Vec<Tensor>,
}

impl DenoiserNet {
    /// He-initialised network; deterministic in `seed`.
    pub fn new(config: DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng(seed);
        let mut net = Self::build(config, |c_out, c_in| {
            Conv2d::he_normal(c_out, c_in, 3, 1, 1, &mut r)
        });
        let last = &mut net.layers.last_mut().expect("decoder output layer").conv;
        last.weight = last.weight.scale(OUTPUT_GAIN);
        net.seed = Some(seed);
        Ok(net)
    }

    /// All-zero parameters: the identity map through the global shortcut.
    pub fn zeros(config: DenoiserConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self::build(config, |c_out, c_in| {
            Conv2d::zeros(c_out, c_in, 3, 1, 1)
        }))
    }

    fn build(config: DenoiserConfig, mut make: impl FnMut(usize, usize) -> Conv2d) -> Self {
        let (d, c) = (config.depth, config.channels);
        let mut layers = Vec::with_capacity(2 * d);
        for i in 0..d {
            let c_in = if i == 0 { 1 } else { c };
            layers.push(NamedConv {
                name: format!("enc{i}"),
                conv: make(c, c_in),
            });
        }
        for j in 0..d {
            let c_out = if j == d - 1 { 1 } else { c };
            layers.push(NamedConv {
                name: format!("dec{j}"),
                conv: make(c_out, c),
            });
        }
        Self {
            config,
            seed: None,
            layers,
        }
    }

    pub fn config(&self) -> DenoiserConfig {
        self.config
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.c() != 1 {
            shape_err!(
                "denoiser expects a single-channel input, got {:?}",
                x.shape()
            );
        }
        if x.h() < MIN_DENOISER_SIZE || x.w() < MIN_DENOISER_SIZE {
            shape_err!(
                "denoiser input must be at least {0}x{0}, got {1}x{2}",
                MIN_DENOISER_SIZE,
                x.h(),
                x.w()
            );
        }
        Ok(())
    }

    fn run(&self, x: &Tensor, mut tape: Option<&mut DenoiserTape>) -> Result<Tensor> {
        self.check_input(x)?;
        let d = self.config.depth;
        let mut acts: Vec<Tensor> = Vec::with_capacity(d);
        let mut cur = x.clone();
        for i in 0..d {
            let (pre, out) = conv_relu(&self.layers[i].conv, &cur)?;
            if let Some(t) = tape.as_deref_mut() {
                t.enc_inputs.push(cur);
                t.enc_pre.push(pre);
            }
            acts.push(out.clone());
            cur = out;
        }
        for j in 0..d - 1 {
            let mut pre = self.layers[d + j].conv.forward(&cur)?;
            pre.add_assign(&acts[d - 2 - j])?;
            let out = relu(&pre);
            if let Some(t) = tape.as_deref_mut() {
                t.dec_inputs.push(cur);
                t.dec_pre.push(pre);
            }
            cur = out;
        }
        let mut out = self.layers[2 * d - 1].conv.forward(&cur)?;
        if let Some(t) = tape.as_deref_mut() {
            t.dec_inputs.push(cur);
        }
        out.add_assign(x)?;
        Ok(out)
    }
}

impl Network for DenoiserNet {
    type Tape = DenoiserTape;

    fn layers(&self) -> &[NamedConv] {
        &self.layers
    }

    fn layers_mut(&mut self) -> &mut [NamedConv] {
        &mut self.layers
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.run(x, None)
    }

    fn forward_train(&self, x: &Tensor) -> Result<(Tensor, DenoiserTape)> {
        let d = self.config.depth;
        let mut tape = DenoiserTape {
            input: x.clone(),
            enc_inputs: Vec::with_capacity(d),
            enc_pre: Vec::with_capacity(d),
            dec_inputs: Vec::with_capacity(d),
            dec_pre: Vec::with_capacity(d),
        };
        let out = self.run(x, Some(&mut tape))?;
        Ok((out, tape))
    }

    fn backward(
        &self,
        tape: &DenoiserTape,
        grad_out: &Tensor,
        need_input_grad: bool,
    ) -> Result<Gradients> {
        let d = self.config.depth;
        grad_out.ensure_same_shape(&tape.input, "denoiser output gradient")?;
        let mut grads: Vec<Option<ConvGrads>> = vec![None; 2 * d];
        // Gradients arriving at encoder activations through decoder skips.
        let mut skip: Vec<Option<Tensor>> = vec![None; d];

        let g = self.layers[2 * d - 1]
            .conv
            .backward(&tape.dec_inputs[d - 1], grad_out, true)?;
        let mut gh = g.input.clone().expect("input grad requested");
        grads[2 * d - 1] = Some(g);

        for j in (0..d - 1).rev() {
            let gu = relu_backward(&tape.dec_pre[j], &gh)?;
            let g = self.layers[d + j]
                .conv
                .backward(&tape.dec_inputs[j], &gu, true)?;
            gh = g.input.clone().expect("input grad requested");
            grads[d + j] = Some(g);
            skip[d - 2 - j] = Some(gu);
        }

        for i in (0..d).rev() {
            if let Some(s) = skip[i].take() {
                gh.add_assign(&s)?;
            }
            let gz = relu_backward(&tape.enc_pre[i], &gh)?;
            let want_input = i > 0 || need_input_grad;
            let g = self.layers[i]
                .conv
                .backward(&tape.enc_inputs[i], &gz, want_input)?;
            if let Some(gi) = &g.input {
                gh = gi.clone();
            }
            grads[i] = Some(g);
        }

        let input = if need_input_grad {
            gh.add_assign(grad_out)?;
            Some(gh)
        } else {
            None
        };
        Ok(Gradients {
            layers: grads
                .into_iter()
                .map(|g| g.expect("all layers visited"))
                .collect(),
            input,
        })
    }
}
