//! U-Net style noise predictor.
//!
//! Level `l` runs at resolution `H / 2^l` with `channels * 2^l` features.
//! Downsampling is a stride-2 3x3 convolution; upsampling is nearest
//! neighbour followed by a 3x3 convolution, whose output is concatenated
//! with the encoder feature of the same level. A final 1x1 convolution maps
//! to a single unbounded noise channel.

use serde::{Deserialize, Serialize};

use super::{conv_relu, Gradients, NamedConv, Network};
use crate::error::{shape_err, Error, Result};
use crate::nn::{
    concat_channels, relu_backward, split_channels, upsample_nearest, upsample_nearest_backward,
    Conv2d, ConvGrads,
};
use crate::rng::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseNetConfig {
    pub levels: usize,
    pub channels: usize,
}

impl Default for NoiseNetConfig {
    fn default() -> Self {
        Self {
            levels: 2,
            channels: 16,
        }
    }
}

impl NoiseNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.channels == 0 {
            return Err(Error::Config(format!(
                "noise net needs at least one level and one channel, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Spatial dims must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << self.levels
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseNet {
    config: NoiseNetConfig,
    seed: u64,
    layers: Vec<NamedConv>,
}

/// Per-conv cached input and pre-activation, in layer order.
pub struct NoiseNetTape {
    input_shape: [usize; 4],
    inputs: Vec<Tensor>,
    pre: Vec<Tensor>,
}

/// Scale applied to the He-initialised output layer so an untrained net
/// predicts noise of roughly the magnitude it will have to learn.
pub const OUTPUT_GAIN: f32 = 0.02;

impl NoiseNet {
    pub fn new(config: NoiseNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng(seed);
        let (levels, b) = (config.levels, config.channels);
        let mut layers = Vec::new();
        let mut push = |name: String, c_out, c_in, k, stride, pad| {
            layers.push(NamedConv {
                name,
                conv: Conv2d::he_normal(c_out, c_in, k, stride, pad, &mut r),
            });
        };
        push("in".into(), b, 1, 3, 1, 1);
        for l in 1..=levels {
            let (lo, hi) = (b << (l - 1), b << l);
            push(format!("down{l}"), hi, lo, 3, 2, 1);
            push(format!("enc{l}"), hi, hi, 3, 1, 1);
        }
        for l in (1..=levels).rev() {
            let (lo, hi) = (b << (l - 1), b << l);
            push(format!("up{l}"), lo, hi, 3, 1, 1);
            push(format!("dec{l}"), lo, hi, 3, 1, 1);
        }
        push("out".into(), 1, b, 1, 1, 0);
        let out = &mut layers.last_mut().expect("output layer").conv;
        out.weight = out.weight.scale(OUTPUT_GAIN);
        Ok(Self {
            config,
            seed,
            layers,
        })
    }

    pub fn config(&self) -> NoiseNetConfig {
        self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn idx_down(l: usize) -> usize {
        2 * l - 1
    }
    fn idx_enc(l: usize) -> usize {
        2 * l
    }
    fn idx_up(&self, l: usize) -> usize {
        1 + 2 * self.config.levels + 2 * (self.config.levels - l)
    }
    fn idx_dec(&self, l: usize) -> usize {
        self.idx_up(l) + 1
    }
    fn idx_out(&self) -> usize {
        self.layers.len() - 1
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.c() != 1 {
            shape_err!(
                "noise net expects a single-channel input, got {:?}",
                x.shape()
            );
        }
        let div = self.config.divisor();
        if x.h() % div != 0 || x.w() % div != 0 || x.h() == 0 || x.w() == 0 {
            shape_err!(
                "noise net input {}x{} must be a non-zero multiple of {} in both dims; pad the image first",
                x.h(),
                x.w(),
                div
            );
        }
        Ok(())
    }

    fn run(&self, x: &Tensor, mut tape: Option<&mut NoiseNetTape>) -> Result<Tensor> {
        self.check_input(x)?;
        let levels = self.config.levels;
        let mut record = |i: &Tensor, p: &Tensor| {
            if let Some(t) = tape.as_deref_mut() {
                t.inputs.push(i.clone());
                t.pre.push(p.clone());
            }
        };
        let mut skips = Vec::with_capacity(levels);
        let (pre, mut cur) = conv_relu(&self.layers[0].conv, x)?;
        record(x, &pre);
        for l in 1..=levels {
            skips.push(cur.clone());
            let (pre, down) = conv_relu(&self.layers[Self::idx_down(l)].conv, &cur)?;
            record(&cur, &pre);
            let (pre, enc) = conv_relu(&self.layers[Self::idx_enc(l)].conv, &down)?;
            record(&down, &pre);
            cur = enc;
        }
        for l in (1..=levels).rev() {
            let up = upsample_nearest(&cur, 2)?;
            let (pre, u) = conv_relu(&self.layers[self.idx_up(l)].conv, &up)?;
            record(&up, &pre);
            let cat = concat_channels(&u, &skips[l - 1])?;
            let (pre, dec) = conv_relu(&self.layers[self.idx_dec(l)].conv, &cat)?;
            record(&cat, &pre);
            cur = dec;
        }
        let out = self.layers[self.idx_out()].conv.forward(&cur)?;
        record(&cur, &out);
        Ok(out)
    }
}

impl Network for NoiseNet {
    type Tape = NoiseNetTape;

    fn layers(&self) -> &[NamedConv] {
        &self.layers
    }

    fn layers_mut(&mut self) -> &mut [NamedConv] {
        &mut self.layers
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.run(x, None)
    }

    fn forward_train(&self, x: &Tensor) -> Result<(Tensor, NoiseNetTape)> {
        let mut tape = NoiseNetTape {
            input_shape: x.shape(),
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let out = self.run(x, Some(&mut tape))?;
        Ok((out, tape))
    }

    fn backward(
        &self,
        tape: &NoiseNetTape,
        grad_out: &Tensor,
        need_input_grad: bool,
    ) -> Result<Gradients> {
        let levels = self.config.levels;
        let b = self.config.channels;
        if grad_out.shape() != tape.input_shape {
            shape_err!(
                "noise net output gradient {:?} does not match input {:?}",
                grad_out.shape(),
                tape.input_shape
            );
        }
        let n = self.layers.len();
        let mut grads: Vec<Option<ConvGrads>> = vec![None; n];
        let mut back = |idx: usize, g: &Tensor, relu: bool, want: bool| -> Result<Option<Tensor>> {
            let gz = if relu {
                relu_backward(&tape.pre[idx], g)?
            } else {
                g.clone()
            };
            let cg = self.layers[idx]
                .conv
                .backward(&tape.inputs[idx], &gz, want)?;
            let gi = cg.input.clone();
            grads[idx] = Some(cg);
            Ok(gi)
        };

        let mut g = back(self.idx_out(), grad_out, false, true)?.expect("input grad");
        let mut skip_grads: Vec<Option<Tensor>> = vec![None; levels];
        for l in 1..=levels {
            let g_cat = back(self.idx_dec(l), &g, true, true)?.expect("input grad");
            let (g_u, g_skip) = split_channels(&g_cat, b << (l - 1))?;
            skip_grads[l - 1] = Some(g_skip);
            let g_up = back(self.idx_up(l), &g_u, true, true)?.expect("input grad");
            g = upsample_nearest_backward(&g_up, 2)?;
        }
        for l in (1..=levels).rev() {
            let g_down = back(Self::idx_enc(l), &g, true, true)?.expect("input grad");
            g = back(Self::idx_down(l), &g_down, true, true)?.expect("input grad");
            if let Some(s) = skip_grads[l - 1].take() {
                g.add_assign(&s)?;
            }
        }
        let input = back(0, &g, true, need_input_grad)?;
        Ok(Gradients {
            layers: grads
                .into_iter()
                .map(|g| g.expect("all layers visited"))
                .collect(),
            input,
        })
    }
}
