//! 2-D convolution with explicit forward/backward, lowered to GEMM via im2col.

use rand_distr::{Distribution, Normal};

use super::gemm::sgemm;
use crate::error::{shape_err, Error, Result};
use crate::parallel;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Convolution parameters: weights `(c_out, c_in, k, k)` and one bias per
/// output channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Vec<f32>,
    pub stride: usize,
    pub padding: usize,
}

/// Gradients for one convolution. `input` is `None` when the caller asked
/// the backward pass to skip it.
#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

/// Output columns `lo..hi` whose stride-1 input column `ox + shift` lies
/// inside `0..w`.
fn valid_range(shift: isize, ow: usize, w: usize) -> (usize, usize) {
    let lo = (-shift).clamp(0, ow as isize) as usize;
    let hi = (w as isize - shift).clamp(lo as isize, ow as isize) as usize;
    (lo, hi)
}

impl Conv2d {
    pub fn zeros(c_out: usize, c_in: usize, k: usize, stride: usize, padding: usize) -> Self {
        Self {
            weight: Tensor::zeros([c_out, c_in, k, k]),
            bias: vec![0.0; c_out],
            stride,
            padding,
        }
    }

    /// He-normal weights (std = sqrt(2 / fan_in)), zero bias.
    pub fn he_normal(
        c_out: usize,
        c_in: usize,
        k: usize,
        stride: usize,
        padding: usize,
        rng: &mut Rng,
    ) -> Self {
        let mut conv = Self::zeros(c_out, c_in, k, stride, padding);
        let fan_in = (c_in * k * k) as f32;
        let normal = Normal::new(0.0f32, (2.0 / fan_in).sqrt()).expect("positive std");
        for w in conv.weight.data_mut() {
            *w = normal.sample(rng);
        }
        conv
    }

    pub fn c_out(&self) -> usize {
        self.weight.n()
    }
    pub fn c_in(&self) -> usize {
        self.weight.c()
    }
    pub fn kernel(&self) -> usize {
        self.weight.h()
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Output spatial size for an `h x w` input.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let k = self.kernel();
        if self.stride == 0 {
            return Err(Error::Config("convolution stride must be positive".into()));
        }
        let (hp, wp) = (h + 2 * self.padding, w + 2 * self.padding);
        if hp < k || wp < k {
            shape_err!(
                "input {}x{} with padding {} is smaller than kernel {}",
                h,
                w,
                self.padding,
                k
            );
        }
        Ok(((hp - k) / self.stride + 1, (wp - k) / self.stride + 1))
    }

    fn check_input(&self, input: &Tensor) -> Result<(usize, usize)> {
        if input.c() != self.c_in() {
            shape_err!(
                "convolution expects {} input channels, got {} (input shape {:?})",
                self.c_in(),
                input.c(),
                input.shape()
            );
        }
        if self.bias.len() != self.c_out() {
            shape_err!(
                "bias length {} does not match {} output channels",
                self.bias.len(),
                self.c_out()
            );
        }
        self.output_size(input.h(), input.w())
    }

    fn im2col(&self, item: &[f32], h: usize, w: usize, oh: usize, ow: usize, cols: &mut [f32]) {
        let k = self.kernel();
        let (s, p) = (self.stride as isize, self.padding as isize);
        let ohw = oh * ow;
        for ci in 0..self.c_in() {
            let plane = &item[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut cols[row * ohw..(row + 1) * ohw];
                    for oy in 0..oh {
                        let iy = oy as isize * s + ky as isize - p;
                        let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                        if iy < 0 || iy >= h as isize {
                            out_row.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        if s == 1 {
                            let (lo, hi) = valid_range(kx as isize - p, ow, w);
                            out_row[..lo].fill(0.0);
                            out_row[hi..].fill(0.0);
                            let off = (lo as isize + kx as isize - p) as usize;
                            out_row[lo..hi].copy_from_slice(&src[off..off + hi - lo]);
                            continue;
                        }
                        for (ox, o) in out_row.iter_mut().enumerate() {
                            let ix = ox as isize * s + kx as isize - p;
                            *o = if ix < 0 || ix >= w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn col2im(&self, cols: &[f32], h: usize, w: usize, oh: usize, ow: usize, item: &mut [f32]) {
        let k = self.kernel();
        let (s, p) = (self.stride as isize, self.padding as isize);
        let ohw = oh * ow;
        item.fill(0.0);
        for ci in 0..self.c_in() {
            let plane = &mut item[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &cols[row * ohw..(row + 1) * ohw];
                    for oy in 0..oh {
                        let iy = oy as isize * s + ky as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        if s == 1 {
                            let (lo, hi) = valid_range(kx as isize - p, ow, w);
                            let off = (lo as isize + kx as isize - p) as usize;
                            let row = &src[oy * ow + lo..oy * ow + hi];
                            for (d, v) in dst[off..off + hi - lo].iter_mut().zip(row) {
                                *d += v;
                            }
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = ox as isize * s + kx as isize - p;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Pure forward pass.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let (oh, ow) = self.check_input(input)?;
        let [n, _, h, w] = input.shape();
        let c_out = self.c_out();
        let ck = self.c_in() * self.kernel() * self.kernel();
        let ohw = oh * ow;
        let mut out = Tensor::zeros([n, c_out, oh, ow]);
        parallel::for_each_chunk_mut(out.data_mut(), c_out * ohw, |i, dst| {
            let mut cols = vec![0.0f32; ck * ohw];
            self.im2col(input.item(i), h, w, oh, ow, &mut cols);
            for (o, row) in dst.chunks_mut(ohw).enumerate() {
                row.fill(self.bias[o]);
            }
            sgemm(
                c_out,
                ck,
                ohw,
                self.weight.data(),
                false,
                &cols,
                false,
                1.0,
                dst,
            );
        });
        Ok(out)
    }

    /// Backward pass given the forward input and the output gradient.
    /// Per-item partial weight gradients are reduced in batch order, so the
    /// result does not depend on how items were scheduled.
    pub fn backward(
        &self,
        input: &Tensor,
        grad_out: &Tensor,
        need_input_grad: bool,
    ) -> Result<ConvGrads> {
        let (oh, ow) = self.check_input(input)?;
        let [n, _, h, w] = input.shape();
        let c_out = self.c_out();
        if grad_out.shape() != [n, c_out, oh, ow] {
            shape_err!(
                "output gradient shape {:?} does not match forward output {:?}",
                grad_out.shape(),
                [n, c_out, oh, ow]
            );
        }
        let k = self.kernel();
        let ck = self.c_in() * k * k;
        let ohw = oh * ow;
        let item_len = self.c_in() * h * w;

        let partials = parallel::map_indexed(n, |i| {
            let g = grad_out.item(i);
            let mut cols = vec![0.0f32; ck * ohw];
            self.im2col(input.item(i), h, w, oh, ow, &mut cols);
            let mut gw = vec![0.0f32; c_out * ck];
            sgemm(c_out, ohw, ck, g, false, &cols, true, 0.0, &mut gw);
            let gb: Vec<f32> = g.chunks(ohw).map(|row| row.iter().sum()).collect();
            let gi = need_input_grad.then(|| {
                sgemm(
                    ck,
                    c_out,
                    ohw,
                    self.weight.data(),
                    true,
                    g,
                    false,
                    0.0,
                    &mut cols,
                );
                let mut gi = vec![0.0f32; item_len];
                self.col2im(&cols, h, w, oh, ow, &mut gi);
                gi
            });
            (gw, gb, gi)
        });

        let mut weight = vec![0.0f32; c_out * ck];
        let mut bias = vec![0.0f32; c_out];
        let mut gin = need_input_grad.then(|| Vec::with_capacity(n * item_len));
        for (gw, gb, gi) in partials {
            for (a, b) in weight.iter_mut().zip(&gw) {
                *a += b;
            }
            for (a, b) in bias.iter_mut().zip(&gb) {
                *a += b;
            }
            if let (Some(acc), Some(gi)) = (gin.as_mut(), gi) {
                acc.extend_from_slice(&gi);
            }
        }
        let input_grad = match gin {
            Some(v) => Some(Tensor::from_vec(input.shape(), v)?),
            None => None,
        };
        Ok(ConvGrads {
            input: input_grad,
            weight,
            bias,
        })
    }
}

/// A convolution that caches its forward input so `backward` can be called
/// without re-supplying it.
#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub params: Conv2d,
    cache: Option<Tensor>,
}

impl ConvLayer {
    pub fn new(params: Conv2d) -> Self {
        Self {
            params,
            cache: None,
        }
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let out = self.params.forward(input)?;
        self.cache = Some(input.clone());
        Ok(out)
    }

    pub fn backward(&self, grad_out: &Tensor) -> Result<ConvGrads> {
        let input = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("convolution backward called before forward".into()))?;
        self.params.backward(input, grad_out, true)
    }
}
