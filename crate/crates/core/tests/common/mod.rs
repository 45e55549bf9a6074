//! Oracles shared by the integration and acceptance tests.

#![allow(dead_code)]

pub mod cases;
pub mod criteria;

use pseudoct::networks::Network;
use pseudoct::nn::{
    concat_channels, l1_loss, mse_loss, relu, relu_backward, split_channels, upsample_nearest,
    upsample_nearest_backward, Conv2d,
};
use pseudoct::rng::rng;
use pseudoct::Tensor;
use rand::seq::index::sample;
use rand_distr::{Distribution, StandardNormal};

pub const FD_STEP: f64 = 1e-3;
pub const REL_TOL: f64 = 1e-3;
pub const MIN_COORDS: usize = 100;
/// Below this magnitude a gradient cannot be resolved by single-precision
/// differences at the fixed step.
const F32_MIN_GRAD: f64 = 1e-2;
/// Losses evaluated by the double-precision reference are resolvable far
/// lower; the floor only guards against cancellation in the f32 backward.
const F64_MIN_GRAD: f64 = 1e-4;

pub fn random_tensor(shape: [usize; 4], seed: u64) -> Tensor {
    let mut r = rng(seed);
    let len = shape.iter().product();
    Tensor::from_vec(
        shape,
        (0..len).map(|_| StandardNormal.sample(&mut r)).collect(),
    )
    .unwrap()
}

/// Direct six-loop convolution accumulated in double precision.
pub fn naive_conv(conv: &Conv2d, x: &Tensor) -> Tensor {
    let out = Conv64::from(conv).forward(&T64::from(x));
    Tensor::from_vec(out.shape, out.data.iter().map(|&v| v as f32).collect()).unwrap()
}

/// Literal per-pixel SSIM: for every valid window position, weighted
/// statistics summed straight from the 2-D Gaussian window.
pub fn naive_ssim(a: &[f32], b: &[f32], h: usize, w: usize) -> f64 {
    let size = 11usize;
    let sigma = 1.5f64;
    let c = (size as f64 - 1.0) / 2.0;
    let mut win = vec![0.0f64; size * size];
    for y in 0..size {
        for x in 0..size {
            let d2 = (y as f64 - c).powi(2) + (x as f64 - c).powi(2);
            win[y * size + x] = (-d2 / (2.0 * sigma * sigma)).exp();
        }
    }
    let total: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= total);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut sum = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - size {
        for x0 in 0..=w - size {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for y in 0..size {
                for x in 0..size {
                    let wt = win[y * size + x];
                    let va = a[(y0 + y) * w + x0 + x] as f64;
                    let vb = b[(y0 + y) * w + x0 + x] as f64;
                    ma += wt * va;
                    mb += wt * vb;
                    saa += wt * va * va;
                    sbb += wt * vb * vb;
                    sab += wt * va * vb;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    sum / count as f64
}

pub fn dot(a: &Tensor, w: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(w.data())
        .map(|(&x, &y)| x as f64 * y as f64)
        .sum()
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub name: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.checked >= MIN_COORDS && self.max_rel < REL_TOL
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Central differences on `coords` coordinates drawn from `0..n`.
/// `loss(i, delta)` evaluates the scalar loss with coordinate `i` shifted by
/// `delta`. Along a single coordinate every function checked here is
/// piecewise linear or piecewise quadratic with second derivative at most
/// `max_curvature`, so a coordinate whose step crosses a ReLU or |.| kink
/// shows a larger second difference and is replaced by a fresh draw, as are
/// coordinates with gradient magnitude below `min_grad`.
pub fn fd_check(
    name: &str,
    n: usize,
    coords: usize,
    seed: u64,
    min_grad: f64,
    max_curvature: f64,
    analytic: &dyn Fn(usize) -> f64,
    loss: &mut dyn FnMut(usize, f64) -> f64,
) -> GradReport {
    let mut r = rng(seed);
    let order = sample(&mut r, n, n).into_vec();
    let mut report = GradReport {
        name: name.to_string(),
        checked: 0,
        skipped: 0,
        max_rel: 0.0,
    };
    let l0 = loss(0, 0.0);
    for i in order {
        if report.checked == coords {
            break;
        }
        let lp = loss(i, FD_STEP);
        let lm = loss(i, -FD_STEP);
        let numeric = (lp - lm) / (2.0 * FD_STEP);
        let a = analytic(i);
        let curvature = (lp + lm - 2.0 * l0).abs() / FD_STEP;
        let allowed = 1e-3 * a.abs().max(min_grad) + max_curvature * FD_STEP * 1.01;
        if curvature > allowed || a.abs() < min_grad {
            report.skipped += 1;
            continue;
        }
        report.max_rel = report.max_rel.max(rel_err(a, numeric));
        report.checked += 1;
    }
    report
}

fn perturbed(t: &Tensor, i: usize, delta: f64) -> Tensor {
    let mut t = t.clone();
    t.data_mut()[i] += delta as f32;
    t
}

/// Weights, bias and input of a convolution under `L = sum(w * conv(x))`.
pub fn check_conv(name: &str, conv: &Conv2d, x: &Tensor, seed: u64) -> GradReport {
    let y = conv.forward(x).unwrap();
    let wts = random_tensor(y.shape(), seed ^ 0x55);
    let g = conv.backward(x, &wts, true).unwrap();
    let gi = g.input.clone().unwrap();
    let (nw, nb) = (conv.weight.len(), conv.bias.len());
    let total = nw + nb + x.len();
    let analytic = |i: usize| -> f64 {
        if i < nw {
            g.weight[i] as f64
        } else if i < nw + nb {
            g.bias[i - nw] as f64
        } else {
            gi.data()[i - nw - nb] as f64
        }
    };
    let base = Conv64::from(conv);
    let x64 = T64::from(x);
    let mut loss = |i: usize, d: f64| -> f64 {
        let mut c = base.clone();
        let mut xi = x64.clone();
        if i < nw {
            c.w[i] += d;
        } else if i < nw + nb {
            c.b[i - nw] += d;
        } else {
            xi.data[i - nw - nb] += d;
        }
        c.forward(&xi).dot(&wts)
    };
    fd_check(
        name,
        total,
        MIN_COORDS,
        seed,
        F64_MIN_GRAD,
        0.0,
        &analytic,
        &mut loss,
    )
}

pub fn check_relu(x: &Tensor, seed: u64) -> GradReport {
    let wts = random_tensor(x.shape(), seed ^ 0x77);
    let g = relu_backward(x, &wts).unwrap();
    fd_check(
        "relu",
        x.len(),
        MIN_COORDS,
        seed,
        F32_MIN_GRAD,
        0.0,
        &|i| g.data()[i] as f64,
        &mut |i, d| dot(&relu(&perturbed(x, i, d)), &wts),
    )
}

pub fn check_upsample(x: &Tensor, factor: usize, seed: u64) -> GradReport {
    let y = upsample_nearest(x, factor).unwrap();
    let wts = random_tensor(y.shape(), seed ^ 0x99);
    let g = upsample_nearest_backward(&wts, factor).unwrap();
    fd_check(
        "upsample_nearest",
        x.len(),
        MIN_COORDS,
        seed,
        F32_MIN_GRAD,
        0.0,
        &|i| g.data()[i] as f64,
        &mut |i, d| {
            dot(
                &upsample_nearest(&perturbed(x, i, d), factor).unwrap(),
                &wts,
            )
        },
    )
}

pub fn check_concat(a: &Tensor, b: &Tensor, seed: u64) -> GradReport {
    let y = concat_channels(a, b).unwrap();
    let wts = random_tensor(y.shape(), seed ^ 0x33);
    let (ga, gb) = split_channels(&wts, a.c()).unwrap();
    let na = a.len();
    fd_check(
        "concat_channels",
        na + b.len(),
        MIN_COORDS,
        seed,
        F32_MIN_GRAD,
        0.0,
        &|i| {
            if i < na {
                ga.data()[i] as f64
            } else {
                gb.data()[i - na] as f64
            }
        },
        &mut |i, d| {
            let y = if i < na {
                concat_channels(&perturbed(a, i, d), b)
            } else {
                concat_channels(a, &perturbed(b, i - na, d))
            };
            dot(&y.unwrap(), &wts)
        },
    )
}

/// Loss functions are mean-reduced, so values are scaled by the element count
/// to keep gradients resolvable.
pub fn check_loss(name: &str, l2: bool, pred: &Tensor, target: &Tensor, seed: u64) -> GradReport {
    let f = |p: &Tensor| {
        if l2 {
            mse_loss(p, target)
        } else {
            l1_loss(p, target)
        }
        .unwrap()
    };
    let scale = pred.len() as f64;
    let (_, g) = f(pred);
    fd_check(
        name,
        pred.len(),
        MIN_COORDS,
        seed,
        F32_MIN_GRAD,
        if l2 { 2.0 } else { 0.0 },
        &|i| g.data()[i] as f64 * scale,
        &mut |i, d| f(&perturbed(pred, i, d)).0 * scale,
    )
}

/// Double-precision reference forward of a network, given its parameters
/// flattened in layer order.
pub trait Reference: Network {
    fn reference(&self, params: &[f64], x: &T64) -> T64;
}

/// Parameters and input of a whole network under `L = sum(w * net(x))`,
/// with the loss evaluated by the double-precision reference.
pub fn check_network<N: Reference>(name: &str, net: &N, x: &Tensor, seed: u64) -> GradReport {
    let (y, tape) = net.forward_train(x).unwrap();
    let wts = random_tensor(y.shape(), seed ^ 0x11);
    let grads = net.backward(&tape, &wts, true).unwrap();
    let flat = grads.flat();
    let gi = grads.input.clone().unwrap();
    let np = flat.len();
    let params: Vec<f64> = net.flat_params().iter().map(|&v| v as f64).collect();
    let x64 = T64::from(x);
    fd_check(
        name,
        np + x.len(),
        MIN_COORDS,
        seed,
        F64_MIN_GRAD,
        0.0,
        &|i| {
            if i < np {
                flat[i] as f64
            } else {
                gi.data()[i - np] as f64
            }
        },
        &mut |i, d| {
            let mut p = params.clone();
            let mut xi = x64.clone();
            if i < np {
                p[i] += d;
            } else {
                xi.data[i - np] += d;
            }
            net.reference(&p, &xi).dot(&wts)
        },
    )
}

#[derive(Clone, Debug)]
pub struct T64 {
    pub shape: [usize; 4],
    pub data: Vec<f64>,
}

impl From<&Tensor> for T64 {
    fn from(t: &Tensor) -> Self {
        T64 {
            shape: t.shape(),
            data: t.data().iter().map(|&v| v as f64).collect(),
        }
    }
}

impl T64 {
    fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        let [_, cc, h, w] = self.shape;
        self.data[((n * cc + c) * h + y) * w + x]
    }

    pub fn dot(&self, w: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(w.data())
            .map(|(a, &b)| a * b as f64)
            .sum()
    }

    pub fn relu(mut self) -> T64 {
        self.data.iter_mut().for_each(|v| *v = v.max(0.0));
        self
    }

    pub fn add(mut self, other: &T64) -> T64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
        self
    }

    pub fn upsample2(&self) -> T64 {
        let [n, c, h, w] = self.shape;
        let mut data = Vec::with_capacity(self.data.len() * 4);
        for b in 0..n {
            for ch in 0..c {
                for y in 0..2 * h {
                    for x in 0..2 * w {
                        data.push(self.at(b, ch, y / 2, x / 2));
                    }
                }
            }
        }
        T64 {
            shape: [n, c, 2 * h, 2 * w],
            data,
        }
    }

    pub fn concat(&self, other: &T64) -> T64 {
        let [n, ca, h, w] = self.shape;
        let cb = other.shape[1];
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        for b in 0..n {
            data.extend_from_slice(&self.data[b * ca * h * w..(b + 1) * ca * h * w]);
            data.extend_from_slice(&other.data[b * cb * h * w..(b + 1) * cb * h * w]);
        }
        T64 {
            shape: [n, ca + cb, h, w],
            data,
        }
    }
}

/// A convolution with double-precision parameters.
#[derive(Clone, Debug)]
pub struct Conv64 {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub c_out: usize,
    pub c_in: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
}

impl From<&Conv2d> for Conv64 {
    fn from(c: &Conv2d) -> Self {
        Conv64 {
            w: c.weight.data().iter().map(|&v| v as f64).collect(),
            b: c.bias.iter().map(|&v| v as f64).collect(),
            c_out: c.c_out(),
            c_in: c.c_in(),
            k: c.kernel(),
            stride: c.stride,
            padding: c.padding,
        }
    }
}

impl Conv64 {
    /// Same layer shape as `c`, parameters taken from the front of `params`.
    pub fn take(c: &Conv2d, params: &mut &[f64]) -> Conv64 {
        let nw = c.weight.len();
        let nb = c.bias.len();
        let mut out = Conv64::from(c);
        out.w = params[..nw].to_vec();
        out.b = params[nw..nw + nb].to_vec();
        *params = &params[nw + nb..];
        out
    }

    pub fn forward(&self, x: &T64) -> T64 {
        let [n, c_in, h, w] = x.shape;
        assert_eq!(c_in, self.c_in);
        let (k, s, p) = (self.k, self.stride, self.padding);
        let oh = (h + 2 * p - k) / s + 1;
        let ow = (w + 2 * p - k) / s + 1;
        let mut data = Vec::with_capacity(n * self.c_out * oh * ow);
        for b in 0..n {
            for o in 0..self.c_out {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = self.b[o];
                        for ci in 0..c_in {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * s + ky) as isize - p as isize;
                                    let ix = (ox * s + kx) as isize - p as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    acc += self.w[((o * c_in + ci) * k + ky) * k + kx]
                                        * x.at(b, ci, iy as usize, ix as usize);
                                }
                            }
                        }
                        data.push(acc);
                    }
                }
            }
        }
        T64 {
            shape: [n, self.c_out, oh, ow],
            data,
        }
    }
}

impl Reference for pseudoct::networks::DenoiserNet {
    fn reference(&self, params: &[f64], x: &T64) -> T64 {
        let mut p = params;
        let convs: Vec<Conv64> = self
            .layers()
            .iter()
            .map(|l| Conv64::take(&l.conv, &mut p))
            .collect();
        let d = self.config().depth;
        let mut acts = Vec::new();
        let mut cur = x.clone();
        for conv in &convs[..d] {
            cur = conv.forward(&cur).relu();
            acts.push(cur.clone());
        }
        for j in 0..d - 1 {
            cur = convs[d + j].forward(&cur).add(&acts[d - 2 - j]).relu();
        }
        convs[2 * d - 1].forward(&cur).add(x)
    }
}

impl Reference for pseudoct::networks::NoiseNet {
    fn reference(&self, params: &[f64], x: &T64) -> T64 {
        let mut p = params;
        let convs: Vec<Conv64> = self
            .layers()
            .iter()
            .map(|l| Conv64::take(&l.conv, &mut p))
            .collect();
        let levels = self.config().levels;
        let mut next = convs.iter();
        let mut cur = next.next().unwrap().forward(x).relu();
        let mut skips = Vec::new();
        for _ in 0..levels {
            skips.push(cur.clone());
            cur = next.next().unwrap().forward(&cur).relu();
            cur = next.next().unwrap().forward(&cur).relu();
        }
        for l in (0..levels).rev() {
            let up = next.next().unwrap().forward(&cur.upsample2()).relu();
            cur = next.next().unwrap().forward(&up.concat(&skips[l])).relu();
        }
        next.next().unwrap().forward(&cur)
    }
}

/// Replace every layer's parameters with plain He-normal draws (random
/// biases too) so no part of the network is near-degenerate.
pub fn rerandomize<N: Network>(net: &mut N, seed: u64) {
    let mut r = rng(seed);
    for l in net.layers_mut() {
        let c = &l.conv;
        let mut fresh =
            Conv2d::he_normal(c.c_out(), c.c_in(), c.kernel(), c.stride, c.padding, &mut r);
        for b in &mut fresh.bias {
            *b = 0.1 * {
                let v: f64 = StandardNormal.sample(&mut r);
                v as f32
            };
        }
        l.conv = fresh;
    }
}

/// Lag-1 horizontal autocorrelation of each plane, averaged.
pub fn lag1_autocorr(t: &Tensor) -> f64 {
    let [n, c, h, w] = t.shape();
    let mut total = 0.0;
    for p in 0..n * c {
        let d = &t.data()[p * h * w..(p + 1) * h * w];
        let mean = d.iter().map(|&v| v as f64).sum::<f64>() / d.len() as f64;
        let (mut num, mut den) = (0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                let a = d[y * w + x] as f64 - mean;
                den += a * a;
                if x + 1 < w {
                    num += a * (d[y * w + x + 1] as f64 - mean);
                }
            }
        }
        total += if den > 0.0 { num / den } else { 0.0 };
    }
    total / (n * c) as f64
}

/// A complete pipeline configuration small enough to run in seconds.
pub fn tiny_run_config(seed: u64) -> pseudoct::pipeline::RunConfig {
    use pseudoct::networks::{DenoiserConfig, NoiseNetConfig};
    let mut cfg = pseudoct::pipeline::RunConfig::default();
    cfg.seed = seed;
    cfg.synth.seed = seed;
    cfg.synth.subjects = 4;
    cfg.synth.slices_per_subject = 2;
    cfg.synth.size = 32;
    cfg.n_train = 2;
    cfg.n_test = 2;
    cfg.denoiser = DenoiserConfig {
        depth: 2,
        channels: 4,
    };
    cfg.noise_net = NoiseNetConfig {
        levels: 2,
        channels: 4,
    };
    for t in [&mut cfg.pretrain, &mut cfg.noise_train] {
        t.epochs = 2;
        t.iters_per_epoch = 2;
        t.batch_size = 2;
        t.patch = 16;
    }
    cfg.finetune.steps = 4;
    cfg.finetune.update_period = 2;
    cfg.finetune.batch_size = 2;
    cfg.finetune.patch = 16;
    cfg.ssim.window = 7;
    cfg
}
