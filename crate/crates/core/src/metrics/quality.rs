use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Peak signal-to-noise ratio in dB; identical images give `f64::INFINITY`.
pub fn psnr(pred: &Tensor, target: &Tensor, range: f64) -> Result<f64> {
    pred.ensure_same_shape(target, "psnr")?;
    if !(range > 0.0) {
        return Err(Error::Config(format!(
            "PSNR range must be positive, got {range}"
        )));
    }
    if pred.is_empty() {
        shape_err!("psnr of empty images");
    }
    let mse = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum::<f64>()
        / pred.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (range * range / mse).log10())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            range: 1.0,
        }
    }
}

/// Normalised 1-D Gaussian; the 2-D window is its outer product.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of an `h x w` plane.
fn filter_valid(src: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| g[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| g[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f32], b: &[f32], h: usize, w: usize, cfg: &SsimConfig) -> f64 {
    let g = gaussian_window(cfg.window, cfg.sigma);
    let a: Vec<f64> = a.iter().map(|&v| v as f64).collect();
    let b: Vec<f64> = b.iter().map(|&v| v as f64).collect();
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
        a.iter().zip(&b).map(|(&x, &y)| f(x, y)).collect()
    };
    let mu_a = filter_valid(&a, h, w, &g);
    let mu_b = filter_valid(&b, h, w, &g);
    let aa = filter_valid(&prod(&|x, _| x * x), h, w, &g);
    let bb = filter_valid(&prod(&|_, y| y * y), h, w, &g);
    let ab = filter_valid(&prod(&|x, y| x * y), h, w, &g);
    let c1 = (cfg.k1 * cfg.range).powi(2);
    let c2 = (cfg.k2 * cfg.range).powi(2);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    total / n as f64
}

/// Mean local SSIM over all full windows, averaged over the planes of the
/// tensor.
pub fn ssim(pred: &Tensor, target: &Tensor, cfg: &SsimConfig) -> Result<f64> {
    pred.ensure_same_shape(target, "ssim")?;
    let [n, c, h, w] = pred.shape();
    if cfg.window == 0 || h < cfg.window || w < cfg.window {
        shape_err!(
            "image {h}x{w} is smaller than the {0}x{0} SSIM window",
            cfg.window
        );
    }
    let planes = n * c;
    let hw = h * w;
    let total: f64 = (0..planes)
        .map(|p| {
            ssim_plane(
                &pred.data()[p * hw..(p + 1) * hw],
                &target.data()[p * hw..(p + 1) * hw],
                h,
                w,
                cfg,
            )
        })
        .sum();
    Ok(total / planes as f64)
}
