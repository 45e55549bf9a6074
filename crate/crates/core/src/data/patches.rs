//! Aligned patch sampling and paired augmentation.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::slice::CtSlice;
use crate::error::{Error, Result};
use crate::rng::{derive, rng};
use crate::tensor::Tensor;

pub const PATCH_SIZE: usize = 64;

/// Where a patch came from: slice index within the sampled set and the
/// top-left corner of the crop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchOrigin {
    pub slice: usize,
    pub y: usize,
    pub x: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchBatch {
    pub x: Tensor,
    pub y: Tensor,
    pub origins: Vec<PatchOrigin>,
}

fn check_fits(h: usize, w: usize, patch: usize) -> Result<()> {
    if patch == 0 || h < patch || w < patch {
        return Err(Error::Shape(format!(
            "slice {h}x{w} is smaller than the {patch}x{patch} patch"
        )));
    }
    Ok(())
}

/// Random crop origins, deterministic in `seed`.
pub fn random_origins(
    dims: &[(usize, usize)],
    k: usize,
    patch: usize,
    seed: u64,
) -> Result<Vec<PatchOrigin>> {
    if dims.is_empty() {
        return Err(Error::Data("no slices to sample patches from".into()));
    }
    for &(h, w) in dims {
        check_fits(h, w, patch)?;
    }
    let mut r = rng(seed);
    Ok((0..k)
        .map(|_| {
            let slice = r.random_range(0..dims.len());
            let (h, w) = dims[slice];
            PatchOrigin {
                slice,
                y: r.random_range(0..=h - patch),
                x: r.random_range(0..=w - patch),
            }
        })
        .collect())
}

/// Non-overlapping tiles covering the slice, row-major.
pub fn grid_origins(h: usize, w: usize, patch: usize) -> Result<Vec<PatchOrigin>> {
    check_fits(h, w, patch)?;
    let mut out = Vec::new();
    for ty in 0..h / patch {
        for tx in 0..w / patch {
            out.push(PatchOrigin {
                slice: 0,
                y: ty * patch,
                x: tx * patch,
            });
        }
    }
    Ok(out)
}

/// Crop `patch x patch` windows at `origins` from a set of images.
pub fn crop_images(images: &[&Tensor], origins: &[PatchOrigin], patch: usize) -> Result<Tensor> {
    let items = origins
        .iter()
        .map(|o| {
            let img = images.get(o.slice).ok_or_else(|| {
                Error::Shape(format!("patch origin refers to missing slice {}", o.slice))
            })?;
            img.crop(o.y, o.x, patch, patch)
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack(&items)
}

/// `k` aligned random crops from one (x, y) slice pair.
pub fn sample_patches(
    x: &CtSlice,
    y: &CtSlice,
    k: usize,
    patch: usize,
    seed: u64,
) -> Result<PatchBatch> {
    if (x.height, x.width) != (y.height, y.width) {
        return Err(Error::Shape(format!(
            "paired slices differ in size: {}x{} vs {}x{}",
            x.height, x.width, y.height, y.width
        )));
    }
    let origins = random_origins(&[(x.height, x.width)], k, patch, seed)?;
    let (xt, yt) = (x.to_tensor(), y.to_tensor());
    Ok(PatchBatch {
        x: crop_images(&[&xt], &origins, patch)?,
        y: crop_images(&[&yt], &origins, patch)?,
        origins,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub enabled: bool,
    pub rescale_range: (f32, f32),
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            rescale_range: (0.5, 2.0),
            flip_horizontal: true,
            flip_vertical: true,
        }
    }
}

/// One concrete draw of the augmentation for one item.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transform {
    pub scale: f32,
    pub flip_h: bool,
    pub flip_v: bool,
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        scale: 1.0,
        flip_h: false,
        flip_v: false,
    };

    pub fn draw(spec: &AugmentSpec, seed: u64) -> Transform {
        if !spec.enabled {
            return Self::IDENTITY;
        }
        let mut r = rng(seed);
        let (lo, hi) = spec.rescale_range;
        let scale = if hi > lo { r.random_range(lo..=hi) } else { lo };
        let flip_h = r.random_bool(0.5) && spec.flip_horizontal;
        let flip_v = r.random_bool(0.5) && spec.flip_vertical;
        Transform {
            scale,
            flip_h,
            flip_v,
        }
    }

    /// Size of the rescaled intermediate for a `size x size` patch.
    pub fn scaled_size(&self, size: usize) -> usize {
        ((size as f32 * self.scale).round() as usize).max(8)
    }

    /// Rescale (bilinear), restore to `size` by centre-crop or reflect-pad,
    /// then flip. Operates on one `size x size` plane.
    pub fn apply(&self, plane: &[f32], size: usize) -> Vec<f32> {
        let m = self.scaled_size(size);
        let mut out = if m == size {
            plane.to_vec()
        } else {
            let resized = resize_bilinear(plane, size, size, m, m);
            if m > size {
                center_crop(&resized, m, size)
            } else {
                reflect_pad(&resized, m, size)
            }
        };
        if self.flip_h {
            for row in out.chunks_mut(size) {
                row.reverse();
            }
        }
        if self.flip_v {
            for y in 0..size / 2 {
                for x in 0..size {
                    out.swap(y * size + x, (size - 1 - y) * size + x);
                }
            }
        }
        out
    }
}

/// Half-pixel-centred bilinear resampling with edge clamping.
pub fn resize_bilinear(src: &[f32], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    let sy = h as f32 / oh as f32;
    let sx = w as f32 / ow as f32;
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f32);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f32;
        for x in 0..ow {
            let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f32);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f32;
            let top = src[y0 * w + x0] * (1.0 - wx) + src[y0 * w + x1] * wx;
            let bot = src[y1 * w + x0] * (1.0 - wx) + src[y1 * w + x1] * wx;
            out.push(top * (1.0 - wy) + bot * wy);
        }
    }
    out
}

fn center_crop(src: &[f32], m: usize, size: usize) -> Vec<f32> {
    let off = (m - size) / 2;
    let mut out = Vec::with_capacity(size * size);
    for y in off..off + size {
        out.extend_from_slice(&src[y * m + off..y * m + off + size]);
    }
    out
}

/// Mirror index without repeating the edge sample (`dcb|abcd|cba`).
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut j = i.rem_euclid(period);
    if j >= n {
        j = period - j;
    }
    j as usize
}

fn reflect_pad(src: &[f32], m: usize, size: usize) -> Vec<f32> {
    let before = ((size - m) / 2) as isize;
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        let sy = reflect(y as isize - before, m);
        for x in 0..size {
            let sx = reflect(x as isize - before, m);
            out.push(src[sy * m + sx]);
        }
    }
    out
}

/// Augment every item of a batch; x and y members share each item's draw.
pub fn augment(batch: &PatchBatch, spec: &AugmentSpec, seed: u64) -> Result<PatchBatch> {
    let transforms: Vec<Transform> = (0..batch.x.n())
        .map(|i| Transform::draw(spec, derive(seed, "augment", i as u64)))
        .collect();
    Ok(PatchBatch {
        x: apply_transforms(&batch.x, &transforms)?,
        y: apply_transforms(&batch.y, &transforms)?,
        origins: batch.origins.clone(),
    })
}

pub fn apply_transforms(t: &Tensor, transforms: &[Transform]) -> Result<Tensor> {
    let [n, c, h, w] = t.shape();
    if h != w {
        return Err(Error::Shape(format!(
            "augmentation needs square patches, got {h}x{w}"
        )));
    }
    if transforms.len() != n {
        return Err(Error::Shape(format!(
            "{} transforms for a batch of {n}",
            transforms.len()
        )));
    }
    let mut out = Vec::with_capacity(t.len());
    for (i, tr) in transforms.iter().enumerate() {
        for plane in t.item(i).chunks(h * w) {
            out.extend(tr.apply(plane, h));
        }
    }
    Tensor::from_vec([n, c, h, w], out)
}
