//! Parameter-free layers: ReLU, nearest-neighbour upsampling, channel concat.

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Gradient passes where the forward input was strictly positive; the
/// subgradient at 0 is 0.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    input.zip_map(grad_out, |x, g| if x > 0.0 { g } else { 0.0 })
}

#[derive(Clone, Debug, Default)]
pub struct Relu {
    cache: Option<Tensor>,
}

impl Relu {
    pub fn forward(&mut self, input: &Tensor) -> Tensor {
        self.cache = Some(input.clone());
        relu(input)
    }

    pub fn backward(&self, grad_out: &Tensor) -> Result<Tensor> {
        let input = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("relu backward called before forward".into()))?;
        relu_backward(input, grad_out)
    }
}

pub fn upsample_nearest(input: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(Error::Config("upsample factor must be at least 1".into()));
    }
    if factor == 1 {
        return Ok(input.clone());
    }
    let [n, c, h, w] = input.shape();
    let (oh, ow) = (h * factor, w * factor);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in input.data().chunks(h * w) {
        for y in 0..oh {
            let src = &plane[(y / factor) * w..(y / factor + 1) * w];
            for x in 0..ow {
                out.push(src[x / factor]);
            }
        }
    }
    Tensor::from_vec([n, c, oh, ow], out)
}

/// Sums each `factor x factor` block of the output gradient.
pub fn upsample_nearest_backward(grad_out: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(Error::Config("upsample factor must be at least 1".into()));
    }
    let [n, c, oh, ow] = grad_out.shape();
    if oh % factor != 0 || ow % factor != 0 {
        shape_err!(
            "gradient {}x{} is not a multiple of upsample factor {}",
            oh,
            ow,
            factor
        );
    }
    let (h, w) = (oh / factor, ow / factor);
    let mut out = vec![0.0f32; n * c * h * w];
    for (plane, dst) in grad_out.data().chunks(oh * ow).zip(out.chunks_mut(h * w)) {
        for y in 0..oh {
            for x in 0..ow {
                dst[(y / factor) * w + x / factor] += plane[y * ow + x];
            }
        }
    }
    Tensor::from_vec([n, c, h, w], out)
}

pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [na, ca, ha, wa] = a.shape();
    let [nb, cb, hb, wb] = b.shape();
    if (na, ha, wa) != (nb, hb, wb) {
        shape_err!(
            "cannot concatenate {:?} and {:?}: batch/spatial dims differ",
            a.shape(),
            b.shape()
        );
    }
    let mut out = Vec::with_capacity(a.len() + b.len());
    for i in 0..na {
        out.extend_from_slice(a.item(i));
        out.extend_from_slice(b.item(i));
    }
    Tensor::from_vec([na, ca + cb, ha, wa], out)
}

/// Inverse of [`concat_channels`]: split the first `c_a` channels from the rest.
pub fn split_channels(t: &Tensor, c_a: usize) -> Result<(Tensor, Tensor)> {
    let [n, c, h, w] = t.shape();
    if c_a > c {
        shape_err!("cannot split {} channels off a {}-channel tensor", c_a, c);
    }
    let cut = c_a * h * w;
    let mut a = Vec::with_capacity(n * cut);
    let mut b = Vec::with_capacity(t.len() - n * cut);
    for i in 0..n {
        let item = t.item(i);
        a.extend_from_slice(&item[..cut]);
        b.extend_from_slice(&item[cut..]);
    }
    Ok((
        Tensor::from_vec([n, c_a, h, w], a)?,
        Tensor::from_vec([n, c - c_a, h, w], b)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: [usize; 4], v: &[f32]) -> Tensor {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn relu_forward_backward() {
        let x = t([1, 1, 1, 3], &[-1.0, 0.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let g = relu_backward(&x, &Tensor::full([1, 1, 1, 3], 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
        assert!(Relu::default().backward(&x).is_err());
    }

    #[test]
    fn upsample_replicates_blocks() {
        let x = t([1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(upsample_nearest(&x, 1).unwrap(), x);
        let up = upsample_nearest(&x, 2).unwrap();
        assert_eq!(up.shape(), [1, 1, 4, 4]);
        #[rustfmt::skip]
        let want = [1.0, 1.0, 2.0, 2.0,
                    1.0, 1.0, 2.0, 2.0,
                    3.0, 3.0, 4.0, 4.0,
                    3.0, 3.0, 4.0, 4.0];
        assert_eq!(up.data(), &want);
        assert!(upsample_nearest(&x, 0).is_err());
        let back = upsample_nearest_backward(&Tensor::full([1, 1, 4, 4], 1.0), 2).unwrap();
        assert_eq!(back.data(), &[4.0; 4]);
    }

    #[test]
    fn concat_and_split() {
        let a = t([1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t([1, 1, 2, 2], &[5.0, 6.0, 7.0, 8.0]);
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.shape(), [1, 2, 2, 2]);
        let (a2, b2) = split_channels(&c, 1).unwrap();
        assert_eq!((a2, b2), (a, b));
        assert!(concat_channels(&c, &Tensor::zeros([1, 1, 3, 2])).is_err());
    }
}
