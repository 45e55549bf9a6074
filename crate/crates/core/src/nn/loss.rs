//! Mean-reduced regression losses returning value and gradient together.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    L1,
    L2,
}

impl std::str::FromStr for LossKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(LossKind::L1),
            "l2" | "mse" => Ok(LossKind::L2),
            other => Err(format!("unknown loss '{other}' (expected l1 or l2)")),
        }
    }
}

impl LossKind {
    pub fn eval(self, pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
        match self {
            LossKind::L1 => l1_loss(pred, target),
            LossKind::L2 => mse_loss(pred, target),
        }
    }
}

fn check(pred: &Tensor, target: &Tensor) -> Result<()> {
    if pred.shape() != target.shape() {
        shape_err!(
            "loss: prediction {:?} and target {:?} differ",
            pred.shape(),
            target.shape()
        );
    }
    Ok(())
}

fn sign(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `mean |pred - target|`, gradient `sign(pred - target) / count`.
pub fn l1_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    check(pred, target)?;
    let count = pred.len().max(1) as f32;
    let mut sum = 0.0f64;
    let grad = pred.zip_map(target, |p, t| sign(p - t) / count)?;
    for (p, t) in pred.data().iter().zip(target.data()) {
        sum += f64::from((p - t).abs());
    }
    Ok((sum / f64::from(count), grad))
}

/// `mean (pred - target)^2`, gradient `2 (pred - target) / count`.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    check(pred, target)?;
    let count = pred.len().max(1) as f32;
    let mut sum = 0.0f64;
    let grad = pred.zip_map(target, |p, t| 2.0 * (p - t) / count)?;
    for (p, t) in pred.data().iter().zip(target.data()) {
        let d = f64::from(p - t);
        sum += d * d;
    }
    Ok((sum / f64::from(count), grad))
}

/// L1 restricted to positions where `mask` is true; mean over masked count.
pub fn masked_l1_loss(
    pred: &Tensor,
    target: &Tensor,
    mask: &[bool],
) -> Result<(f64, Tensor, usize)> {
    check(pred, target)?;
    if mask.len() != pred.len() {
        shape_err!(
            "mask length {} does not match tensor length {}",
            mask.len(),
            pred.len()
        );
    }
    let count = mask.iter().filter(|&&m| m).count();
    let denom = count.max(1) as f32;
    let mut grad = Tensor::zeros(pred.shape());
    let mut sum = 0.0f64;
    for (i, &m) in mask.iter().enumerate() {
        if m {
            let d = pred.data()[i] - target.data()[i];
            sum += f64::from(d.abs());
            grad.data_mut()[i] = sign(d) / denom;
        }
    }
    Ok((sum / f64::from(denom), grad, count))
}
