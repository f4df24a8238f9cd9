//! Segmentation losses with their gradients. Batch losses are the mean of
//! per-example losses.

use super::model::LossKind;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Additive smoothing in the Dice ratio, keeps empty masks finite.
pub const DICE_SMOOTH: f64 = 1e-6;
pub const BCE_CLAMP: f64 = 1e-7;

/// `1 - (2 sum(I * P) + s) / (sum(I) + sum(P) + s)` for one example.
pub fn dice(pred: &[f64], target: &[f64]) -> f64 {
    let inter: f64 = pred.iter().zip(target).map(|(p, t)| p * t).sum();
    let sum: f64 = pred.iter().sum::<f64>() + target.iter().sum::<f64>();
    1.0 - (2.0 * inter + DICE_SMOOTH) / (sum + DICE_SMOOTH)
}

fn dice_grad(pred: &[f64], target: &[f64], scale: f64, out: &mut [f64]) {
    let inter: f64 = pred.iter().zip(target).map(|(p, t)| p * t).sum();
    let den: f64 = pred.iter().sum::<f64>() + target.iter().sum::<f64>() + DICE_SMOOTH;
    let num = 2.0 * inter + DICE_SMOOTH;
    for (o, &t) in out.iter_mut().zip(target) {
        *o = -scale * (2.0 * t * den - num) / (den * den);
    }
}

/// Mean binary cross-entropy with predictions clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce(pred: &[f64], target: &[f64]) -> f64 {
    let n = pred.len() as f64;
    pred.iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / n
}

fn bce_grad(pred: &[f64], target: &[f64], scale: f64, out: &mut [f64]) {
    let n = pred.len() as f64;
    for ((o, &p), &t) in out.iter_mut().zip(pred).zip(target) {
        *o = if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&p) {
            0.0
        } else {
            scale * (-(t / p) + (1.0 - t) / (1.0 - p)) / n
        };
    }
}

/// Batch loss and its gradient with respect to `pred`.
pub fn loss_and_grad(kind: LossKind, pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if !pred.same_shape(target) {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let scale = 1.0 / pred.n as f64;
    let mut grad = Tensor::zeros(pred.n, pred.h, pred.w, pred.c);
    let len = pred.h * pred.w * pred.c;
    let mut total = 0.0;
    for b in 0..pred.n {
        let (p, t) = (pred.item(b), target.item(b));
        let g = &mut grad.data[b * len..(b + 1) * len];
        total += match kind {
            LossKind::Dice => {
                dice_grad(p, t, scale, g);
                dice(p, t)
            }
            LossKind::Bce => {
                bce_grad(p, t, scale, g);
                bce(p, t)
            }
        };
    }
    Ok((total * scale, grad))
}

/// Batch loss only.
pub fn loss(kind: LossKind, pred: &Tensor, target: &Tensor) -> Result<f64> {
    loss_and_grad(kind, pred, target).map(|(l, _)| l)
}
