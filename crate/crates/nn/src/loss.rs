use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::scalar::Scalar;

/// Probabilities entering the cross-entropy are clipped to
/// `[BCE_CLIP, 1 − BCE_CLIP]`.
pub const BCE_CLIP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Bce,
    Mse,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Bce => "bce",
            LossKind::Mse => "mse",
        }
    }
}

fn check<T>(pred: &[T], target: &[T]) -> Result<()> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(NnError::invalid(format!(
            "loss needs equal nonempty lengths, got {} and {}",
            pred.len(),
            target.len()
        )));
    }
    Ok(())
}

fn clip(p: f64) -> f64 {
    p.clamp(BCE_CLIP, 1.0 - BCE_CLIP)
}

/// `−mean[t·ln p + (1−t)·ln(1−p)]` over all elements.
pub fn loss_bce<T: Scalar>(pred: &[T], target: &[T]) -> Result<f64> {
    check(pred, target)?;
    let s: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let (p, t) = (clip(p.as_f64()), t.as_f64());
            t * p.ln() + (1.0 - t) * (1.0 - p).ln()
        })
        .sum();
    Ok(-s / pred.len() as f64)
}

/// Sum of squared differences divided by the element count.
pub fn loss_mse<T: Scalar>(pred: &[T], target: &[T]) -> Result<f64> {
    check(pred, target)?;
    let s: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p.as_f64() - t.as_f64()).powi(2))
        .sum();
    Ok(s / pred.len() as f64)
}

/// Loss value and its gradient with respect to `pred`. The cross-entropy
/// gradient is evaluated at the clipped probability.
pub fn loss_and_grad<T: Scalar>(kind: LossKind, pred: &[T], target: &[T]) -> Result<(f64, Vec<T>)> {
    let n = pred.len() as f64;
    match kind {
        LossKind::Bce => {
            let l = loss_bce(pred, target)?;
            let g = pred
                .iter()
                .zip(target)
                .map(|(p, t)| {
                    let (p, t) = (clip(p.as_f64()), t.as_f64());
                    T::of((p - t) / (p * (1.0 - p)) / n)
                })
                .collect();
            Ok((l, g))
        }
        LossKind::Mse => {
            let l = loss_mse(pred, target)?;
            let g = pred
                .iter()
                .zip(target)
                .map(|(p, t)| T::of(2.0 * (p.as_f64() - t.as_f64()) / n))
                .collect();
            Ok((l, g))
        }
    }
}

pub fn loss<T: Scalar>(kind: LossKind, pred: &[T], target: &[T]) -> Result<f64> {
    match kind {
        LossKind::Bce => loss_bce(pred, target),
        LossKind::Mse => loss_mse(pred, target),
    }
}
