//! SmoothL1 (Huber-style) loss.

use crate::error::{Error, Result};

pub const DEFAULT_BETA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub beta: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self { beta: DEFAULT_BETA }
    }
}

fn check(pred: &[f64], target: &[f64], beta: f64) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "prediction has {} samples, target {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidDimension("empty loss input".into()));
    }
    if !(beta > 0.0) {
        return Err(Error::InvalidParameter(format!("beta {beta} must be positive")));
    }
    Ok(())
}

/// Mean of `0.5 d^2 / beta` for `|d| < beta`, else `|d| - 0.5 beta`.
pub fn smooth_l1(pred: &[f64], target: &[f64], beta: f64) -> Result<f64> {
    check(pred, target, beta)?;
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = (p - t).abs();
            if d < beta {
                0.5 * d * d / beta
            } else {
                d - 0.5 * beta
            }
        })
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Gradient of [`smooth_l1`] with respect to `pred`.
pub fn smooth_l1_grad(pred: &[f64], target: &[f64], beta: f64) -> Result<Vec<f64>> {
    check(pred, target, beta)?;
    let scale = 1.0 / pred.len() as f64;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            scale * if d.abs() < beta { d / beta } else { d.signum() }
        })
        .collect())
}
