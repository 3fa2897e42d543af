//! Softmax and the three training losses, with their gradients w.r.t. logits.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::math::{self, neg_log_floored, PROB_FLOOR};

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Result<Vec<f64>> {
    if z.is_empty() {
        return Err(Error::Shape {
            what: "logit vector",
            expected: 1,
            got: 0,
        });
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    Ok(softmax_scaled(z, 1.0))
}

/// `softmax(z / t)` evaluated as `exp((z_i - max z) / t)` normalised.
///
/// Shifting before dividing keeps `t = 1` bit-identical to plain softmax and
/// makes the top probability monotone in `t`. Caller guarantees finite input
/// and `t > 0`.
pub(crate) fn softmax_scaled(z: &[f64], t: f64) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|&v| math::exp((v - m) / t)).collect();
    let s: f64 = out.iter().sum();
    for o in &mut out {
        *o /= s;
    }
    out
}

fn check_label(p: &[f64], y: usize) -> Result<()> {
    if y >= p.len() {
        return Err(Error::Input(format!(
            "label {y} out of range for {} classes",
            p.len()
        )));
    }
    Ok(())
}

/// `-ln p_y`, with `p_y` floored at `1e-12`.
pub fn cross_entropy(p: &[f64], y: usize) -> f64 {
    neg_log_floored(p[y])
}

/// Cross-entropy against `1 - eps` on the true class and `eps / (C - 1)` elsewhere.
pub fn label_smoothing(p: &[f64], y: usize, eps: f64) -> Result<f64> {
    check_label(p, y)?;
    LossKind::LabelSmoothing { epsilon: eps }.validate()?;
    if p.len() < 2 {
        return Err(config("label smoothing needs at least two classes"));
    }
    Ok(smoothed_ce(p, y, eps))
}

fn smoothed_ce(p: &[f64], y: usize, eps: f64) -> f64 {
    let off = eps / (p.len() - 1) as f64;
    p.iter()
        .enumerate()
        .map(|(c, &pc)| {
            let q = if c == y { 1.0 - eps } else { off };
            if q == 0.0 {
                0.0
            } else {
                q * neg_log_floored(pc)
            }
        })
        .sum()
}

/// `-alpha (1 - p_y)^gamma ln p_y`.
pub fn focal(p: &[f64], y: usize, alpha: f64, gamma: f64) -> Result<f64> {
    check_label(p, y)?;
    LossKind::Focal { alpha, gamma }.validate()?;
    Ok(focal_unchecked(p[y], alpha, gamma))
}

fn focal_unchecked(py: f64, alpha: f64, gamma: f64) -> f64 {
    alpha * math::powf(1.0 - py, gamma) * neg_log_floored(py)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    LabelSmoothing { epsilon: f64 },
    Focal { alpha: f64, gamma: f64 },
}

impl LossKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LossKind::CrossEntropy => Ok(()),
            LossKind::LabelSmoothing { epsilon } => {
                if !(0.0..1.0).contains(&epsilon) {
                    return Err(config(format!("smoothing {epsilon} outside [0, 1)")));
                }
                Ok(())
            }
            LossKind::Focal { alpha, gamma } => {
                if !(alpha > 0.0 && alpha.is_finite()) {
                    return Err(config(format!("focal alpha {alpha} must be positive")));
                }
                if !(gamma >= 0.0 && gamma.is_finite()) {
                    return Err(config(format!("focal gamma {gamma} must be nonnegative")));
                }
                Ok(())
            }
        }
    }

    /// Loss of one sample given its probability vector.
    pub fn value(&self, p: &[f64], y: usize) -> f64 {
        match *self {
            LossKind::CrossEntropy => cross_entropy(p, y),
            LossKind::LabelSmoothing { epsilon } => smoothed_ce(p, y, epsilon),
            LossKind::Focal { alpha, gamma } => focal_unchecked(p[y], alpha, gamma),
        }
    }

    /// Gradient of [`LossKind::value`] w.r.t. the logits that produced `p`.
    pub fn logit_gradient(&self, p: &[f64], y: usize, grad: &mut [f64]) {
        match *self {
            LossKind::CrossEntropy => {
                for (c, (g, &pc)) in grad.iter_mut().zip(p).enumerate() {
                    *g = pc - if c == y { 1.0 } else { 0.0 };
                }
            }
            LossKind::LabelSmoothing { epsilon } => {
                let off = epsilon / (p.len() - 1) as f64;
                for (c, (g, &pc)) in grad.iter_mut().zip(p).enumerate() {
                    *g = pc - if c == y { 1.0 - epsilon } else { off };
                }
            }
            LossKind::Focal { alpha, gamma } => {
                // dL/dz_k = s * (1[k = y] - p_k), s = alpha (gamma (1-p)^(gamma-1) p ln p - (1-p)^gamma)
                let py = p[y];
                let q = 1.0 - py;
                let log_term = if gamma == 0.0 || q <= 0.0 {
                    0.0
                } else {
                    gamma * math::powf(q, gamma - 1.0) * py * math::ln(py.max(PROB_FLOOR))
                };
                let s = alpha * (log_term - math::powf(q, gamma));
                for (c, (g, &pc)) in grad.iter_mut().zip(p).enumerate() {
                    *g = s * (if c == y { 1.0 } else { 0.0 } - pc);
                }
            }
        }
    }
}
