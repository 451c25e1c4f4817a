//! Focal loss and its analytic gradients.
//!
//! Binary form: `L(p, y) = -a_t (1 - p_t)^g ln p_t` with `p_t = p` and
//! `a_t = alpha` for `y = 1`, `p_t = 1 - p` and `a_t = 1 - alpha` for `y = 0`.
//! With `p = sigmoid(z)` the derivative with respect to the logit is
//!
//! ```text
//! dL/dz = s * a_t * (g * (1 - p_t)^g * p_t * ln p_t - (1 - p_t)^(g + 1))
//! ```
//!
//! where `s = +1` for `y = 1` and `-1` for `y = 0`. The multiclass form uses
//! softmax probabilities and a per-class weight in place of `a_t`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PROB_EPS: f64 = 1e-7;
pub const LOGIT_CLAMP: f64 = 16.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocalLossConfig {
    pub gamma: f64,
    pub alpha: f64,
}

impl Default for FocalLossConfig {
    fn default() -> Self {
        FocalLossConfig { gamma: 2.0, alpha: 0.75 }
    }
}

impl FocalLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) {
            return Err(Error::Config(format!("focal gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("focal alpha must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Natural logit of a clamped probability, clamped to ±16.
pub fn logit(p: f64) -> f64 {
    let p = clamp_prob(p);
    (p / (1.0 - p)).ln().clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
}

/// `ln(sigmoid(z))` without overflow.
fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

fn alpha_t(y: bool, cfg: &FocalLossConfig) -> f64 {
    if y {
        cfg.alpha
    } else {
        1.0 - cfg.alpha
    }
}

/// Focal loss of a predicted anomaly probability.
pub fn focal_loss(p_hat: f64, y: bool, cfg: &FocalLossConfig) -> f64 {
    let p = clamp_prob(p_hat);
    let p_t = if y { p } else { 1.0 - p };
    -alpha_t(y, cfg) * (1.0 - p_t).powf(cfg.gamma) * p_t.ln()
}

/// Focal loss as a function of the logit, numerically stable for large |z|.
pub fn focal_loss_from_logit(z: f64, y: bool, cfg: &FocalLossConfig) -> f64 {
    let zt = if y { z } else { -z };
    let ln_pt = log_sigmoid(zt);
    let one_minus_pt = sigmoid(-zt);
    -alpha_t(y, cfg) * one_minus_pt.powf(cfg.gamma) * ln_pt
}

/// Analytic dL/dz of [`focal_loss_from_logit`].
pub fn focal_loss_gradient(z: f64, y: bool, cfg: &FocalLossConfig) -> f64 {
    let zt = if y { z } else { -z };
    let p_t = sigmoid(zt);
    let q = sigmoid(-zt);
    let ln_pt = log_sigmoid(zt);
    let focus = if cfg.gamma == 0.0 { 0.0 } else { cfg.gamma * q.powf(cfg.gamma) * p_t * ln_pt };
    let g = alpha_t(y, cfg) * (focus - q.powf(cfg.gamma + 1.0));
    if y {
        g
    } else {
        -g
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Weighted softmax focal loss for true class `y`.
pub fn softmax_focal_loss(logits: &[f64], y: usize, gamma: f64, weight: f64) -> f64 {
    let p = softmax(logits);
    let p_t = p[y].max(f64::MIN_POSITIVE);
    -weight * (1.0 - p_t).powf(gamma) * p_t.ln()
}

/// Gradient of [`softmax_focal_loss`] with respect to every logit, written
/// into `out`.
pub fn softmax_focal_gradient(logits: &[f64], y: usize, gamma: f64, weight: f64, out: &mut [f64]) {
    let p = softmax(logits);
    let p_t = p[y].max(f64::MIN_POSITIVE);
    let q = 1.0 - p_t;
    // dL/dp_t * p_t
    let focus = if gamma == 0.0 { 0.0 } else { gamma * q.powf(gamma - 1.0) * p_t * p_t.ln() };
    let scale = weight * (focus - q.powf(gamma));
    for (j, o) in out.iter_mut().enumerate() {
        let delta = if j == y { 1.0 } else { 0.0 };
        *o = scale * (delta - p[j]);
    }
}
