//! Adam with bias correction and global gradient-norm clipping.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;

use crate::array::Array;
use crate::error::{Error, Result};
use crate::math;
use crate::model::Parameters;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global L2 norm the gradient is clipped to; `0` disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Array>,
    pub v: BTreeMap<String, Array>,
}

pub fn grad_norm(grads: &BTreeMap<String, Array>) -> f64 {
    math::sqrt(grads.values().flat_map(|g| g.data().iter()).map(|x| x * x).sum())
}

/// One Adam update. Returns the gradient norm before clipping.
pub fn adam_step(
    params: &mut Parameters,
    grads: &BTreeMap<String, Array>,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<f64> {
    let norm = grad_norm(grads);
    if !norm.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    let clip = if cfg.clip_norm > 0.0 && norm > cfg.clip_norm { cfg.clip_norm / norm } else { 1.0 };
    state.step += 1;
    let t = i32::try_from(state.step).unwrap_or(i32::MAX);
    let bc1 = 1.0 - math::powi(cfg.beta1, t);
    let bc2 = 1.0 - math::powi(cfg.beta2, t);
    for (name, p) in params.map.iter_mut() {
        let g = grads.get(name).ok_or_else(|| Error::InvalidArgument(format!("no gradient for {name}")))?;
        if g.shape() != p.shape() {
            return Err(Error::Shape(format!("gradient for {name} has shape {:?}", g.shape())));
        }
        let m = state.m.entry(name.clone()).or_insert_with(|| Array::zeros(p.shape()));
        let v = state.v.entry(name.clone()).or_insert_with(|| Array::zeros(p.shape()));
        for k in 0..p.numel() {
            let gk = g.data()[k] * clip;
            let mk = cfg.beta1 * m.data()[k] + (1.0 - cfg.beta1) * gk;
            let vk = cfg.beta2 * v.data()[k] + (1.0 - cfg.beta2) * gk * gk;
            m.data_mut()[k] = mk;
            v.data_mut()[k] = vk;
            p.data_mut()[k] -= cfg.lr * (mk / bc1) / (math::sqrt(vk / bc2) + cfg.eps);
        }
    }
    Ok(norm)
}
