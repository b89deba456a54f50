use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Scalar};

/// `eta_min + (lr0 - eta_min) * (1 + cos(pi * t / period)) / 2`.
pub fn cosine_lr(t: usize, period: usize, lr0: f64, eta_min: f64) -> f64 {
    let frac = if period == 0 { 0.0 } else { t.min(period) as f64 / period as f64 };
    eta_min + 0.5 * (lr0 - eta_min) * (1.0 + (PI * frac).cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Apply weight decay directly to the weights instead of adding it to
    /// the gradient.
    pub decoupled_weight_decay: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, decoupled_weight_decay: false }
    }
}

/// First and second moments per parameter, in parameter-id order.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = || params.iter().map(|p| vec![T::zero(); p.value.len()]).collect();
        Self { m: zeros(), v: zeros(), t: 0 }
    }
}

/// One bias-corrected Adam update from the accumulated parameter gradients.
pub fn adam_step<T: Scalar>(
    params: &mut ParamStore<T>,
    state: &mut AdamState<T>,
    lr: f64,
    weight_decay: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if state.m.len() != params.len() || params.iter().zip(&state.m).any(|(p, m)| p.value.len() != m.len()) {
        return Err(Error::Dimension("optimizer state does not match the parameter set".into()));
    }
    if let Some(p) = params.iter().find(|p| !p.grad.all_finite()) {
        let bad = p.grad.data().iter().filter(|v| !v.is_finite()).count();
        return Err(Error::NonFinite(format!("gradient of {} has {bad} non-finite entries", p.name)));
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let c1 = T::one() - T::of(cfg.beta1.powi(t));
    let c2 = T::one() - T::of(cfg.beta2.powi(t));
    let (lr, wd, eps) = (T::of(lr), T::of(weight_decay), T::of(cfg.eps));
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let grad = p.grad.data().to_vec();
        let w = p.value.data_mut();
        for i in 0..w.len() {
            let mut g = grad[i];
            if !cfg.decoupled_weight_decay {
                g += wd * w[i];
            }
            m[i] = b1 * m[i] + (T::one() - b1) * g;
            v[i] = b2 * v[i] + (T::one() - b2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            if cfg.decoupled_weight_decay {
                w[i] -= lr * wd * w[i];
            }
            w[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
