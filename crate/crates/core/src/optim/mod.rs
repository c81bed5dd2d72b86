//! AdamW with decoupled weight decay and a linear-warmup cosine schedule.

use std::f64::consts::PI;

use thiserror::Error;

use crate::model::{decays, Params};
use crate::numerics::{Element, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("non-finite gradient in {0}; step rejected")]
    NonFinite(String),
    #[error("shape mismatch for {name}: parameter {param:?}, gradient {grad:?}")]
    Shape {
        name: String,
        param: Vec<usize>,
        grad: Vec<usize>,
    },
    #[error("invalid parameter: {0}")]
    Param(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

/// First and second moments laid out like the parameters, plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState<T> {
    pub m: Params<Tensor<T>>,
    pub v: Params<Tensor<T>>,
    pub t: u64,
}

impl<T: Element> AdamWState<T> {
    pub fn zeros_like(params: &Params<Tensor<T>>) -> Self {
        let zeros = params.map(&mut |_, p| Tensor::zeros(p.shape()));
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.m.named().iter().chain(self.v.named().iter()).all(|(_, t)| t.is_finite())
    }
}

/// One AdamW update of a flat slice. `t` is the 1-based step index. Decay
/// uses the pre-update value: `p ← p − lr·(m̂/(√v̂ + eps) + wd·p)`.
#[allow(clippy::too_many_arguments)]
pub fn adamw_update<T: Element>(
    p: &mut [T],
    g: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    lr: f64,
    cfg: &AdamWConfig,
    decay: bool,
) {
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    let wd = if decay { cfg.weight_decay } else { 0.0 };
    for i in 0..p.len() {
        let gi = g[i].as_f64();
        let mi = cfg.beta1 * m[i].as_f64() + (1.0 - cfg.beta1) * gi;
        let vi = cfg.beta2 * v[i].as_f64() + (1.0 - cfg.beta2) * gi * gi;
        let pi = p[i].as_f64();
        let step = (mi / bc1) / ((vi / bc2).sqrt() + cfg.eps) + wd * pi;
        m[i] = T::from_f64_lossy(mi);
        v[i] = T::from_f64_lossy(vi);
        p[i] = T::from_f64_lossy(pi - lr * step);
    }
}

/// Applies one AdamW step to every parameter. Gradients are validated
/// first, so a rejected step leaves parameters and state untouched.
pub fn adamw_step<T: Element>(
    params: &mut Params<Tensor<T>>,
    grads: &Params<Tensor<T>>,
    state: &mut AdamWState<T>,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<(), OptimError> {
    let gs = grads.named();
    {
        let ps = params.named();
        if ps.len() != gs.len() {
            return Err(OptimError::Param(format!(
                "{} parameters but {} gradients",
                ps.len(),
                gs.len()
            )));
        }
        for ((name, p), (_, g)) in ps.iter().zip(&gs) {
            if p.shape() != g.shape() {
                return Err(OptimError::Shape {
                    name: name.clone(),
                    param: p.shape().to_vec(),
                    grad: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(OptimError::NonFinite(name.clone()));
            }
        }
    }
    if !lr.is_finite() || lr < 0.0 {
        return Err(OptimError::Param(format!("learning rate {lr}")));
    }
    state.t += 1;
    let names = params.names();
    let leaves = params
        .leaves_mut()
        .into_iter()
        .zip(state.m.leaves_mut())
        .zip(state.v.leaves_mut());
    for (i, ((p, m), v)) in leaves.enumerate() {
        let decay = decays(&names[i]);
        adamw_update(p.data_mut(), gs[i].1.data(), m.data_mut(), v.data_mut(), state.t, lr, cfg, decay);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleConfig {
    pub base_lr: f64,
    /// Effective batch size used for linear scaling.
    pub batch_size: usize,
    /// Batch size at which `base_lr` applies unscaled.
    pub reference_batch: usize,
    /// When false the peak learning rate is `base_lr` regardless of batch size.
    pub scale_lr: bool,
    pub warmup_epochs: f64,
    pub total_epochs: f64,
    pub min_lr: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            base_lr: 1.5e-4,
            batch_size: 256,
            reference_batch: 256,
            scale_lr: true,
            warmup_epochs: 10.0,
            total_epochs: 400.0,
            min_lr: 0.0,
        }
    }
}

impl ScheduleConfig {
    pub fn peak_lr(&self) -> f64 {
        if self.scale_lr {
            self.base_lr * self.batch_size as f64 / self.reference_batch as f64
        } else {
            self.base_lr
        }
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        if !(self.base_lr >= 0.0 && self.min_lr >= 0.0) {
            return Err(OptimError::Param("learning rates must be nonnegative".into()));
        }
        if self.reference_batch == 0 || self.batch_size == 0 {
            return Err(OptimError::Param("batch sizes must be positive".into()));
        }
        if !(self.total_epochs > 0.0 && self.warmup_epochs >= 0.0 && self.warmup_epochs <= self.total_epochs) {
            return Err(OptimError::Param(format!(
                "need 0 ≤ warmup ({}) ≤ total ({}) epochs, total > 0",
                self.warmup_epochs, self.total_epochs
            )));
        }
        Ok(())
    }
}

/// Linear ramp from 0 to the peak over the warmup steps, then half-cosine
/// decay to `min_lr` at the final step; constant `min_lr` afterwards.
pub fn lr_at(step: u64, steps_per_epoch: u64, cfg: &ScheduleConfig) -> f64 {
    let peak = cfg.peak_lr();
    let warmup = cfg.warmup_epochs * steps_per_epoch as f64;
    let total = cfg.total_epochs * steps_per_epoch as f64;
    let s = step as f64;
    if s < warmup {
        return peak * s / warmup;
    }
    let span = total - warmup;
    let progress = if span > 0.0 { ((s - warmup) / span).min(1.0) } else { 1.0 };
    cfg.min_lr + (peak - cfg.min_lr) * 0.5 * (1.0 + (PI * progress).cos())
}
