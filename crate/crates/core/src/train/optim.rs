use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::nn::ParamStore;
use crate::scalar::Scalar;

/// AdamW hyperparameters; the learning rate comes from the schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub base_lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            base_lr: 2e-3,
            weight_decay: 0.01,
            betas: (0.9, 0.999),
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.base_lr > 0.0 && self.base_lr.is_finite(),
            InvalidConfig,
            "base_lr must be positive, got {}",
            self.base_lr
        );
        ensure!(self.weight_decay >= 0.0, InvalidConfig, "weight decay must be non-negative");
        let (b1, b2) = self.betas;
        ensure!(
            (0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2),
            InvalidConfig,
            "betas ({b1}, {b2}) must lie in [0, 1)"
        );
        ensure!(self.epsilon > 0.0, InvalidConfig, "epsilon must be positive");
        Ok(())
    }
}

/// First and second moment buffers aligned with a parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        Self {
            m: store.zeros_like(),
            v: store.zeros_like(),
            step: 0,
        }
    }
}

/// Outcome of one update attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// A gradient entry was NaN or infinite; nothing was changed.
    SkippedNonFinite,
}

/// One AdamW update with decoupled weight decay on every parameter whose
/// `decay` flag is set.
pub fn optimizer_step<T: Scalar>(
    store: &mut ParamStore<T>,
    grads: &[Vec<T>],
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &OptimizerConfig,
) -> Result<StepOutcome> {
    ensure!(
        grads.len() == store.len() && state.m.len() == store.len() && state.v.len() == store.len(),
        InvalidInput,
        "gradient/state buffers do not match the {} parameters",
        store.len()
    );
    for (p, g) in store.params_mut().iter().zip(grads) {
        ensure!(
            p.data.len() == g.len(),
            InvalidInput,
            "gradient for {} has {} entries, expected {}",
            p.name,
            g.len(),
            p.data.len()
        );
    }
    if grads.iter().flatten().any(|g| !g.is_finite()) {
        return Ok(StepOutcome::SkippedNonFinite);
    }
    state.step += 1;
    let (b1, b2) = cfg.betas;
    let bc1 = 1.0 - b1.powi(state.step as i32);
    let bc2 = 1.0 - b2.powi(state.step as i32);
    let (b1t, b2t) = (T::c(b1), T::c(b2));
    let (one_b1, one_b2) = (T::c(1.0 - b1), T::c(1.0 - b2));
    let (lr_t, eps) = (T::c(lr), T::c(cfg.epsilon));
    let (bc1, bc2) = (T::c(bc1), T::c(bc2));
    let wd = T::c(cfg.weight_decay);
    for (((p, g), m), v) in store
        .params_mut()
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        let decay = if p.decay { wd } else { T::zero() };
        for i in 0..p.data.len() {
            m[i] = b1t * m[i] + one_b1 * g[i];
            v[i] = b2t * v[i] + one_b2 * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            let x = p.data[i];
            p.data[i] = x - lr_t * (m_hat / (v_hat.sqrt() + eps) + decay * x);
        }
    }
    Ok(StepOutcome::Applied)
}
