use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Poly decay after a linear warmup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub power: f64,
    /// Warmup starts at `warmup_ratio * base_lr`.
    pub warmup_ratio: f64,
    /// Explicit warmup length; when absent, `warmup_fraction` of all steps.
    pub warmup_iters: Option<usize>,
    pub warmup_fraction: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            power: 1.0,
            warmup_ratio: 1e-6,
            warmup_iters: None,
            warmup_fraction: 0.05,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.power > 0.0, InvalidConfig, "poly power must be positive, got {}", self.power);
        ensure!(
            (0.0..=1.0).contains(&self.warmup_ratio),
            InvalidConfig,
            "warmup ratio {} outside [0, 1]",
            self.warmup_ratio
        );
        ensure!(
            (0.0..1.0).contains(&self.warmup_fraction),
            InvalidConfig,
            "warmup fraction {} outside [0, 1)",
            self.warmup_fraction
        );
        Ok(())
    }

    pub fn warmup_for(&self, total_steps: usize) -> usize {
        self.warmup_iters
            .unwrap_or_else(|| (self.warmup_fraction * total_steps as f64).round() as usize)
    }
}

/// Learning rate at `step` of `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, base_lr: f64, cfg: &ScheduleConfig) -> Result<f64> {
    cfg.validate()?;
    let warmup = cfg.warmup_for(total_steps);
    ensure!(
        total_steps > warmup,
        InvalidConfig,
        "{total_steps} total steps do not exceed {warmup} warmup steps"
    );
    ensure!(step <= total_steps, InvalidInput, "step {step} beyond {total_steps}");
    if step < warmup {
        let start = cfg.warmup_ratio * base_lr;
        return Ok(start + (base_lr - start) * step as f64 / warmup as f64);
    }
    let progress = (step - warmup) as f64 / (total_steps - warmup) as f64;
    Ok(base_lr * (1.0 - progress).powf(cfg.power))
}
