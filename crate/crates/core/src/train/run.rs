//! The training loop.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::collapse::collapse_stats;
use super::composite::{record_objective, Method, ObjectiveSettings, TaskTarget, TrainItem};
use super::optim::{optimizer_step, AdamState, OptimizerConfig, StepOutcome};
use super::schedule::{lr_at, ScheduleConfig};
use crate::error::{ensure, Error, Result};
use crate::nn::{Checkpoint, FeatureMap, GridPos, Modality, ModelConfig, PeprModel, Tape, Task};
use crate::objective::{sample_patch_locations, LossWeights, PatchSamplerConfig};
use crate::seed::derive_seed_n;
use crate::synth::Sample;

pub const FULL_CHECKPOINT: &str = "full.ckpt";
pub const INFERENCE_CHECKPOINT: &str = "inference.ckpt";
pub const METRICS_FILE: &str = "metrics.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub method: Method,
    pub task: Task,
    pub loss: LossWeights,
    /// Its `seed` is replaced by a per-step, per-sample seed.
    pub sampler: PatchSamplerConfig,
    pub optimizer: OptimizerConfig,
    pub schedule: ScheduleConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Detaches the event-latent targets (collapse experiments only).
    pub stop_gradient: bool,
    /// Records the sampled patch anchors in every log entry.
    pub log_locations: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_task(Task::Segmentation)
    }
}

impl TrainConfig {
    /// Desk-scale defaults for a task.
    pub fn for_task(task: Task) -> Self {
        let (weight_decay, epochs, num_patches) = match task {
            Task::Segmentation => (0.01, 15, 2),
            Task::Detection => (1e-4, 20, 4),
        };
        Self {
            method: Method::Pepr,
            task,
            loss: LossWeights::default(),
            sampler: PatchSamplerConfig {
                num_patches,
                ..Default::default()
            },
            optimizer: OptimizerConfig {
                weight_decay,
                ..Default::default()
            },
            schedule: ScheduleConfig::default(),
            epochs,
            batch_size: 8,
            seed: 0,
            stop_gradient: false,
            log_locations: false,
        }
    }

    /// Weights actually applied: the RGB-only method has no feature term.
    pub fn effective_weights(&self) -> LossWeights {
        match self.method {
            Method::RgbOnly => LossWeights {
                task: self.loss.task,
                feat: 0.0,
            },
            _ => self.loss,
        }
    }

    pub fn steps_per_epoch(&self, n_samples: usize) -> usize {
        n_samples.div_ceil(self.batch_size.max(1))
    }

    pub fn total_steps(&self, n_samples: usize) -> usize {
        self.epochs * self.steps_per_epoch(n_samples)
    }

    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        model.validate()?;
        self.effective_weights().validate()?;
        self.optimizer.validate()?;
        self.schedule.validate()?;
        ensure!(self.epochs >= 1, InvalidConfig, "epochs must be at least 1");
        ensure!(self.batch_size >= 1, InvalidConfig, "batch size must be at least 1");
        if self.method == Method::Pepr {
            self.sampler.validate(model.grid_height(), model.grid_width())?;
        }
        Ok(())
    }
}

/// One line of the metric log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss_task: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub loss_feat: Option<f64>,
    pub loss_total: f64,
    /// Smallest per-channel std of the batch's event features (RGB
    /// features for the RGB-only method).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub feat_std_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub feat_std_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cosine_mean: Option<f64>,
    /// True when a non-finite gradient aborted the update.
    #[serde(default)]
    pub skipped: bool,
    /// Samples whose patch draw could not follow the high/low allocation.
    #[serde(default)]
    pub imbalanced_draws: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub locations: Option<Vec<Vec<GridPos>>>,
}

pub struct TrainRun {
    pub config: TrainConfig,
    pub model: PeprModel<f32>,
    pub log: Vec<StepRecord>,
    pub wall_seconds: f64,
}

impl TrainRun {
    /// SHA-256 of the full checkpoint bytes.
    pub fn checksum(&self) -> String {
        params_checksum(&self.model)
    }

    /// Writes `full.ckpt` and `inference.ckpt` into `dir`.
    pub fn save_checkpoints(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Checkpoint::full(&self.model).save(&dir.join(FULL_CHECKPOINT))?;
        Checkpoint::inference(&self.model).save(&dir.join(INFERENCE_CHECKPOINT))
    }
}

pub fn params_checksum(model: &PeprModel<f32>) -> String {
    let bytes = Checkpoint::full(model).to_bytes();
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Appends records as JSON lines.
pub fn write_metrics(out: &mut impl Write, records: &[StepRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn check_samples(samples: &[Sample], model: &ModelConfig, cfg: &TrainConfig) -> Result<()> {
    ensure!(!samples.is_empty(), InvalidInput, "training split is empty");
    for s in samples {
        ensure!(
            s.resolution.height == model.image_height && s.resolution.width == model.image_width,
            InvalidInput,
            "sample {} is {}x{}, the model expects {}x{}",
            s.entry.dir,
            s.resolution.height,
            s.resolution.width,
            model.image_height,
            model.image_width
        );
        if cfg.method.uses_events() && s.events.is_none() {
            return Err(Error::MissingModality(format!(
                "{} needs events but sample {} has none",
                cfg.method, s.entry.dir
            )));
        }
    }
    Ok(())
}

/// Trains a freshly initialized model on `samples`. `observer` sees each
/// log record as soon as its step finishes. A non-finite loss ends the
/// run with [`Error::Divergence`].
pub fn train_run(
    samples: &[Sample],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&StepRecord),
) -> Result<TrainRun> {
    cfg.validate(model_cfg)?;
    check_samples(samples, model_cfg, cfg)?;
    let start = Instant::now();
    let mut model = PeprModel::<f32>::new(model_cfg.clone(), cfg.task, cfg.method.components(), cfg.seed)?;
    let mut state = AdamState::new(&model.store);
    let images: Vec<Vec<f32>> = samples.iter().map(|s| s.image::<f32>()).collect();
    let boxes: Vec<Vec<crate::geometry::BBox>> = samples.iter().map(|s| s.bboxes()).collect();
    let settings = ObjectiveSettings {
        method: cfg.method,
        weights: cfg.effective_weights(),
        patch_size: cfg.sampler.patch_size,
        stop_gradient: cfg.stop_gradient,
    };
    let (gh, gw, d) = (model_cfg.grid_height(), model_cfg.grid_width(), model_cfg.feature_dim);
    let total = cfg.total_steps(samples.len());
    let mut log = Vec::with_capacity(total);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed_n(cfg.seed, "order", &[epoch as u64])));
        for batch in order.chunks(cfg.batch_size) {
            let lr = lr_at(step, total, cfg.optimizer.base_lr, &cfg.schedule)?;
            let mut grads = model.store.zeros_like();
            let (mut task_sum, mut feat_sum, mut total_sum) = (0.0, 0.0, 0.0);
            let mut features = Vec::with_capacity(batch.len());
            let mut locations_log = Vec::new();
            let mut imbalanced = 0;
            for (bi, &idx) in batch.iter().enumerate() {
                let sample = &samples[idx];
                let locations = if cfg.method == Method::Pepr {
                    let events = sample.events.as_ref().expect("checked above");
                    let sampler = PatchSamplerConfig {
                        seed: derive_seed_n(cfg.seed, "patches", &[step as u64, bi as u64]),
                        ..cfg.sampler.clone()
                    };
                    let draw = sample_patch_locations(&events.activity, gh, gw, &sampler)?;
                    if draw.imbalanced() {
                        imbalanced += 1;
                    }
                    draw.locations
                } else {
                    Vec::new()
                };
                let target = match cfg.task {
                    Task::Segmentation => TaskTarget::Mask(&sample.mask),
                    Task::Detection => TaskTarget::Boxes(&boxes[idx]),
                };
                let item = TrainItem {
                    image: &images[idx],
                    surface: sample.events.as_ref().map(|e| &e.time_surface),
                    target,
                };
                let mut tape = Tape::new();
                let vars = record_objective(&mut tape, &model, &item, &settings, &locations)?;
                let loss = tape.scalar(vars.total) as f64;
                if !loss.is_finite() {
                    let rec = StepRecord {
                        step,
                        epoch,
                        lr,
                        loss_task: tape.scalar(vars.task) as f64,
                        loss_feat: vars.feat.map(|f| tape.scalar(f) as f64),
                        loss_total: loss,
                        feat_std_min: None,
                        feat_std_mean: None,
                        cosine_mean: None,
                        skipped: true,
                        imbalanced_draws: imbalanced,
                        locations: None,
                    };
                    observer(&rec);
                    return Err(Error::Divergence {
                        step,
                        detail: format!("non-finite loss {loss} on sample {}", sample.entry.dir),
                    });
                }
                task_sum += tape.scalar(vars.task) as f64;
                feat_sum += vars.feat.map_or(0.0, |f| tape.scalar(f) as f64);
                total_sum += loss;
                let (fv, modality) = match vars.event_features {
                    Some(v) => (v, Modality::Event),
                    None => (vars.rgb_features, Modality::Rgb),
                };
                features.push(FeatureMap::new(gh, gw, d, tape.value(fv).to_vec(), modality)?);
                if cfg.log_locations {
                    locations_log.push(locations.clone());
                }
                tape.backward(vars.total).accumulate_into(&mut grads);
            }
            let inv = 1.0 / batch.len() as f32;
            for g in grads.iter_mut().flatten() {
                *g *= inv;
            }
            let outcome = optimizer_step(&mut model.store, &grads, &mut state, lr, &cfg.optimizer)?;
            let stats = (features.len() >= 2).then(|| collapse_stats(&features)).transpose()?;
            let n = batch.len() as f64;
            let rec = StepRecord {
                step,
                epoch,
                lr,
                loss_task: task_sum / n,
                loss_feat: cfg.method.uses_events().then_some(feat_sum / n),
                loss_total: total_sum / n,
                feat_std_min: stats.as_ref().map(|s| s.std_min()),
                feat_std_mean: stats.as_ref().map(|s| s.std_mean()),
                cosine_mean: stats.as_ref().map(|s| s.cosine_mean),
                skipped: outcome == StepOutcome::SkippedNonFinite,
                imbalanced_draws: imbalanced,
                locations: cfg.log_locations.then_some(locations_log),
            };
            if rec.skipped {
                log::warn!("step {step}: non-finite gradient, update skipped");
            }
            observer(&rec);
            log.push(rec);
            step += 1;
        }
    }
    Ok(TrainRun {
        config: cfg.clone(),
        model,
        log,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}
