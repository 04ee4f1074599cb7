use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{compute_map, Confusion};
use crate::error::{ensure, Error, Result};
use crate::nn::{Checkpoint, Detection, PeprModel, Task};
use crate::parallel::map_indexed;
use crate::synth::{load_split, DataSource, Domain, Manifest, Sample, Split};

/// Score floor and cap applied when decoding boxes for evaluation.
pub const EVAL_SCORE_THRESHOLD: f64 = 0.01;
pub const EVAL_MAX_DETECTIONS: usize = 100;

/// Anything that maps an RGB sample to a task prediction.
pub trait RgbPredictor: Sync {
    fn task(&self) -> Task;
    fn num_classes(&self) -> usize;
    fn segment(&self, sample: &Sample) -> Result<Vec<u8>>;
    fn detect(&self, sample: &Sample) -> Result<Vec<Detection>>;
}

impl RgbPredictor for PeprModel<f32> {
    fn task(&self) -> Task {
        self.task
    }

    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn segment(&self, sample: &Sample) -> Result<Vec<u8>> {
        PeprModel::segment(self, &sample.image::<f32>())
    }

    fn detect(&self, sample: &Sample) -> Result<Vec<Detection>> {
        PeprModel::detect(self, &sample.image::<f32>(), EVAL_SCORE_THRESHOLD, EVAL_MAX_DETECTIONS)
    }
}

/// Loads an inference checkpoint, refusing any that carries event-branch arrays.
pub fn load_inference_model(path: &Path) -> Result<PeprModel<f32>> {
    let ckpt = Checkpoint::<f32>::load(path)?;
    let leaked = ckpt.privileged_arrays();
    if !leaked.is_empty() {
        let shown: Vec<&str> = leaked.iter().take(3).map(String::as_str).collect();
        return Err(Error::PrivilegedLeak(format!(
            "{} holds {} event-branch arrays ({}, ...)",
            path.display(),
            leaked.len(),
            shown.join(", ")
        )));
    }
    ckpt.into_model()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainResult {
    pub domain: Domain,
    pub task: Task,
    pub samples: usize,
    /// mIoU for segmentation, mAP@[.5:.95] for detection.
    pub primary: f64,
    /// Pixel accuracy for segmentation, mAP@.5 for detection.
    pub secondary: f64,
    /// Per-class IoU (segmentation) or per-threshold AP (detection).
    pub breakdown: Vec<Option<f64>>,
}

/// Outcome for one requested domain; a missing split fails only that domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainOutcome {
    Ok(DomainResult),
    Failed { domain: Domain, error: String },
}

impl DomainOutcome {
    pub fn domain(&self) -> Domain {
        match self {
            DomainOutcome::Ok(r) => r.domain,
            DomainOutcome::Failed { domain, .. } => *domain,
        }
    }

    pub fn result(&self) -> Option<&DomainResult> {
        match self {
            DomainOutcome::Ok(r) => Some(r),
            DomainOutcome::Failed { .. } => None,
        }
    }
}

/// Scores a predictor on RGB samples of one domain.
pub fn evaluate_samples(predictor: &dyn RgbPredictor, samples: &[Sample], domain: Domain, workers: usize) -> Result<DomainResult> {
    ensure!(!samples.is_empty(), InvalidInput, "no evaluation samples for domain {domain}");
    let task = predictor.task();
    match task {
        Task::Segmentation => {
            let k = predictor.num_classes();
            let confs = map_indexed(samples.len(), workers, |i| {
                let pred = predictor.segment(&samples[i])?;
                let mut c = Confusion::new(k);
                c.add(&pred, &samples[i].mask)?;
                Ok(c)
            })?
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            let mut total = Confusion::new(k);
            for c in &confs {
                total.merge(c);
            }
            let r = total.result();
            Ok(DomainResult {
                domain,
                task,
                samples: samples.len(),
                primary: r.miou,
                secondary: r.pixel_accuracy,
                breakdown: r.per_class,
            })
        }
        Task::Detection => {
            let dets = map_indexed(samples.len(), workers, |i| predictor.detect(&samples[i]))?
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            let gts: Vec<_> = samples.iter().map(Sample::bboxes).collect();
            let r = compute_map(&dets, &gts)?;
            Ok(DomainResult {
                domain,
                task,
                samples: samples.len(),
                primary: r.map_50_95,
                secondary: r.map_50,
                breakdown: r.per_threshold.into_iter().map(Some).collect(),
            })
        }
    }
}

/// Runs the RGB-only protocol on each requested eval domain. Event files are
/// never requested from `source`.
pub fn evaluate_domains(
    predictor: &dyn RgbPredictor,
    root: &Path,
    manifest: &Manifest,
    domains: &[Domain],
    source: &dyn DataSource,
    workers: usize,
) -> Vec<DomainOutcome> {
    domains
        .iter()
        .map(|&domain| {
            let run = || -> Result<DomainResult> {
                ensure!(
                    manifest.count(Split::Eval, Some(domain)) > 0,
                    InvalidInput,
                    "dataset has no eval split for domain {domain}"
                );
                let samples = load_split(root, manifest, Split::Eval, Some(domain), false, source, workers)?;
                evaluate_samples(predictor, &samples, domain, workers)
            };
            match run() {
                Ok(r) => DomainOutcome::Ok(r),
                Err(e) => DomainOutcome::Failed {
                    domain,
                    error: e.to_string(),
                },
            }
        })
        .collect()
}
