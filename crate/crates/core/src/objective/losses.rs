use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::geometry::BBox;
use crate::nn::{FeatureMap, GridPos, Tape};
use crate::scalar::Scalar;

/// Mask value excluded from the segmentation loss and metrics.
pub const IGNORE_LABEL: u8 = 255;

/// Weight of the size term relative to objectness in the detection loss.
pub const SIZE_LOSS_WEIGHT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub task: f64,
    pub feat: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { task: 1.0, feat: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.task >= 0.0 && self.feat >= 0.0 && self.task.is_finite() && self.feat.is_finite(),
            InvalidConfig,
            "loss weights must be finite and non-negative, got ({}, {})",
            self.task,
            self.feat
        );
        ensure!(
            self.task > 0.0 || self.feat > 0.0,
            InvalidConfig,
            "loss weights cannot both be zero"
        );
        Ok(())
    }
}

fn check_windows(features: &FeatureMap<impl Scalar>, locations: &[GridPos], size: usize) -> Result<()> {
    ensure!(size >= 1, InvalidInput, "patch size must be positive");
    for p in locations {
        ensure!(
            p.y + size <= features.height && p.x + size <= features.width,
            InvalidInput,
            "{size}x{size} window at ({}, {}) leaves the {}x{} grid",
            p.y,
            p.x,
            features.height,
            features.width
        );
    }
    Ok(())
}

/// Mean-pools the `size x size` window at each anchor into one vector.
pub fn extract_target_patches<T: Scalar>(
    features: &FeatureMap<T>,
    locations: &[GridPos],
    size: usize,
) -> Result<Vec<Vec<T>>> {
    check_windows(features, locations, size)?;
    if locations.is_empty() {
        return Ok(Vec::new());
    }
    let mut tape = Tape::new();
    let x = tape.leaf(features.data.clone(), features.height * features.width, features.dim);
    let anchors: Vec<(usize, usize)> = locations.iter().map(|p| (p.y, p.x)).collect();
    let out = tape.window_mean(x, features.height, features.width, &anchors, size);
    Ok(tape.value(out).chunks(features.dim).map(<[T]>::to_vec).collect())
}

fn stack<T: Scalar>(rows: &[Vec<T>]) -> Result<(Vec<T>, usize)> {
    let d = rows.first().map_or(0, Vec::len);
    ensure!(
        rows.iter().all(|r| r.len() == d),
        InvalidInput,
        "patch vectors have differing dimensions"
    );
    Ok((rows.concat(), d))
}

/// `(1/M) * sum_m ||pred_m - target_m||^2`.
pub fn predictive_loss<T: Scalar>(targets: &[Vec<T>], predictions: &[Vec<T>]) -> Result<T> {
    ensure!(!targets.is_empty(), InvalidInput, "predictive loss needs M >= 1");
    ensure!(
        targets.len() == predictions.len(),
        InvalidInput,
        "{} targets but {} predictions",
        targets.len(),
        predictions.len()
    );
    let (t, d) = stack(targets)?;
    let (p, dp) = stack(predictions)?;
    ensure!(d == dp, InvalidInput, "target dimension {d} != prediction dimension {dp}");
    let mut tape = Tape::new();
    let tv = tape.leaf(t, targets.len(), d);
    let pv = tape.leaf(p, targets.len(), d);
    let l = tape.patch_squared_error(pv, tv);
    Ok(tape.scalar(l))
}

/// Mean over all coordinates of the squared feature difference.
pub fn l2_alignment_loss<T: Scalar>(rgb: &FeatureMap<T>, event: &FeatureMap<T>) -> Result<T> {
    ensure!(
        rgb.shape() == event.shape(),
        InvalidInput,
        "feature shapes differ: {:?} vs {:?}",
        rgb.shape(),
        event.shape()
    );
    let rows = rgb.height * rgb.width;
    let mut tape = Tape::new();
    let a = tape.leaf(rgb.data.clone(), rows, rgb.dim);
    let b = tape.leaf(event.data.clone(), rows, rgb.dim);
    let l = tape.mean_squared_error(a, b);
    Ok(tape.scalar(l))
}

pub(crate) fn check_mask(mask: &[u8], pixels: usize, num_classes: usize) -> Result<()> {
    ensure!(
        mask.len() == pixels,
        InvalidInput,
        "mask holds {} labels for {pixels} pixels",
        mask.len()
    );
    ensure!(
        mask.iter().all(|&m| m == IGNORE_LABEL || (m as usize) < num_classes),
        InvalidInput,
        "mask label outside [0, {num_classes}) and not {IGNORE_LABEL}"
    );
    ensure!(
        mask.iter().any(|&m| m != IGNORE_LABEL),
        InvalidInput,
        "every pixel is ignored"
    );
    Ok(())
}

/// Mean softmax cross-entropy over non-ignored pixels; `logits` is
/// `pixels x num_classes` row-major.
pub fn seg_task_loss<T: Scalar>(logits: &[T], num_classes: usize, mask: &[u8]) -> Result<T> {
    ensure!(
        num_classes > 0 && logits.len() == mask.len() * num_classes,
        InvalidInput,
        "{} logits for {} pixels x {num_classes} classes",
        logits.len(),
        mask.len()
    );
    check_mask(mask, mask.len(), num_classes)?;
    let mut tape = Tape::new();
    let l = tape.leaf(logits.to_vec(), mask.len(), num_classes);
    let loss = tape.softmax_cross_entropy(l, mask, IGNORE_LABEL);
    Ok(tape.scalar(loss))
}

/// Objectness grid (1 at each box's centre cell) and per-box size targets
/// `(cell, width, height)`.
pub fn detection_targets<T: Scalar>(
    boxes: &[BBox],
    grid_h: usize,
    grid_w: usize,
    stride: usize,
) -> Result<(Vec<T>, Vec<(usize, T, T)>)> {
    let mut obj = vec![T::zero(); grid_h * grid_w];
    let mut sizes = Vec::with_capacity(boxes.len());
    for b in boxes {
        b.validate()?;
        let (cx, cy) = b.center();
        let gx = ((cx / stride as f64).floor().max(0.0) as usize).min(grid_w - 1);
        let gy = ((cy / stride as f64).floor().max(0.0) as usize).min(grid_h - 1);
        let cell = gy * grid_w + gx;
        obj[cell] = T::one();
        sizes.push((cell, T::c(b.width()), T::c(b.height())));
    }
    Ok((obj, sizes))
}

/// Binary cross-entropy of objectness logits against the centre-cell grid
/// (mean over cells) plus 0.1 times the mean absolute size error at the
/// box centres. `sizes` is `cells x 2` (width, height) in pixels.
pub fn det_task_loss<T: Scalar>(
    objectness_logits: &[T],
    sizes: &[T],
    boxes: &[BBox],
    grid_h: usize,
    grid_w: usize,
    stride: usize,
) -> Result<T> {
    let cells = grid_h * grid_w;
    ensure!(
        objectness_logits.len() == cells && sizes.len() == cells * 2,
        InvalidInput,
        "head outputs do not match the {grid_h}x{grid_w} grid"
    );
    let (obj, size_targets) = detection_targets::<T>(boxes, grid_h, grid_w, stride)?;
    let mut tape = Tape::new();
    let l = tape.leaf(objectness_logits.to_vec(), cells, 1);
    let s = tape.leaf(sizes.to_vec(), cells, 2);
    let loss = tape.detection_loss(l, s, &obj, &size_targets, T::c(SIZE_LOSS_WEIGHT));
    Ok(tape.scalar(loss))
}

/// `w.task * task + w.feat * feat`; a non-finite term signals divergence.
pub fn total_loss<T: Scalar>(task: T, feat: T, w: &LossWeights) -> Result<T> {
    if !task.is_finite() || !feat.is_finite() {
        return Err(Error::InvalidInput(format!(
            "non-finite loss term (task {task}, feat {feat})"
        )));
    }
    Ok(T::c(w.task) * task + T::c(w.feat) * feat)
}
