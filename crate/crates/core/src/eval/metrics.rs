use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::geometry::BBox;
use crate::nn::Detection;
use crate::objective::IGNORE_LABEL;

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

/// Pixel confusion counts accumulated over a whole split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Confusion {
    num_classes: usize,
    /// `counts[gt * k + pred]`.
    counts: Vec<u64>,
}

impl Confusion {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn add(&mut self, pred: &[u8], gt: &[u8]) -> Result<()> {
        let k = self.num_classes;
        ensure!(
            pred.len() == gt.len(),
            InvalidInput,
            "prediction has {} pixels, ground truth {}",
            pred.len(),
            gt.len()
        );
        for (p, g) in pred.iter().zip(gt) {
            if *g == IGNORE_LABEL {
                continue;
            }
            ensure!(
                (*g as usize) < k && (*p as usize) < k,
                InvalidInput,
                "class id outside [0, {k})"
            );
            self.counts[*g as usize * k + *p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Confusion) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn result(&self) -> MiouResult {
        let k = self.num_classes;
        let mut per_class = Vec::with_capacity(k);
        let mut correct = 0u64;
        let mut total = 0u64;
        for c in 0..k {
            let tp = self.counts[c * k + c];
            let gt: u64 = self.counts[c * k..(c + 1) * k].iter().sum();
            let pred: u64 = (0..k).map(|g| self.counts[g * k + c]).sum();
            let union = gt + pred - tp;
            per_class.push((union > 0).then(|| tp as f64 / union as f64));
            correct += tp;
            total += gt;
        }
        let present: Vec<f64> = per_class.iter().flatten().copied().collect();
        MiouResult {
            miou: if present.is_empty() {
                0.0
            } else {
                present.iter().sum::<f64>() / present.len() as f64
            },
            per_class,
            pixel_accuracy: if total > 0 { correct as f64 / total as f64 } else { 0.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiouResult {
    /// `None` for classes absent from both predictions and ground truth.
    pub per_class: Vec<Option<f64>>,
    pub miou: f64,
    pub pixel_accuracy: f64,
}

/// Dataset-level IoU per class and their mean over present classes.
pub fn compute_miou(preds: &[Vec<u8>], gts: &[Vec<u8>], num_classes: usize) -> Result<MiouResult> {
    ensure!(
        preds.len() == gts.len(),
        InvalidInput,
        "{} predicted masks for {} ground-truth masks",
        preds.len(),
        gts.len()
    );
    let mut conf = Confusion::new(num_classes);
    for (p, g) in preds.iter().zip(gts) {
        conf.add(p, g)?;
    }
    Ok(conf.result())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    pub map_50_95: f64,
    pub map_50: f64,
    /// AP at each of the ten thresholds.
    pub per_threshold: Vec<f64>,
}

/// COCO 101-point interpolated AP from ranked true/false positives.
fn interpolated_ap(tp: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(tp.len());
    let mut recall = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (i, t) in tp.iter().enumerate() {
        if *t {
            hits += 1;
        }
        precision.push(hits as f64 / (i + 1) as f64);
        recall.push(hits as f64 / num_gt as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut sum = 0.0;
    for r in 0..=100 {
        let r = r as f64 / 100.0;
        let idx = recall.partition_point(|v| *v < r);
        if idx < precision.len() {
            sum += precision[idx];
        }
    }
    sum / 101.0
}

/// AP at one IoU threshold with greedy matching in global score order.
pub fn average_precision(dets: &[Vec<Detection>], gts: &[Vec<BBox>], threshold: f64) -> f64 {
    let mut ranked: Vec<(usize, usize)> = dets
        .iter()
        .enumerate()
        .flat_map(|(img, ds)| (0..ds.len()).map(move |j| (img, j)))
        .collect();
    // Stable sort keeps image order, then per-image order, among equal scores.
    ranked.sort_by(|a, b| dets[b.0][b.1].score.total_cmp(&dets[a.0][a.1].score));
    let mut matched: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let mut tp = Vec::with_capacity(ranked.len());
    for (img, j) in ranked {
        let d = &dets[img][j].bbox;
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts[img].iter().enumerate() {
            if matched[img][g] {
                continue;
            }
            let iou = d.iou(gt);
            if iou >= threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        match best {
            Some((g, _)) => {
                matched[img][g] = true;
                tp.push(true);
            }
            None => tp.push(false),
        }
    }
    let num_gt = gts.iter().map(Vec::len).sum();
    interpolated_ap(&tp, num_gt)
}

/// mAP averaged over IoU thresholds 0.50:0.05:0.95, and AP at 0.50.
pub fn compute_map(dets: &[Vec<Detection>], gts: &[Vec<BBox>]) -> Result<MapResult> {
    ensure!(
        dets.len() == gts.len(),
        InvalidInput,
        "detections for {} images, ground truth for {}",
        dets.len(),
        gts.len()
    );
    for b in dets.iter().flatten().map(|d| &d.bbox).chain(gts.iter().flatten()) {
        b.validate()?;
    }
    ensure!(
        dets.iter().flatten().all(|d| d.score.is_finite()),
        InvalidInput,
        "detection score is not finite"
    );
    let per_threshold: Vec<f64> = coco_thresholds()
        .into_iter()
        .map(|t| average_precision(dets, gts, t))
        .collect();
    Ok(MapResult {
        map_50_95: per_threshold.iter().sum::<f64>() / per_threshold.len() as f64,
        map_50: per_threshold[0],
        per_threshold,
    })
}
