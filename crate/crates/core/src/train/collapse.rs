use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::nn::FeatureMap;
use crate::scalar::Scalar;

/// Spread of a batch of feature maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseStats {
    /// Per-channel standard deviation over every position of every map.
    pub std: Vec<f64>,
    /// Mean cosine similarity over all pairs of flattened maps.
    pub cosine_mean: f64,
}

impl CollapseStats {
    pub fn std_min(&self) -> f64 {
        self.std.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn std_mean(&self) -> f64 {
        self.std.iter().sum::<f64>() / self.std.len() as f64
    }
}

pub fn collapse_stats<T: Scalar>(features: &[FeatureMap<T>]) -> Result<CollapseStats> {
    ensure!(features.len() >= 2, InvalidInput, "collapse statistics need a batch of at least 2");
    let shape = features[0].shape();
    ensure!(
        features.iter().all(|f| f.shape() == shape),
        InvalidInput,
        "feature maps in the batch differ in shape"
    );
    let d = shape.2;
    let mut sum = vec![0.0; d];
    let mut sq = vec![0.0; d];
    let mut n = 0usize;
    for f in features {
        for row in f.data.chunks(d) {
            for (c, v) in row.iter().enumerate() {
                let v = v.f64();
                sum[c] += v;
                sq[c] += v * v;
            }
            n += 1;
        }
    }
    let std = sum
        .iter()
        .zip(&sq)
        .map(|(s, q)| {
            let mean = s / n as f64;
            (q / n as f64 - mean * mean).max(0.0).sqrt()
        })
        .collect();

    let norms: Vec<f64> = features
        .iter()
        .map(|f| f.data.iter().map(|v| v.f64() * v.f64()).sum::<f64>().sqrt())
        .collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..features.len() {
        for j in i + 1..features.len() {
            let dot: f64 = features[i]
                .data
                .iter()
                .zip(&features[j].data)
                .map(|(a, b)| a.f64() * b.f64())
                .sum();
            let denom = norms[i] * norms[j];
            total += if denom > 0.0 { dot / denom } else { 0.0 };
            pairs += 1;
        }
    }
    Ok(CollapseStats {
        std,
        cosine_mean: total / pairs as f64,
    })
}
