use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::events::ActivityMap;
use crate::nn::GridPos;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatchSamplerConfig {
    /// Number of patches `M`.
    pub num_patches: usize,
    /// Window side in feature-grid cells.
    pub patch_size: usize,
    /// Fraction of patches drawn from the high-activity pool.
    pub mix_ratio: f64,
    /// Anchors scoring at or above this quantile form the high pool.
    pub high_quantile: f64,
    pub seed: u64,
}

impl Default for PatchSamplerConfig {
    fn default() -> Self {
        Self {
            num_patches: 2,
            patch_size: 4,
            mix_ratio: 0.5,
            high_quantile: 0.7,
            seed: 0,
        }
    }
}

impl PatchSamplerConfig {
    pub fn validate(&self, grid_h: usize, grid_w: usize) -> Result<()> {
        ensure!(self.num_patches >= 1, InvalidConfig, "need at least one patch");
        ensure!(
            self.patch_size >= 1 && self.patch_size <= grid_h.min(grid_w),
            InvalidConfig,
            "patch size {} does not fit the {grid_h}x{grid_w} grid",
            self.patch_size
        );
        ensure!(
            (0.0..=1.0).contains(&self.mix_ratio),
            InvalidConfig,
            "mix ratio {} outside [0, 1]",
            self.mix_ratio
        );
        ensure!(
            self.high_quantile > 0.0 && self.high_quantile < 1.0,
            InvalidConfig,
            "high quantile {} outside (0, 1)",
            self.high_quantile
        );
        let anchors = (grid_h - self.patch_size + 1) * (grid_w - self.patch_size + 1);
        ensure!(
            self.num_patches <= anchors,
            InvalidConfig,
            "{} patches requested but only {anchors} anchors exist",
            self.num_patches
        );
        Ok(())
    }

    /// Number of patches allotted to the high-activity pool, `ceil(rho * M)`.
    pub fn high_count(&self) -> usize {
        ((self.mix_ratio * self.num_patches as f64) - 1e-9).ceil().max(0.0) as usize
    }
}

/// Drawn anchors and how the draw was split between pools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSample {
    pub locations: Vec<GridPos>,
    pub requested_high: usize,
    pub from_high: usize,
    pub from_low: usize,
    /// Anchors that belonged to neither pool, used only when both ran dry.
    pub from_other: usize,
}

impl PatchSample {
    /// True when the split differs from the requested allocation.
    pub fn imbalanced(&self) -> bool {
        self.from_high != self.requested_high || self.from_other > 0
    }
}

/// Block-sums the activity map onto the feature grid.
pub fn pool_activity(activity: &ActivityMap, grid_h: usize, grid_w: usize) -> Result<Vec<u64>> {
    let res = activity.resolution;
    ensure!(
        grid_h > 0
            && grid_w > 0
            && res.height % grid_h == 0
            && res.width % grid_w == 0
            && res.height / grid_h == res.width / grid_w,
        InvalidInput,
        "activity map {}x{} does not tile onto a {grid_h}x{grid_w} grid",
        res.height,
        res.width
    );
    let stride = res.height / grid_h;
    let mut pooled = vec![0u64; grid_h * grid_w];
    for y in 0..res.height {
        for x in 0..res.width {
            pooled[(y / stride) * grid_w + x / stride] += activity.at(y, x) as u64;
        }
    }
    Ok(pooled)
}

/// Summed pooled activity of every `size x size` window (anchor stride 1),
/// row-major over anchors.
pub fn anchor_scores(pooled: &[u64], grid_h: usize, grid_w: usize, size: usize) -> Vec<(GridPos, u64)> {
    let mut out = Vec::new();
    for ay in 0..=grid_h - size {
        for ax in 0..=grid_w - size {
            let mut s = 0;
            for y in ay..ay + size {
                for x in ax..ax + size {
                    s += pooled[y * grid_w + x];
                }
            }
            out.push((GridPos::new(ay, ax), s));
        }
    }
    out
}

/// Linearly interpolated quantile of unsorted values.
pub fn quantile(values: &[u64], q: f64) -> f64 {
    let mut v: Vec<u64> = values.to_vec();
    v.sort_unstable();
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] as f64 + (pos - lo as f64) * (v[hi] as f64 - v[lo] as f64)
}

/// Draws `M` patch anchors mixing high- and low-activity regions.
///
/// The high pool holds non-zero anchors scoring at least the
/// `high_quantile` of all anchor scores. The low pool holds zero-score
/// anchors, or when there are none, anchors at or below the
/// `1 - high_quantile` quantile. `ceil(rho * M)` anchors come from the high
/// pool and the rest from the low pool; a short pool is topped up from the
/// other one, then from unclassified anchors.
pub fn sample_patch_locations(
    activity: &ActivityMap,
    grid_h: usize,
    grid_w: usize,
    cfg: &PatchSamplerConfig,
) -> Result<PatchSample> {
    cfg.validate(grid_h, grid_w)?;
    let pooled = pool_activity(activity, grid_h, grid_w)?;
    let scored = anchor_scores(&pooled, grid_h, grid_w, cfg.patch_size);
    let scores: Vec<u64> = scored.iter().map(|(_, s)| *s).collect();

    let hi_cut = quantile(&scores, cfg.high_quantile);
    let high: Vec<usize> = (0..scored.len())
        .filter(|&i| scores[i] > 0 && scores[i] as f64 >= hi_cut)
        .collect();
    let zeros: Vec<usize> = (0..scored.len()).filter(|&i| scores[i] == 0).collect();
    let low: Vec<usize> = if !zeros.is_empty() {
        zeros
    } else {
        let lo_cut = quantile(&scores, 1.0 - cfg.high_quantile);
        (0..scored.len())
            .filter(|&i| scores[i] as f64 <= lo_cut && !high.contains(&i))
            .collect()
    };
    let other: Vec<usize> = (0..scored.len())
        .filter(|i| !high.contains(i) && !low.contains(i))
        .collect();

    let m = cfg.num_patches;
    let requested_high = cfg.high_count();
    let mut take_high = requested_high.min(high.len());
    let mut take_low = (m - requested_high).min(low.len());
    let mut rest = m - take_high - take_low;
    let extra = rest.min(low.len() - take_low);
    take_low += extra;
    rest -= extra;
    let extra = rest.min(high.len() - take_high);
    take_high += extra;
    rest -= extra;
    let take_other = rest;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut locations = Vec::with_capacity(m);
    for (pool, n) in [(&high, take_high), (&low, take_low), (&other, take_other)] {
        for i in index::sample(&mut rng, pool.len(), n).into_iter() {
            locations.push(scored[pool[i]].0);
        }
    }
    Ok(PatchSample {
        locations,
        requested_high,
        from_high: take_high,
        from_low: take_low,
        from_other: take_other,
    })
}
