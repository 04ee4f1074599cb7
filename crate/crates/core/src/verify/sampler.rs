use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Check;
use crate::error::{ensure, Result};
use crate::events::{ActivityMap, Resolution};
use crate::objective::{sample_patch_locations, PatchSamplerConfig};

const GRID: usize = 8;
const STRIDE: usize = 16;

/// Activity map whose pooled grid is `grid`, all counts placed on each
/// block's first pixel.
pub(crate) fn map_from_grid(grid: &[u32]) -> Result<ActivityMap> {
    let n = GRID * STRIDE;
    let mut counts = vec![0u32; n * n];
    for gy in 0..GRID {
        for gx in 0..GRID {
            counts[gy * STRIDE * n + gx * STRIDE] = grid[gy * GRID + gx];
        }
    }
    ActivityMap::from_counts(Resolution::new(n, n), counts, (0.0, 1.0))
}

/// Anchor scores and quantiles computed independently of the sampler.
fn classify(grid: &[u32], s: usize, q: f64) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
    let mut scored = Vec::new();
    for ay in 0..=GRID - s {
        for ax in 0..=GRID - s {
            let mut sum = 0u64;
            for y in ay..ay + s {
                for x in ax..ax + s {
                    sum += grid[y * GRID + x] as u64;
                }
            }
            scored.push(((ay, ax), sum));
        }
    }
    let mut sorted: Vec<u64> = scored.iter().map(|(_, v)| *v).collect();
    sorted.sort_unstable();
    let at = |q: f64| {
        let pos = q * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(sorted.len() - 1);
        sorted[lo] as f64 + (pos - lo as f64) * (sorted[hi] as f64 - sorted[lo] as f64)
    };
    let cut = at(q);
    let high: Vec<_> = scored.iter().filter(|(_, v)| *v > 0 && *v as f64 >= cut).map(|(p, _)| *p).collect();
    let low: Vec<_> = scored.iter().filter(|(_, v)| *v == 0).map(|(p, _)| *p).collect();
    (high, low)
}

fn allocation(seed: u64) -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for draw in 0..1000u64 {
        // Left half busy, right half silent: both pools hold many anchors.
        let grid: Vec<u32> = (0..GRID * GRID)
            .map(|i| if i % GRID < GRID / 2 { rng.random_range(1..50) } else { 0 })
            .collect();
        let m = rng.random_range(1..=4);
        let rho = [0.0, 0.25, 0.5, 0.75, 1.0][rng.random_range(0..5)];
        let cfg = PatchSamplerConfig {
            num_patches: m,
            patch_size: 2,
            mix_ratio: rho,
            high_quantile: 0.7,
            seed: draw,
        };
        let (high, low) = classify(&grid, 2, cfg.high_quantile);
        let want_high = (rho * m as f64).ceil() as usize;
        let got = sample_patch_locations(&map_from_grid(&grid)?, GRID, GRID, &cfg)?;
        let n_high = got.locations.iter().filter(|p| high.contains(&(p.y, p.x))).count();
        let n_low = got.locations.iter().filter(|p| low.contains(&(p.y, p.x))).count();
        ensure!(
            n_high == want_high && n_low == m - want_high,
            InvalidInput,
            "draw {draw}: M={m} rho={rho} gave {n_high} high / {n_low} low"
        );
        let mut uniq = got.locations.clone();
        uniq.sort();
        uniq.dedup();
        ensure!(uniq.len() == m, InvalidInput, "draw {draw}: repeated anchor");
    }
    Ok("1000 draws split (ceil(rho M), M - ceil(rho M))".into())
}

fn degenerate() -> Result<String> {
    let cfg = PatchSamplerConfig {
        num_patches: 4,
        patch_size: 2,
        mix_ratio: 0.5,
        high_quantile: 0.7,
        seed: 1,
    };
    let got = sample_patch_locations(&map_from_grid(&[0; GRID * GRID])?, GRID, GRID, &cfg)?;
    ensure!(
        got.locations.len() == 4 && got.from_high == 0 && got.from_low == 4 && got.imbalanced(),
        InvalidInput,
        "all-zero map: {got:?}"
    );
    Ok("4 low anchors, 0 from high recorded".into())
}

pub(super) fn run(seed: u64) -> Vec<Check> {
    vec![
        Check::from_result("allocation over seeded draws", allocation(seed)),
        Check::from_result("all-zero activity", degenerate()),
    ]
}
