use serde::{Deserialize, Serialize};

use crate::geometry::BBox;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub score: f64,
    pub bbox: BBox,
}

/// Turns head outputs into boxes: every cell that is a strict maximum of
/// its 3x3 neighbourhood and scores at least `score_threshold` yields a box
/// centred on the cell centre in image space.
pub fn decode_detections<T: Scalar>(
    heatmap: &[T],
    sizes: &[T],
    grid_h: usize,
    grid_w: usize,
    stride: usize,
    score_threshold: f64,
    max_dets: usize,
) -> Vec<Detection> {
    assert_eq!(heatmap.len(), grid_h * grid_w, "heatmap size");
    assert_eq!(sizes.len(), grid_h * grid_w * 2, "size map size");
    let mut found: Vec<(usize, f64)> = Vec::new();
    for y in 0..grid_h {
        for x in 0..grid_w {
            let v = heatmap[y * grid_w + x].f64();
            if v < score_threshold {
                continue;
            }
            let is_peak = (y.saturating_sub(1)..=(y + 1).min(grid_h - 1)).all(|ny| {
                (x.saturating_sub(1)..=(x + 1).min(grid_w - 1))
                    .all(|nx| (ny == y && nx == x) || heatmap[ny * grid_w + nx].f64() < v)
            });
            if is_peak {
                found.push((y * grid_w + x, v));
            }
        }
    }
    found.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    found.truncate(max_dets);
    found
        .into_iter()
        .map(|(cell, score)| {
            let (y, x) = (cell / grid_w, cell % grid_w);
            let cx = (x as f64 + 0.5) * stride as f64;
            let cy = (y as f64 + 0.5) * stride as f64;
            let w = sizes[cell * 2].f64();
            let h = sizes[cell * 2 + 1].f64();
            Detection {
                score,
                bbox: BBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0),
            }
        })
        .collect()
}
