use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Check;
use crate::error::{ensure, Result};
use crate::eval::{coco_thresholds, compute_map, compute_miou};
use crate::geometry::BBox;
use crate::nn::Detection;

/// Finds the greedy matching by enumeration: among all injective partial
/// assignments of detections (in descending score order) to ground-truth
/// boxes with IoU at least `threshold`, the lexicographically best sequence
/// of per-detection keys `(matched, iou)`.
pub fn enumerate_greedy_matches(dets: &[BBox], gts: &[BBox], threshold: f64) -> Vec<Option<usize>> {
    fn go(
        i: usize,
        dets: &[BBox],
        gts: &[BBox],
        t: f64,
        used: &mut Vec<bool>,
        cur: &mut Vec<Option<usize>>,
        best: &mut Option<(Vec<(bool, f64)>, Vec<Option<usize>>)>,
    ) {
        if i == dets.len() {
            let key: Vec<(bool, f64)> = cur
                .iter()
                .enumerate()
                .map(|(d, m)| m.map_or((false, 0.0), |g| (true, dets[d].iou(&gts[g]))))
                .collect();
            let better = match best {
                None => true,
                Some((bk, _)) => {
                    let mut ord = std::cmp::Ordering::Equal;
                    for (a, b) in key.iter().zip(bk.iter()) {
                        ord = a.0.cmp(&b.0).then(a.1.total_cmp(&b.1));
                        if ord != std::cmp::Ordering::Equal {
                            break;
                        }
                    }
                    ord == std::cmp::Ordering::Greater
                }
            };
            if better {
                *best = Some((key, cur.clone()));
            }
            return;
        }
        cur.push(None);
        go(i + 1, dets, gts, t, used, cur, best);
        cur.pop();
        for g in 0..gts.len() {
            if !used[g] && dets[i].iou(&gts[g]) >= t {
                used[g] = true;
                cur.push(Some(g));
                go(i + 1, dets, gts, t, used, cur, best);
                cur.pop();
                used[g] = false;
            }
        }
    }
    let mut best = None;
    go(0, dets, gts, threshold, &mut vec![false; gts.len()], &mut Vec::new(), &mut best);
    best.map(|(_, m)| m).unwrap_or_default()
}

/// 101-point AP from matched flags in global score order, with the
/// precision envelope taken directly as a max over higher recalls.
pub fn oracle_average_precision(matched: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut pr = Vec::new();
    let mut tp = 0;
    for (i, m) in matched.iter().enumerate() {
        tp += *m as usize;
        pr.push((tp as f64 / num_gt as f64, tp as f64 / (i + 1) as f64));
    }
    let mut total = 0.0;
    for k in 0..=100 {
        let r = k as f64 / 100.0;
        total += pr
            .iter()
            .filter(|(rec, _)| *rec >= r)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max);
    }
    total / 101.0
}

fn random_box(rng: &mut ChaCha8Rng) -> BBox {
    let x = rng.random_range(0.0..20.0);
    let y = rng.random_range(0.0..20.0);
    BBox::new(x, y, x + rng.random_range(2.0..12.0), y + rng.random_range(2.0..12.0))
}

fn jitter(rng: &mut ChaCha8Rng, b: &BBox) -> BBox {
    let mut d = || rng.random_range(-2.5..2.5);
    let (x0, y0) = (b.x_min + d(), b.y_min + d());
    BBox::new(x0, y0, (b.x_max + d()).max(x0 + 0.5), (b.y_max + d()).max(y0 + 0.5))
}

fn map_instances(seed: u64) -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let instances = 40;
    for inst in 0..instances {
        let images = rng.random_range(1..4);
        let mut dets = Vec::new();
        let mut gts = Vec::new();
        for _ in 0..images {
            let g: Vec<BBox> = (0..rng.random_range(0..=4)).map(|_| random_box(&mut rng)).collect();
            let mut d: Vec<Detection> = Vec::new();
            for _ in 0..rng.random_range(0..=4) {
                let bbox = if !g.is_empty() && rng.random_bool(0.7) {
                    let j = rng.random_range(0..g.len());
                    jitter(&mut rng, &g[j])
                } else {
                    random_box(&mut rng)
                };
                d.push(Detection {
                    score: rng.random_range(0.0..1.0),
                    bbox,
                });
            }
            gts.push(g);
            dets.push(d);
        }
        let got = compute_map(&dets, &gts)?;
        let num_gt: usize = gts.iter().map(Vec::len).sum();
        for (ti, t) in coco_thresholds().into_iter().enumerate() {
            // Matching is per image; ranking is global.
            let mut flags: Vec<(f64, bool)> = Vec::new();
            for (d, g) in dets.iter().zip(&gts) {
                let mut order: Vec<usize> = (0..d.len()).collect();
                order.sort_by(|a, b| d[*b].score.total_cmp(&d[*a].score));
                let ordered: Vec<BBox> = order.iter().map(|&i| d[i].bbox).collect();
                let m = enumerate_greedy_matches(&ordered, g, t);
                for (k, &i) in order.iter().enumerate() {
                    flags.push((d[i].score, m[k].is_some()));
                }
            }
            flags.sort_by(|a, b| b.0.total_cmp(&a.0));
            let matched: Vec<bool> = flags.iter().map(|f| f.1).collect();
            let want = oracle_average_precision(&matched, num_gt);
            ensure!(
                (got.per_threshold[ti] - want).abs() <= 1e-12,
                InvalidInput,
                "instance {inst} threshold {t:.2}: AP {} vs oracle {want}",
                got.per_threshold[ti]
            );
        }
        ensure!(
            got.map_50 >= got.map_50_95 - 1e-15,
            InvalidInput,
            "instance {inst}: mAP50 {} < mAP50:95 {}",
            got.map_50,
            got.map_50_95
        );
    }
    Ok(format!("{instances} instances, all thresholds"))
}

fn miou_fixtures() -> Result<String> {
    // 2x3 image, hand-counted: class 0 tp 2 fp 1 fn 0, class 1 tp 1 fp 0 fn 1, class 2 tp 1 fp 0 fn 0.
    let gt = vec![vec![0u8, 0, 1, 1, 2, 255]];
    let pred = vec![vec![0u8, 0, 0, 1, 2, 3]];
    let r = compute_miou(&pred, &gt, 4)?;
    let want = [Some(2.0 / 3.0), Some(0.5), Some(1.0), None];
    for (c, w) in want.iter().enumerate() {
        let ok = match (r.per_class[c], w) {
            (Some(a), Some(b)) => (a - b).abs() < 1e-15,
            (None, None) => true,
            _ => false,
        };
        ensure!(ok, InvalidInput, "class {c}: {:?} vs {w:?}", r.per_class[c]);
    }
    let mean = (2.0 / 3.0 + 0.5 + 1.0) / 3.0;
    ensure!((r.miou - mean).abs() < 1e-15, InvalidInput, "mIoU {} vs {mean}", r.miou);
    ensure!((r.pixel_accuracy - 0.8).abs() < 1e-15, InvalidInput, "pixel accuracy {}", r.pixel_accuracy);
    Ok("hand-counted 2x3 fixture".into())
}

pub(super) fn run(seed: u64) -> Vec<Check> {
    vec![
        Check::from_result("mAP vs exhaustive assignment", map_instances(seed)),
        Check::from_result("mIoU fixtures", miou_fixtures()),
    ]
}
