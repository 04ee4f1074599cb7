use pepr_core::eval::*;
use pepr_core::geometry::BBox;
use pepr_core::nn::{Detection, Task};
use pepr_core::synth::Domain;
use pepr_core::train::Method;
use proptest::prelude::*;

fn iou(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let h = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = w * h;
    let union = (a.x_max - a.x_min) * (a.y_max - a.y_min) + (b.x_max - b.x_min) * (b.y_max - b.y_min) - inter;
    if union > 0.0 { inter / union } else { 0.0 }
}

/// Straightforward AP: greedy matching in descending score order, then the
/// 101-point interpolation with the envelope taken by brute force.
fn oracle_ap(dets: &[Vec<Detection>], gts: &[Vec<BBox>], t: f64) -> f64 {
    let mut flat = Vec::new();
    for (img, ds) in dets.iter().enumerate() {
        for d in ds {
            flat.push((img, d.clone()));
        }
    }
    let mut order: Vec<usize> = (0..flat.len()).collect();
    order.sort_by(|&a, &b| flat[b].1.score.partial_cmp(&flat[a].1.score).unwrap().then(a.cmp(&b)));
    let mut used: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let mut tp = Vec::new();
    for i in order {
        let (img, d) = &flat[i];
        let mut pick = None;
        let mut best = -1.0;
        for (g, gt) in gts[*img].iter().enumerate() {
            let v = iou(&d.bbox, gt);
            if !used[*img][g] && v >= t && v > best {
                best = v;
                pick = Some(g);
            }
        }
        if let Some(g) = pick {
            used[*img][g] = true;
        }
        tp.push(pick.is_some());
    }
    let n_gt: usize = gts.iter().map(Vec::len).sum();
    if n_gt == 0 {
        return 0.0;
    }
    let mut prec = Vec::new();
    let mut rec = Vec::new();
    let mut hits = 0;
    for (k, hit) in tp.iter().enumerate() {
        hits += *hit as usize;
        prec.push(hits as f64 / (k + 1) as f64);
        rec.push(hits as f64 / n_gt as f64);
    }
    (0..=100)
        .map(|r| {
            let r = r as f64 / 100.0;
            (0..prec.len()).filter(|&k| rec[k] >= r).map(|k| prec[k]).fold(0.0, f64::max)
        })
        .sum::<f64>()
        / 101.0
}

fn arb_box() -> impl Strategy<Value = BBox> {
    (0u8..12, 0u8..12, 1u8..6, 1u8..6).prop_map(|(x, y, w, h)| {
        BBox::new(x as f64, y as f64, (x + w) as f64, (y + h) as f64)
    })
}

fn arb_image() -> impl Strategy<Value = (Vec<Detection>, Vec<BBox>)> {
    (
        prop::collection::vec((arb_box(), 0u8..20), 0..6),
        prop::collection::vec(arb_box(), 0..4),
    )
        .prop_map(|(d, g)| {
            let dets = d.into_iter().map(|(bbox, s)| Detection { score: s as f64 / 20.0, bbox }).collect();
            (dets, g)
        })
}

fn split(images: Vec<(Vec<Detection>, Vec<BBox>)>) -> (Vec<Vec<Detection>>, Vec<Vec<BBox>>) {
    images.into_iter().unzip()
}

fn seg_run(label: &str, method: Method, seed: u64, values: &[(Domain, f64)]) -> RunResult {
    RunResult {
        label: label.into(),
        method,
        seed,
        task: Task::Segmentation,
        settings: vec![],
        domains: values
            .iter()
            .map(|&(domain, v)| {
                DomainOutcome::Ok(DomainResult {
                    domain,
                    task: Task::Segmentation,
                    samples: 1,
                    primary: v,
                    secondary: v,
                    breakdown: vec![],
                })
            })
            .collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn ap_matches_oracle(images in prop::collection::vec(arb_image(), 1..4)) {
        let (dets, gts) = split(images);
        let r = compute_map(&dets, &gts).unwrap();
        for (i, t) in coco_thresholds().into_iter().enumerate() {
            let want = oracle_ap(&dets, &gts, t);
            prop_assert!((r.per_threshold[i] - want).abs() < 1e-12, "t={} got {} want {}", t, r.per_threshold[i], want);
        }
    }

    #[test]
    fn map_ignores_monotone_score_transforms(images in prop::collection::vec(arb_image(), 1..4)) {
        let (dets, gts) = split(images);
        let moved: Vec<Vec<Detection>> = dets
            .iter()
            .map(|ds| ds.iter().map(|d| Detection { score: (3.0 * d.score).exp() - 7.0, bbox: d.bbox }).collect())
            .collect();
        prop_assert_eq!(compute_map(&dets, &gts).unwrap(), compute_map(&moved, &gts).unwrap());
    }

    #[test]
    fn map50_bounds_map50_95(images in prop::collection::vec(arb_image(), 1..4)) {
        let (dets, gts) = split(images);
        let r = compute_map(&dets, &gts).unwrap();
        prop_assert!(r.map_50 + 1e-12 >= r.map_50_95);
        prop_assert!((0.0..=1.0).contains(&r.map_50_95));
    }

    #[test]
    fn miou_ignores_pixel_and_label_permutations(
        pairs in prop::collection::vec((0u8..4, prop_oneof![0u8..4, Just(255u8)]), 1..60),
        shuffle_seed in any::<u64>(),
        relabel in Just([0u8, 1, 2, 3]).prop_shuffle(),
    ) {
        prop_assume!(pairs.iter().any(|p| p.1 != 255));
        let (pred, gt): (Vec<u8>, Vec<u8>) = pairs.iter().copied().unzip();
        let base = compute_miou(&[pred.clone()], &[gt.clone()], 4).unwrap();

        let mut idx: Vec<usize> = (0..pairs.len()).collect();
        let mut s = shuffle_seed;
        for i in (1..idx.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            idx.swap(i, (s >> 33) as usize % (i + 1));
        }
        let half = idx.len() / 2;
        let take = |v: &[u8], r: &[usize]| r.iter().map(|&i| v[i]).collect::<Vec<u8>>();
        let shuffled = compute_miou(
            &[take(&pred, &idx[..half]), take(&pred, &idx[half..])],
            &[take(&gt, &idx[..half]), take(&gt, &idx[half..])],
            4,
        ).unwrap();
        prop_assert!((shuffled.miou - base.miou).abs() < 1e-12);

        let map = |v: &[u8]| v.iter().map(|&c| if c == 255 { 255 } else { relabel[c as usize] }).collect::<Vec<u8>>();
        let renamed = compute_miou(&[map(&pred)], &[map(&gt)], 4).unwrap();
        prop_assert!((renamed.miou - base.miou).abs() < 1e-12);
        for c in 0..4 {
            prop_assert_eq!(renamed.per_class[relabel[c] as usize], base.per_class[c]);
        }
    }

    #[test]
    fn markdown_deltas_agree_with_values(
        rgb in prop::collection::vec(0.0f64..1.0, 3),
        other in prop::collection::vec(0.0f64..1.0, 3),
    ) {
        let mut runs = Vec::new();
        for (seed, (a, b)) in rgb.iter().zip(&other).enumerate() {
            runs.push(seg_run("rgb_only", Method::RgbOnly, seed as u64, &[(Domain::Day, *a), (Domain::Night, *a / 2.0)]));
            runs.push(seg_run("pepr", Method::Pepr, seed as u64, &[(Domain::Day, *b), (Domain::Night, *b / 3.0)]));
        }
        let report = build_report(&runs).unwrap();
        let md = render_markdown(&report);
        let pepr_line = md.lines().find(|l| l.starts_with("| pepr")).unwrap();
        let rgb_line = md.lines().find(|l| l.starts_with("| rgb_only")).unwrap();
        let cells = |l: &str| l.split('|').map(str::trim).filter(|s| !s.is_empty()).skip(3).map(String::from).collect::<Vec<_>>();
        for (p, r) in cells(pepr_line).iter().zip(cells(rgb_line)) {
            let (v, d) = p.split_once(" (").unwrap();
            let v: f64 = v.parse().unwrap();
            let d: f64 = d.trim_end_matches(')').parse().unwrap();
            let r: f64 = r.parse().unwrap();
            prop_assert!((v - r - d).abs() <= 0.01 + 1e-9, "{} - {} vs {}", v, r, d);
        }
        let json = report_json(&report);
        let back: Report = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(render_csv(&back), render_csv(&report));
    }
}

#[test]
fn ap_hand_cases() {
    let g = BBox::new(0.0, 0.0, 10.0, 10.0);
    let hit = Detection { score: 0.9, bbox: g };
    let miss = Detection { score: 0.95, bbox: BBox::new(50.0, 50.0, 60.0, 60.0) };
    let r = compute_map(&[vec![hit.clone()]], &[vec![g]]).unwrap();
    assert_eq!(r.map_50_95, 1.0);
    // A higher-scoring false positive caps precision at recall 1 to 1/2.
    let r = compute_map(&[vec![miss, hit]], &[vec![g]]).unwrap();
    assert!((r.map_50 - 0.5).abs() < 1e-12);
    let r = compute_map(&[vec![]], &[vec![g]]).unwrap();
    assert_eq!(r.map_50_95, 0.0);
}

#[test]
fn miou_skips_absent_classes() {
    let r = compute_miou(&[vec![0, 0, 1, 1]], &[vec![0, 0, 1, 0]], 4).unwrap();
    assert_eq!(r.per_class[2], None);
    assert_eq!(r.per_class[3], None);
    let want = (2.0 / 3.0 + 1.0 / 2.0) / 2.0;
    assert!((r.miou - want).abs() < 1e-12);
    assert_eq!(r.pixel_accuracy, 0.75);
    assert!(compute_miou(&[vec![4]], &[vec![0]], 4).is_err());
}

#[test]
fn report_orders_domains_and_rows() {
    let runs = vec![
        seg_run("pepr", Method::Pepr, 0, &[(Domain::Night, 0.3), (Domain::Day, 0.8)]),
        seg_run("rgb_only", Method::RgbOnly, 0, &[(Domain::Night, 0.2), (Domain::Day, 0.9)]),
    ];
    let r = build_report(&runs).unwrap();
    assert_eq!(r.domains, vec![Domain::Day, Domain::Night]);
    assert_eq!(r.rows[0].label, "pepr");
    assert!((r.rows[0].cells[1].delta.unwrap() - 0.1).abs() < 1e-12);
    assert_eq!(r.rows[1].cells[0].delta, None);
    assert_eq!(r.rows[0].train_modalities, "RGB+Event");
    assert_eq!(r.rows[1].train_modalities, "RGB");
}
