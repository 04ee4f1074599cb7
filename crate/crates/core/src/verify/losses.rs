use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Check;
use crate::error::{ensure, Result};
use crate::geometry::BBox;
use crate::nn::{FeatureMap, GridPos, Modality};
use crate::objective::{
    det_task_loss, extract_target_patches, l2_alignment_loss, predictive_loss, seg_task_loss, total_loss, LossWeights,
    SIZE_LOSS_WEIGHT,
};

fn close(name: &str, got: f64, want: f64, tol: f64) -> Result<()> {
    ensure!(
        (got - want).abs() <= tol * want.abs().max(1.0),
        InvalidInput,
        "{name}: {got} vs oracle {want}"
    );
    Ok(())
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn random_checks(rng: &mut ChaCha8Rng) -> Result<()> {
    for _ in 0..20 {
        let m = rng.random_range(1..6);
        let d = rng.random_range(1..9);
        let t: Vec<Vec<f64>> = (0..m).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let p: Vec<Vec<f64>> = (0..m).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let mut want = 0.0;
        for i in 0..m {
            for j in 0..d {
                want += (p[i][j] - t[i][j]).powi(2);
            }
        }
        close("predictive loss", predictive_loss(&t, &p)?, want / m as f64, 1e-10)?;

        let (h, w) = (rng.random_range(1..6), rng.random_range(1..6));
        let a: Vec<f64> = (0..h * w * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..h * w * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let want = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
        let fa = FeatureMap::new(h, w, d, a.clone(), Modality::Rgb)?;
        let fb = FeatureMap::new(h, w, d, b, Modality::Event)?;
        close("l2 alignment", l2_alignment_loss(&fa, &fb)?, want, 1e-10)?;

        let s = rng.random_range(1..=h.min(w));
        let loc = GridPos::new(rng.random_range(0..=h - s), rng.random_range(0..=w - s));
        let got = extract_target_patches(&fa, &[loc], s)?;
        for c in 0..d {
            let mut acc = 0.0;
            for y in loc.y..loc.y + s {
                for x in loc.x..loc.x + s {
                    acc += a[(y * w + x) * d + c];
                }
            }
            close("patch mean", got[0][c], acc / (s * s) as f64, 1e-12)?;
        }

        let k = rng.random_range(2..5);
        let px = rng.random_range(1..30);
        let logits: Vec<f64> = (0..px * k).map(|_| rng.random_range(-4.0..4.0)).collect();
        let mut mask: Vec<u8> = (0..px).map(|_| rng.random_range(0..k) as u8).collect();
        if px > 1 {
            mask[0] = 255;
        }
        let mut ce = 0.0;
        let mut n = 0;
        for (i, &lab) in mask.iter().enumerate() {
            if lab == 255 {
                continue;
            }
            let row = &logits[i * k..(i + 1) * k];
            let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
            ce += lse - row[lab as usize];
            n += 1;
        }
        close("segmentation cross-entropy", seg_task_loss(&logits, k, &mask)?, ce / n as f64, 1e-10)?;

        let (gh, gw, stride) = (4, 4, 8);
        let nb = rng.random_range(0..3);
        let boxes: Vec<BBox> = (0..nb)
            .map(|_| {
                let x0 = rng.random_range(0.0..24.0);
                let y0 = rng.random_range(0.0..24.0);
                BBox::new(x0, y0, x0 + rng.random_range(1.0..8.0), y0 + rng.random_range(1.0..8.0))
            })
            .collect();
        let z: Vec<f64> = (0..gh * gw).map(|_| rng.random_range(-3.0..3.0)).collect();
        let sz: Vec<f64> = (0..gh * gw * 2).map(|_| rng.random_range(0.0..10.0)).collect();
        let mut obj = vec![0.0; gh * gw];
        let mut l1 = 0.0;
        for b in &boxes {
            let cx = (b.x_min + b.x_max) / 2.0;
            let cy = (b.y_min + b.y_max) / 2.0;
            let cell = ((cy / stride as f64) as usize).min(gh - 1) * gw + ((cx / stride as f64) as usize).min(gw - 1);
            obj[cell] = 1.0;
            l1 += (sz[cell * 2] - (b.x_max - b.x_min)).abs() + (sz[cell * 2 + 1] - (b.y_max - b.y_min)).abs();
        }
        let bce: f64 = z.iter().zip(&obj).map(|(z, y)| softplus(*z) - z * y).sum::<f64>() / z.len() as f64;
        let want = bce + if nb > 0 { SIZE_LOSS_WEIGHT * l1 / (2 * nb) as f64 } else { 0.0 };
        close("detection loss", det_task_loss(&z, &sz, &boxes, gh, gw, stride)?, want, 1e-10)?;

        let (lt, lf) = (rng.random_range(0.0..2.0), rng.random_range(0.0..2.0));
        let (a, b) = (rng.random_range(0.0..5.0), rng.random_range(0.0..5.0));
        let wts = LossWeights { task: lt, feat: lf };
        close("total loss", total_loss(a, b, &wts)?, lt * a + lf * b, 1e-12)?;
    }
    Ok(())
}

fn hand_values() -> Result<()> {
    let v = |x: &[f64]| vec![x.to_vec()];
    ensure!(predictive_loss(&v(&[1.0, 2.0]), &v(&[1.0, 2.0]))? == 0.0, InvalidInput, "identity is not 0");
    ensure!(predictive_loss(&v(&[0.0, 0.0]), &v(&[1.0, 1.0]))? == 2.0, InvalidInput, "(1,1) is not 2");
    let t = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
    let p = vec![vec![3.0, 4.0], vec![0.0, 0.0]];
    ensure!(predictive_loss(&t, &p)? == 12.5, InvalidInput, "(3,4),(0,0) is not 12.5");
    let ce = seg_task_loss(&[0.0; 4], 4, &[2])?;
    ensure!((ce - 4f64.ln()).abs() <= 1e-15, InvalidInput, "uniform 4-class CE {ce} is not ln 4");
    let w = LossWeights { task: 1.0, feat: 0.0 };
    ensure!(total_loss(0.7, 123.0, &w)? == 0.7, InvalidInput, "lambda_feat = 0 leaks the feature term");
    Ok(())
}

pub(super) fn run(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vec![
        Check::from_result(
            "losses vs scalar loops",
            random_checks(&mut rng).map(|_| "20 random instances per loss".into()),
        ),
        Check::from_result("tabulated hand values", hand_values().map(|_| "0, 2, 12.5, ln 4".into())),
    ]
}
