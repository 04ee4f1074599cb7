use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Check;
use crate::error::{ensure, Result};
use crate::events::{simulate_events, LuminanceFrame, Polarity, Resolution, SimulatorConfig};

/// Scan step of the brute-force oracle, seconds.
pub const ORACLE_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleEvent {
    pub y: usize,
    pub x: usize,
    pub t: f64,
    pub polarity: Polarity,
}

/// Scans each pixel's log intensity on a fixed time grid; whenever a grid
/// step brackets the next level, the crossing is located by bisection.
pub fn fine_step_events(frames: &[Vec<f64>], width: usize, timestamps: &[f64], cfg: &SimulatorConfig) -> Vec<OracleEvent> {
    let c = cfg.contrast_threshold;
    let log_at = |ia: f64, ib: f64, ta: f64, tb: f64, t: f64| {
        let f = (t - ta) / (tb - ta);
        (ia + f * (ib - ia) + cfg.log_eps).ln()
    };
    let mut out = Vec::new();
    let pixels = frames[0].len();
    for p in 0..pixels {
        let mut reference = (frames[0][p] + cfg.log_eps).ln();
        let mut last: [Option<f64>; 2] = [None, None];
        for k in 0..frames.len() - 1 {
            let (ia, ib) = (frames[k][p], frames[k + 1][p]);
            let (ta, tb) = (timestamps[k], timestamps[k + 1]);
            let steps = ((tb - ta) / ORACLE_STEP).round().max(1.0) as usize;
            for j in 0..steps {
                let s0 = ta + (tb - ta) * j as f64 / steps as f64;
                let s1 = ta + (tb - ta) * (j + 1) as f64 / steps as f64;
                let l1 = log_at(ia, ib, ta, tb, s1);
                loop {
                    let (level, polarity) = if l1 >= reference + c - 1e-10 {
                        (reference + c, Polarity::Positive)
                    } else if l1 <= reference - c + 1e-10 {
                        (reference - c, Polarity::Negative)
                    } else {
                        break;
                    };
                    let (mut lo, mut hi) = (s0, s1);
                    for _ in 0..80 {
                        let mid = 0.5 * (lo + hi);
                        let lm = log_at(ia, ib, ta, tb, mid);
                        let before = match polarity {
                            Polarity::Positive => lm < level,
                            Polarity::Negative => lm > level,
                        };
                        if before {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    reference = level;
                    let slot = &mut last[polarity.channel()];
                    if slot.is_none_or(|prev| hi - prev >= cfg.refractory) {
                        *slot = Some(hi);
                        out.push(OracleEvent {
                            y: p / width,
                            x: p % width,
                            t: hi,
                            polarity,
                        });
                    }
                }
            }
        }
    }
    out
}

fn random_scene(rng: &mut ChaCha8Rng, side: usize, intervals: usize) -> Vec<Vec<f64>> {
    let mut frame: Vec<f64> = (0..side * side).map(|_| rng.random_range(0.05..1.0)).collect();
    let mut frames = vec![frame.clone()];
    for _ in 0..intervals {
        for v in frame.iter_mut() {
            let step: f64 = rng.random_range(-0.35..0.35);
            *v = (*v * step.exp()).clamp(0.0, 1.0);
        }
        frames.push(frame.clone());
    }
    frames
}

fn compare_scene(frames: &[Vec<f64>], side: usize, timestamps: &[f64], cfg: &SimulatorConfig) -> Result<usize> {
    let res = Resolution::new(side, side);
    let lum: Vec<LuminanceFrame> = frames
        .iter()
        .map(|f| LuminanceFrame::new(res, f.clone()))
        .collect::<Result<_>>()?;
    let stream = simulate_events(&lum, timestamps, cfg)?;
    let mut got: Vec<OracleEvent> = stream
        .records()
        .iter()
        .map(|r| OracleEvent {
            y: r.y as usize,
            x: r.x as usize,
            t: r.t,
            polarity: r.polarity,
        })
        .collect();
    let mut want = fine_step_events(frames, side, timestamps, cfg);
    let key = |e: &OracleEvent| (e.y, e.x);
    got.sort_by(|a, b| key(a).cmp(&key(b)).then(a.t.total_cmp(&b.t)));
    want.sort_by(|a, b| key(a).cmp(&key(b)).then(a.t.total_cmp(&b.t)));
    ensure!(
        got.len() == want.len(),
        InvalidInput,
        "simulator emitted {} events, oracle {}",
        got.len(),
        want.len()
    );
    for (g, w) in got.iter().zip(&want) {
        ensure!(
            key(g) == key(w) && g.polarity == w.polarity && (g.t - w.t).abs() <= 1e-9,
            InvalidInput,
            "event mismatch: simulator {g:?}, oracle {w:?}"
        );
    }
    Ok(got.len())
}

pub(super) fn run(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = SimulatorConfig::default();
    let intervals = 100;
    let timestamps: Vec<f64> = (0..=intervals).map(|k| k as f64 * 1e-3).collect();
    let mut total = 0;
    let mut failure = None;
    for scene in 0..20 {
        let frames = random_scene(&mut rng, 8, intervals);
        match compare_scene(&frames, 8, &timestamps, &cfg) {
            Ok(n) => total += n,
            Err(e) => {
                failure = Some(format!("scene {scene}: {e}"));
                break;
            }
        }
    }
    let random = match failure {
        None => Check::new(
            "random 8x8 scenes vs fine-step oracle",
            true,
            format!("20 scenes x {intervals} steps, {total} events identical"),
        ),
        Some(f) => Check::new("random 8x8 scenes vs fine-step oracle", false, f),
    };

    // Log intensity rising linearly by 2.5 C over one second.
    let ramp = {
        let one = |l: f64| vec![l.exp() - cfg.log_eps];
        let l0 = (0.1f64 + cfg.log_eps).ln();
        let ts: Vec<f64> = (0..=1000).map(|k| k as f64 / 1000.0).collect();
        let frames: Vec<Vec<f64>> = ts.iter().map(|t| one(l0 + 2.5 * cfg.contrast_threshold * t)).collect();
        let r = compare_scene(&frames, 1, &ts, &cfg).map(|n| format!("{n} events"));
        Check::from_result("log-linear ramp of 2.5 C", r)
    };
    vec![random, ramp]
}
