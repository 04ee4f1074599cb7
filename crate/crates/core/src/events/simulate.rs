use serde::{Deserialize, Serialize};

use super::{EventRecord, EventStream, Polarity, Resolution};
use crate::error::{ensure, Result};

/// Slack (log units) when testing whether a reference level was reached,
/// so a change of exactly one threshold fires despite rounding.
pub const LEVEL_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulatorConfig {
    /// Log-intensity change per event, both polarities.
    pub contrast_threshold: f64,
    /// Offset in `log(I + eps)`.
    pub log_eps: f64,
    /// Minimum gap between emitted events of one pixel and polarity, seconds.
    pub refractory: f64,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        Self {
            contrast_threshold: 0.2,
            log_eps: 1e-3,
            refractory: 0.0,
        }
    }
}

impl SimulatorConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.contrast_threshold > 0.0 && self.contrast_threshold.is_finite(),
            InvalidConfig,
            "contrast threshold must be positive, got {}",
            self.contrast_threshold
        );
        ensure!(
            self.log_eps > 0.0 && self.log_eps.is_finite(),
            InvalidConfig,
            "log_eps must be positive, got {}",
            self.log_eps
        );
        ensure!(
            self.refractory >= 0.0 && self.refractory.is_finite(),
            InvalidConfig,
            "refractory period must be non-negative, got {}",
            self.refractory
        );
        Ok(())
    }
}

/// A row-major grid of linear (HDR) luminance values.
#[derive(Debug, Clone, PartialEq)]
pub struct LuminanceFrame {
    pub resolution: Resolution,
    pub data: Vec<f64>,
}

impl LuminanceFrame {
    pub fn new(resolution: Resolution, data: Vec<f64>) -> Result<Self> {
        ensure!(
            data.len() == resolution.pixels(),
            InvalidInput,
            "frame holds {} values, expected {}",
            data.len(),
            resolution.pixels()
        );
        Ok(Self { resolution, data })
    }

    pub fn filled(resolution: Resolution, value: f64) -> Self {
        Self {
            resolution,
            data: vec![value; resolution.pixels()],
        }
    }
}

/// Converts a luminance sequence into events by log-domain thresholding.
///
/// Intensity is linearly interpolated between frames, so every level
/// crossing has a closed-form timestamp. Each pixel tracks its reference
/// level as `L(t0) + k * C` for an integer `k`.
pub fn simulate_events(
    frames: &[LuminanceFrame],
    timestamps: &[f64],
    cfg: &SimulatorConfig,
) -> Result<EventStream> {
    cfg.validate()?;
    ensure!(
        frames.len() >= 2,
        InvalidInput,
        "need at least 2 frames, got {}",
        frames.len()
    );
    ensure!(
        frames.len() == timestamps.len(),
        InvalidInput,
        "{} frames but {} timestamps",
        frames.len(),
        timestamps.len()
    );
    let resolution = frames[0].resolution;
    for (i, f) in frames.iter().enumerate() {
        ensure!(
            f.resolution == resolution && f.data.len() == resolution.pixels(),
            InvalidInput,
            "frame {i} resolution {:?} differs from {:?}",
            f.resolution,
            resolution
        );
        ensure!(
            f.data.iter().all(|v| *v >= 0.0 && v.is_finite()),
            InvalidInput,
            "frame {i} has negative or non-finite luminance"
        );
    }
    ensure!(
        timestamps.iter().all(|t| t.is_finite()) && timestamps.windows(2).all(|w| w[1] > w[0]),
        InvalidInput,
        "timestamps must be finite and strictly increasing"
    );

    let c = cfg.contrast_threshold;
    let eps = cfg.log_eps;
    let mut records = Vec::new();
    let mut pixel_events = Vec::new();

    for y in 0..resolution.height {
        for x in 0..resolution.width {
            let idx = y * resolution.width + x;
            let base = (frames[0].data[idx] + eps).ln();
            let mut level_index: i64 = 0;
            pixel_events.clear();

            for (win, tw) in frames.windows(2).zip(timestamps.windows(2)) {
                let (ia, ib) = (win[0].data[idx], win[1].data[idx]);
                if ia == ib {
                    continue;
                }
                let lb = (ib + eps).ln();
                let crossing_time = |level: f64| {
                    let target = level.exp() - eps;
                    let frac = ((target - ia) / (ib - ia)).clamp(0.0, 1.0);
                    tw[0] + frac * (tw[1] - tw[0])
                };
                if ib > ia {
                    loop {
                        let next = base + (level_index + 1) as f64 * c;
                        if lb < next - LEVEL_TOLERANCE {
                            break;
                        }
                        pixel_events.push((crossing_time(next), Polarity::Positive));
                        level_index += 1;
                    }
                } else {
                    loop {
                        let next = base + (level_index - 1) as f64 * c;
                        if lb > next + LEVEL_TOLERANCE {
                            break;
                        }
                        pixel_events.push((crossing_time(next), Polarity::Negative));
                        level_index -= 1;
                    }
                }
            }

            let mut last_emitted: [Option<f64>; 2] = [None, None];
            for &(t, polarity) in &pixel_events {
                let slot = &mut last_emitted[polarity.channel()];
                if let Some(prev) = *slot {
                    if t - prev < cfg.refractory {
                        continue;
                    }
                }
                *slot = Some(t);
                records.push(EventRecord {
                    x: x as u16,
                    y: y as u16,
                    t,
                    polarity,
                });
            }
        }
    }

    // Pixels were visited in row-major order, so a stable sort on time keeps
    // (y, x) as the tie-break.
    records.sort_by(|a, b| a.t.total_cmp(&b.t));
    EventStream::new(
        resolution,
        records,
        timestamps[0],
        *timestamps.last().expect("at least two timestamps"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_pixel(values: &[f64]) -> Vec<LuminanceFrame> {
        values
            .iter()
            .map(|v| LuminanceFrame::filled(Resolution::new(1, 1), *v))
            .collect()
    }

    #[test]
    fn identical_frames_give_no_events() {
        let res = Resolution::new(4, 5);
        let frames = vec![LuminanceFrame::filled(res, 0.4); 2];
        let stream = simulate_events(&frames, &[0.0, 0.1], &SimulatorConfig::default()).unwrap();
        assert!(stream.is_empty());
        assert_eq!(stream.resolution(), res);
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = SimulatorConfig::default();
        let a = LuminanceFrame::filled(Resolution::new(2, 2), 0.1);
        let b = LuminanceFrame::filled(Resolution::new(2, 3), 0.1);
        assert!(simulate_events(&[a.clone(), b], &[0.0, 1.0], &cfg).is_err());
        assert!(simulate_events(&[a.clone(), a.clone()], &[1.0, 1.0], &cfg).is_err());
        assert!(simulate_events(&[a.clone()], &[0.0], &cfg).is_err());
        let bad = SimulatorConfig {
            contrast_threshold: 0.0,
            ..cfg
        };
        assert!(simulate_events(&[a.clone(), a], &[0.0, 1.0], &bad).is_err());
    }

    #[test]
    fn exact_single_threshold_drop_fires_once_at_the_end() {
        let cfg = SimulatorConfig::default();
        let i0: f64 = 0.6;
        let i1 = (i0 + cfg.log_eps) * (-cfg.contrast_threshold).exp() - cfg.log_eps;
        let stream = simulate_events(&single_pixel(&[i0, i1]), &[0.0, 1.0], &cfg).unwrap();
        assert_eq!(stream.len(), 1);
        let ev = stream.records()[0];
        assert_eq!(ev.polarity, Polarity::Negative);
        assert!((ev.t - 1.0).abs() < 1e-9, "t = {}", ev.t);
    }

    #[test]
    fn refractory_suppresses_close_events() {
        let cfg = SimulatorConfig {
            refractory: 0.5,
            ..Default::default()
        };
        // one big jump fires many positive events at nearly the same time
        let stream = simulate_events(&single_pixel(&[0.05, 0.9]), &[0.0, 0.1], &cfg).unwrap();
        assert_eq!(stream.len(), 1);
        let free = simulate_events(
            &single_pixel(&[0.05, 0.9]),
            &[0.0, 0.1],
            &SimulatorConfig::default(),
        )
        .unwrap();
        assert!(free.len() > 5);
    }

    #[test]
    fn output_is_time_sorted_and_inside_span() {
        let res = Resolution::new(3, 3);
        let frames: Vec<_> = (0..4)
            .map(|k| {
                LuminanceFrame::new(
                    res,
                    (0..9).map(|i| ((i * 7 + k * 3) % 10) as f64 / 10.0).collect(),
                )
                .unwrap()
            })
            .collect();
        let stream =
            simulate_events(&frames, &[0.0, 0.1, 0.2, 0.3], &SimulatorConfig::default()).unwrap();
        assert!(!stream.is_empty());
        assert!(stream.records().windows(2).all(|w| w[0].t <= w[1].t));
        assert!(stream.records().iter().all(|r| r.t >= 0.0 && r.t <= 0.3));
    }
}
