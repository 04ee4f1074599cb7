use super::{EventStream, Resolution};
use crate::error::{ensure, Result};
use crate::scalar::Scalar;

/// Two-channel exponentially decayed last-event timestamps, laid out
/// `(y, x, channel)` with channel 0 for positive and 1 for negative events.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSurface<T> {
    pub resolution: Resolution,
    pub values: Vec<T>,
    pub t_ref: f64,
    pub tau: f64,
}

impl<T: Scalar> TimeSurface<T> {
    pub const CHANNELS: usize = 2;

    pub fn at(&self, y: usize, x: usize, channel: usize) -> T {
        self.values[(y * self.resolution.width + x) * Self::CHANNELS + channel]
    }
}

/// Per-pixel event counts over a closed time window.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityMap {
    pub resolution: Resolution,
    pub counts: Vec<u32>,
    /// Inclusive `[t0, t1]`, seconds.
    pub window: (f64, f64),
}

impl ActivityMap {
    pub fn at(&self, y: usize, x: usize) -> u32 {
        self.counts[y * self.resolution.width + x]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|c| *c as u64).sum()
    }

    pub fn from_counts(resolution: Resolution, counts: Vec<u32>, window: (f64, f64)) -> Result<Self> {
        ensure!(
            counts.len() == resolution.pixels(),
            InvalidInput,
            "activity grid holds {} counts, expected {}",
            counts.len(),
            resolution.pixels()
        );
        Ok(Self {
            resolution,
            counts,
            window,
        })
    }
}

pub fn build_time_surface<T: Scalar>(
    stream: &EventStream,
    t_ref: f64,
    tau: f64,
) -> Result<TimeSurface<T>> {
    ensure!(
        tau > 0.0 && tau.is_finite(),
        InvalidConfig,
        "time-surface decay must be positive, got {tau}"
    );
    ensure!(
        t_ref >= stream.t_start(),
        InvalidInput,
        "reference time {t_ref} precedes stream start {}",
        stream.t_start()
    );
    let res = stream.resolution();
    let mut last = vec![f64::NEG_INFINITY; res.pixels() * 2];
    for r in stream.records() {
        if r.t > t_ref {
            break;
        }
        last[(r.y as usize * res.width + r.x as usize) * 2 + r.polarity.channel()] = r.t;
    }
    let values = last
        .into_iter()
        .map(|t| {
            if t == f64::NEG_INFINITY {
                T::zero()
            } else {
                T::c((-(t_ref - t) / tau).exp())
            }
        })
        .collect();
    Ok(TimeSurface {
        resolution: res,
        values,
        t_ref,
        tau,
    })
}

pub fn build_activity_map(stream: &EventStream, t0: f64, t1: f64) -> Result<ActivityMap> {
    ensure!(t0 <= t1, InvalidInput, "activity window [{t0}, {t1}] is reversed");
    let res = stream.resolution();
    let mut counts = vec![0u32; res.pixels()];
    let records = stream.records();
    let start = records.partition_point(|r| r.t < t0);
    for r in &records[start..] {
        if r.t > t1 {
            break;
        }
        counts[r.y as usize * res.width + r.x as usize] += 1;
    }
    ActivityMap::from_counts(res, counts, (t0, t1))
}
