//! Event-stream data model, frame-to-event simulation and dense event
//! representations.

mod io;
mod simulate;
mod surface;

pub use io::{parse_events_text, read_events_binary, read_events_text, write_events_binary, write_events_text};
pub use simulate::{simulate_events, LuminanceFrame, SimulatorConfig};
pub use surface::{build_activity_map, build_time_surface, ActivityMap, TimeSurface};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Sensor grid size in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Resolution {
    pub height: usize,
    pub width: usize,
}

impl Resolution {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

/// Sign of a log-brightness change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    Negative,
    Positive,
}

impl Polarity {
    pub fn sign(self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }

    pub fn from_sign(sign: i64) -> Option<Self> {
        match sign {
            1 => Some(Polarity::Positive),
            -1 => Some(Polarity::Negative),
            _ => None,
        }
    }

    /// Time-surface channel: 0 for positive, 1 for negative.
    pub fn channel(self) -> usize {
        match self {
            Polarity::Positive => 0,
            Polarity::Negative => 1,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Negative => Polarity::Positive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRecord {
    pub x: u16,
    pub y: u16,
    /// Seconds.
    pub t: f64,
    pub polarity: Polarity,
}

/// Time-ordered events of one sensor over `[t_start, t_end]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    resolution: Resolution,
    records: Vec<EventRecord>,
    t_start: f64,
    t_end: f64,
}

impl EventStream {
    /// Validates coordinates, ordering and the time span.
    pub fn new(
        resolution: Resolution,
        records: Vec<EventRecord>,
        t_start: f64,
        t_end: f64,
    ) -> Result<Self> {
        ensure!(
            t_start.is_finite() && t_end.is_finite() && t_start <= t_end,
            InvalidInput,
            "event stream span [{t_start}, {t_end}] is not a finite interval"
        );
        ensure!(
            resolution.height <= u16::MAX as usize + 1 && resolution.width <= u16::MAX as usize + 1,
            InvalidInput,
            "resolution {}x{} exceeds 16-bit coordinates",
            resolution.height,
            resolution.width
        );
        let mut prev = t_start;
        for (i, r) in records.iter().enumerate() {
            ensure!(
                (r.x as usize) < resolution.width && (r.y as usize) < resolution.height,
                InvalidInput,
                "event {i} at ({}, {}) outside {}x{}",
                r.x,
                r.y,
                resolution.height,
                resolution.width
            );
            ensure!(
                r.t >= prev && r.t <= t_end,
                InvalidInput,
                "event {i} timestamp {} breaks ordering or span",
                r.t
            );
            prev = r.t;
        }
        Ok(Self {
            resolution,
            records,
            t_start,
            t_end,
        })
    }

    pub fn empty(resolution: Resolution, t_start: f64, t_end: f64) -> Result<Self> {
        Self::new(resolution, Vec::new(), t_start, t_end)
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}
