use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::events::{LuminanceFrame, Resolution};
use crate::geometry::BBox;

pub const BACKGROUND_CLASS: u8 = 0;

/// Minimum luminance difference between any shape and the background.
pub const MIN_CONTRAST: f64 = 0.1;

const TEXTURE_AMPLITUDE: f64 = 0.05;
const PLACEMENT_ATTEMPTS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle];

    pub fn class_id(self) -> u8 {
        match self {
            ShapeKind::Circle => 1,
            ShapeKind::Square => 2,
            ShapeKind::Triangle => 3,
        }
    }

    pub fn from_class_id(id: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.class_id() == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub num_shapes: usize,
    /// Shape extent (diameter or side) in pixels.
    pub size_range: (f64, f64),
    /// Speed in pixels per frame.
    pub speed_range: (f64, f64),
    pub frames_per_sample: usize,
    /// Seconds between frames.
    pub frame_interval: f64,
    /// Shape luminance bounds on the HDR scale.
    pub luminance_range: (f64, f64),
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 128,
            width: 128,
            num_shapes: 3,
            size_range: (18.0, 34.0),
            speed_range: (1.5, 4.0),
            frames_per_sample: 6,
            frame_interval: 0.04,
            luminance_range: (0.05, 1.0),
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn resolution(&self) -> Resolution {
        Resolution::new(self.height, self.width)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.height > 0 && self.width > 0, InvalidConfig, "empty frame");
        ensure!(self.num_shapes >= 1, InvalidConfig, "num_shapes must be at least 1");
        ensure!(self.frames_per_sample >= 2, InvalidConfig, "need at least 2 frames per sample");
        ensure!(
            self.frame_interval > 0.0 && self.frame_interval.is_finite(),
            InvalidConfig,
            "frame interval must be positive"
        );
        let (s0, s1) = self.size_range;
        ensure!(
            s0 >= 4.0 && s0 <= s1,
            InvalidConfig,
            "size range ({s0}, {s1}) must be ordered with a minimum of 4 px"
        );
        ensure!(
            s1 <= self.height.min(self.width) as f64,
            InvalidConfig,
            "shapes of {s1} px do not fit a {}x{} frame",
            self.height,
            self.width
        );
        let (v0, v1) = self.speed_range;
        ensure!(v0 >= 0.0 && v0 <= v1, InvalidConfig, "speed range ({v0}, {v1}) invalid");
        let (l0, l1) = self.luminance_range;
        ensure!(
            (0.0..=1.0).contains(&l0) && (0.0..=1.0).contains(&l1) && l0 < l1,
            InvalidConfig,
            "luminance range ({l0}, {l1}) must be ordered within [0, 1]"
        );
        let (b0, b1) = BACKGROUND_BASE;
        ensure!(
            l0 <= b0 - TEXTURE_AMPLITUDE - MIN_CONTRAST || l1 >= b1 + TEXTURE_AMPLITUDE + MIN_CONTRAST,
            InvalidConfig,
            "luminance range ({l0}, {l1}) leaves no room for {MIN_CONTRAST} contrast against the background"
        );
        Ok(())
    }
}

const BACKGROUND_BASE: (f64, f64) = (0.25, 0.45);

/// Static smooth background: `base + amp * sin(fx*x + px) * sin(fy*y + py)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub base: f64,
    pub amplitude: f64,
    pub freq: (f64, f64),
    pub phase: (f64, f64),
}

impl Background {
    pub fn at(&self, x: f64, y: f64) -> f64 {
        self.base + self.amplitude * (self.freq.0 * x + self.phase.0).sin() * (self.freq.1 * y + self.phase.1).sin()
    }

    pub fn range(&self) -> (f64, f64) {
        (self.base - self.amplitude, self.base + self.amplitude)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    /// Centre at frame 0, pixels.
    pub center: (f64, f64),
    pub size: f64,
    pub luminance: f64,
    /// Pixels per frame.
    pub velocity: (f64, f64),
}

impl ShapeSpec {
    pub fn center_at(&self, frame: usize) -> (f64, f64) {
        (
            self.center.0 + self.velocity.0 * frame as f64,
            self.center.1 + self.velocity.1 * frame as f64,
        )
    }

    fn contains(&self, frame: usize, px: f64, py: f64) -> bool {
        let (cx, cy) = self.center_at(frame);
        let r = self.size / 2.0;
        let (dx, dy) = (px - cx, py - cy);
        match self.kind {
            ShapeKind::Circle => dx * dx + dy * dy <= r * r,
            ShapeKind::Square => dx.abs() <= r && dy.abs() <= r,
            ShapeKind::Triangle => dy >= -r && dy <= r && dx.abs() <= (dy + r) / 2.0,
        }
    }

    /// Extent at `frame` as a continuous box.
    fn extent(&self, frame: usize) -> BBox {
        let (cx, cy) = self.center_at(frame);
        let r = self.size / 2.0;
        BBox::new(cx - r, cy - r, cx + r, cy + r)
    }

    fn swept_extent(&self, frames: usize) -> BBox {
        let a = self.extent(0);
        let b = self.extent(frames - 1);
        BBox::new(
            a.x_min.min(b.x_min),
            a.y_min.min(b.y_min),
            a.x_max.max(b.x_max),
            a.y_max.max(b.y_max),
        )
    }
}

/// Everything needed to render a sequence; later shapes draw on top.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneLayout {
    pub resolution: Resolution,
    pub background: Background,
    pub shapes: Vec<ShapeSpec>,
    pub frames: usize,
    pub frame_interval: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    pub class_id: u8,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedScene {
    pub frames: Vec<LuminanceFrame>,
    pub timestamps: Vec<f64>,
    /// Class ids at the final frame, row-major.
    pub mask: Vec<u8>,
    /// Tight boxes of each visible shape at the final frame.
    pub boxes: Vec<LabeledBox>,
    /// Tight boxes for every frame.
    pub frame_boxes: Vec<Vec<LabeledBox>>,
}

impl RenderedScene {
    pub fn t_ref(&self) -> f64 {
        *self.timestamps.last().expect("at least two frames")
    }

    pub fn final_frame(&self) -> &LuminanceFrame {
        self.frames.last().expect("at least two frames")
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Draws a layout whose shapes stay inside the frame for the whole
/// sequence and whose swept extents never overlap.
pub fn sample_layout(cfg: &SceneConfig) -> Result<SceneLayout> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let background = Background {
        base: uniform(&mut rng, BACKGROUND_BASE),
        amplitude: TEXTURE_AMPLITUDE,
        freq: (uniform(&mut rng, (0.03, 0.12)), uniform(&mut rng, (0.03, 0.12))),
        phase: (uniform(&mut rng, (0.0, 2.0 * PI)), uniform(&mut rng, (0.0, 2.0 * PI))),
    };
    let (bg_lo, bg_hi) = background.range();
    let (l0, l1) = cfg.luminance_range;
    let dark = (l0, bg_lo - MIN_CONTRAST);
    let bright = (bg_hi + MIN_CONTRAST, l1);
    let dark_len = (dark.1 - dark.0).max(0.0);
    let bright_len = (bright.1 - bright.0).max(0.0);

    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let mut shapes: Vec<ShapeSpec> = Vec::new();
    let mut swept: Vec<BBox> = Vec::new();
    for _ in 0..cfg.num_shapes {
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let kind = ShapeKind::ALL[rng.random_range(0..3)];
            let size = uniform(&mut rng, cfg.size_range);
            let speed = uniform(&mut rng, cfg.speed_range);
            let angle = rng.random_range(0.0..2.0 * PI);
            let velocity = (speed * angle.cos(), speed * angle.sin());
            let center = (rng.random_range(0.0..w), rng.random_range(0.0..h));
            let u = rng.random_range(0.0..dark_len + bright_len);
            let luminance = if u < dark_len { dark.0 + u } else { bright.0 + (u - dark_len) };
            let shape = ShapeSpec {
                kind,
                center,
                size,
                luminance,
                velocity,
            };
            let s = shape.swept_extent(cfg.frames_per_sample);
            let inside = s.x_min >= 1.0 && s.y_min >= 1.0 && s.x_max <= w - 1.0 && s.y_max <= h - 1.0;
            let apart = swept.iter().all(|o| {
                s.x_max + 2.0 <= o.x_min || o.x_max + 2.0 <= s.x_min || s.y_max + 2.0 <= o.y_min || o.y_max + 2.0 <= s.y_min
            });
            if inside && apart {
                swept.push(s);
                shapes.push(shape);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::InvalidConfig(format!(
                "could not place {} non-overlapping shapes in a {}x{} frame",
                cfg.num_shapes, cfg.height, cfg.width
            )));
        }
    }
    Ok(SceneLayout {
        resolution: cfg.resolution(),
        background,
        shapes,
        frames: cfg.frames_per_sample,
        frame_interval: cfg.frame_interval,
    })
}

/// Sub-pixel sample offsets for anti-aliased luminance.
const SUPERSAMPLE: [(f64, f64); 4] = [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)];

/// Renders HDR luminance for every frame plus labels at each frame.
pub fn render_layout(layout: &SceneLayout) -> Result<RenderedScene> {
    ensure!(layout.frames >= 2, InvalidConfig, "need at least 2 frames");
    let res = layout.resolution;
    let (h, w) = (res.height, res.width);
    let mut frames = Vec::with_capacity(layout.frames);
    let mut frame_boxes = Vec::with_capacity(layout.frames);
    let mut mask = Vec::new();
    for f in 0..layout.frames {
        let mut lum = vec![0.0; h * w];
        let mut classes = vec![BACKGROUND_CLASS; h * w];
        let mut owner: Vec<Option<usize>> = vec![None; h * w];
        let extents: Vec<BBox> = layout.shapes.iter().map(|s| s.extent(f)).collect();
        for y in 0..h {
            for x in 0..w {
                let (fx, fy) = (x as f64, y as f64);
                let near: Vec<usize> = (0..layout.shapes.len())
                    .filter(|&i| {
                        let e = &extents[i];
                        fx + 1.0 >= e.x_min && fx <= e.x_max && fy + 1.0 >= e.y_min && fy <= e.y_max
                    })
                    .collect();
                let bg = layout.background.at(fx + 0.5, fy + 0.5);
                let top = |px: f64, py: f64| near.iter().rev().copied().find(|&i| layout.shapes[i].contains(f, px, py));
                let mut acc = 0.0;
                for (ox, oy) in SUPERSAMPLE {
                    acc += top(fx + ox, fy + oy).map_or(bg, |i| layout.shapes[i].luminance);
                }
                lum[y * w + x] = acc / SUPERSAMPLE.len() as f64;
                if let Some(i) = top(fx + 0.5, fy + 0.5) {
                    classes[y * w + x] = layout.shapes[i].kind.class_id();
                    owner[y * w + x] = Some(i);
                }
            }
        }
        let mut boxes = Vec::new();
        for (i, shape) in layout.shapes.iter().enumerate() {
            let mut b: Option<(usize, usize, usize, usize)> = None;
            for y in 0..h {
                for x in 0..w {
                    if owner[y * w + x] == Some(i) {
                        b = Some(match b {
                            None => (x, y, x, y),
                            Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                        });
                    }
                }
            }
            if let Some((x0, y0, x1, y1)) = b {
                boxes.push(LabeledBox {
                    class_id: shape.kind.class_id(),
                    bbox: BBox::new(x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64),
                });
            }
        }
        frames.push(LuminanceFrame::new(res, lum)?);
        frame_boxes.push(boxes);
        mask = classes;
    }
    let timestamps = (0..layout.frames).map(|f| f as f64 * layout.frame_interval).collect();
    Ok(RenderedScene {
        frames,
        timestamps,
        mask,
        boxes: frame_boxes.last().cloned().unwrap_or_default(),
        frame_boxes,
    })
}

/// Samples a layout from `cfg` and renders it.
pub fn render_scene_sequence(cfg: &SceneConfig) -> Result<RenderedScene> {
    render_layout(&sample_layout(cfg)?)
}
