//! Reading samples back, through a file-access layer that can be audited.

use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::dataset::{
    Manifest, ManifestEntry, SampleMeta, Split, BOXES_FILE, EVENTS_FILE, INVALID_MARKER, MANIFEST_FILE, MASK_FILE,
    META_FILE, RGB_FILE,
};
use super::scene::LabeledBox;
use super::tone::Domain;
use crate::error::{ensure, Error, Result};
use crate::events::{build_activity_map, build_time_surface, parse_events_text, ActivityMap, Resolution, TimeSurface};
use crate::geometry::BBox;
use crate::parallel::map_indexed;
use crate::scalar::Scalar;

/// Time-surface decay as a fraction of the frame interval.
pub const TAU_FRACTION: f64 = 0.5;

/// Every file the loaders read goes through this.
pub trait DataSource: Sync {
    fn read(&self, path: &Path) -> Result<Vec<u8>>;
}

/// Plain filesystem access.
#[derive(Debug, Default, Clone, Copy)]
pub struct FsSource;

impl DataSource for FsSource {
    fn read(&self, path: &Path) -> Result<Vec<u8>> {
        std::fs::read(path).map_err(|e| Error::io(path, e))
    }
}

/// Records every path opened through it.
#[derive(Debug, Default)]
pub struct AuditedSource<S = FsSource> {
    inner: S,
    opened: Mutex<Vec<PathBuf>>,
}

impl<S: DataSource> AuditedSource<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            opened: Mutex::new(Vec::new()),
        }
    }

    pub fn opened(&self) -> Vec<PathBuf> {
        self.opened.lock().expect("audit log").clone()
    }

    /// Opened paths whose file name equals `name`.
    pub fn opened_named(&self, name: &str) -> Vec<PathBuf> {
        self.opened()
            .into_iter()
            .filter(|p| p.file_name().is_some_and(|f| f == name))
            .collect()
    }
}

impl<S: DataSource> DataSource for AuditedSource<S> {
    fn read(&self, path: &Path) -> Result<Vec<u8>> {
        self.opened.lock().expect("audit log").push(path.to_path_buf());
        self.inner.read(path)
    }
}

pub fn read_manifest(root: &Path, source: &dyn DataSource) -> Result<Manifest> {
    let marker = root.join(INVALID_MARKER);
    ensure!(
        !marker.exists(),
        InvalidInput,
        "dataset at {} is marked invalid",
        root.display()
    );
    let path = root.join(MANIFEST_FILE);
    let bytes = source.read(&path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(&path, e.to_string()))
}

/// Event-derived inputs paired with the RGB frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EventInputs {
    pub time_surface: TimeSurface<f32>,
    pub activity: ActivityMap,
    pub count: usize,
}

/// One loaded sample. `events` is present only when requested.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub entry: ManifestEntry,
    pub meta: SampleMeta,
    pub resolution: Resolution,
    /// `H x W x 3` bytes.
    pub rgb: Vec<u8>,
    pub mask: Vec<u8>,
    pub boxes: Vec<LabeledBox>,
    pub events: Option<EventInputs>,
}

impl Sample {
    /// RGB scaled to `[0, 1]`.
    pub fn image<T: Scalar>(&self) -> Vec<T> {
        self.rgb.iter().map(|v| T::c(*v as f64 / 255.0)).collect()
    }

    pub fn bboxes(&self) -> Vec<BBox> {
        self.boxes.iter().map(|b| b.bbox).collect()
    }
}

fn decode_png(bytes: &[u8], path: &Path) -> Result<image::DynamicImage> {
    image::load_from_memory_with_format(bytes, image::ImageFormat::Png).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

pub fn parse_boxes_csv(text: &str, path: &Path) -> Result<Vec<LabeledBox>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("class,xmin,ymin,xmax,ymax") {
        return Err(Error::format(path, "missing 'class,xmin,ymin,xmax,ymax' header"));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = || Error::format(path, format!("bad box on line {}", i + 2));
        if f.len() != 5 {
            return Err(bad());
        }
        let class_id: u8 = f[0].parse().map_err(|_| bad())?;
        let v: Vec<f64> = f[1..].iter().map(|s| s.parse().map_err(|_| bad())).collect::<Result<_>>()?;
        let bbox = BBox::new(v[0], v[1], v[2], v[3]);
        bbox.validate().map_err(|e| Error::format(path, e.to_string()))?;
        out.push(LabeledBox { class_id, bbox });
    }
    Ok(out)
}

/// Loads one sample. Event files are opened only when `with_events`.
pub fn load_sample(root: &Path, entry: &ManifestEntry, with_events: bool, source: &dyn DataSource) -> Result<Sample> {
    let dir = root.join(&entry.dir);
    let meta_path = dir.join(META_FILE);
    let meta: SampleMeta =
        serde_json::from_slice(&source.read(&meta_path)?).map_err(|e| Error::format(&meta_path, e.to_string()))?;

    let rgb_path = dir.join(RGB_FILE);
    let rgb = decode_png(&source.read(&rgb_path)?, &rgb_path)?.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mask_path = dir.join(MASK_FILE);
    let mask = decode_png(&source.read(&mask_path)?, &mask_path)?.to_luma8();
    if (mask.width() as usize, mask.height() as usize) != (w, h) {
        return Err(Error::format(&mask_path, "mask size differs from the image"));
    }
    let boxes_path = dir.join(BOXES_FILE);
    let text = String::from_utf8(source.read(&boxes_path)?).map_err(|e| Error::format(&boxes_path, e.to_string()))?;
    let boxes = parse_boxes_csv(&text, &boxes_path)?;

    let events = if with_events {
        let path = dir.join(EVENTS_FILE);
        let bytes = source.read(&path).map_err(|e| match e {
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                Error::MissingModality(format!("event file {} not found", path.display()))
            }
            other => other,
        })?;
        let stream = parse_events_text(Cursor::new(bytes), &path)?;
        if stream.resolution() != Resolution::new(h, w) {
            return Err(Error::format(&path, "event resolution differs from the image"));
        }
        let dt = meta.frame_interval;
        let time_surface = build_time_surface::<f32>(&stream, meta.t_ref, TAU_FRACTION * dt)?;
        let activity = build_activity_map(&stream, (meta.t_ref - dt).max(stream.t_start()), meta.t_ref)?;
        Some(EventInputs {
            time_surface,
            activity,
            count: stream.len(),
        })
    } else {
        None
    };
    Ok(Sample {
        entry: entry.clone(),
        meta,
        resolution: Resolution::new(h, w),
        rgb: rgb.into_raw(),
        mask: mask.into_raw(),
        boxes,
        events,
    })
}

/// Loads every sample of a split (optionally one domain) in manifest order.
pub fn load_split(
    root: &Path,
    manifest: &Manifest,
    split: Split,
    domain: Option<Domain>,
    with_events: bool,
    source: &dyn DataSource,
    workers: usize,
) -> Result<Vec<Sample>> {
    let entries: Vec<&ManifestEntry> = manifest.entries(split, domain).collect();
    map_indexed(entries.len(), workers, |i| load_sample(root, entries[i], with_events, source))?
        .into_iter()
        .collect()
}
