//! On-disk dataset generation and the manifest.
//!
//! Layout under the dataset root:
//! `manifest.json`, `train/NNNNNN/`, `eval/<domain>/NNNNNN/`. Each sample
//! directory holds `rgb.png`, `events.txt`, `mask.png`, `boxes.csv` and
//! `meta.json`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::{render_scene_sequence, LabeledBox, SceneConfig};
use super::tone::{tone_map, Domain};
use crate::error::{ensure, Error, Result};
use crate::events::{simulate_events, write_events_text, SimulatorConfig};
use crate::parallel::map_indexed;
use crate::seed::{derive_seed, derive_seed_n};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const INVALID_MARKER: &str = "INVALID";
pub const RGB_FILE: &str = "rgb.png";
pub const EVENTS_FILE: &str = "events.txt";
pub const MASK_FILE: &str = "mask.png";
pub const BOXES_FILE: &str = "boxes.csv";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

/// What to generate. `scene.seed` is the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub scene: SceneConfig,
    pub simulator: SimulatorConfig,
    pub n_train: usize,
    pub n_eval_per_domain: usize,
    pub domains: Vec<Domain>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            simulator: SimulatorConfig::default(),
            n_train: 200,
            n_eval_per_domain: 50,
            domains: Domain::STANDARD.to_vec(),
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.simulator.validate()?;
        let mut seen = self.domains.clone();
        seen.sort();
        seen.dedup();
        ensure!(seen.len() == self.domains.len(), InvalidConfig, "duplicate evaluation domain");
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub split: Split,
    pub domain: Domain,
    /// Scene seed; eval samples with the same index share it across domains.
    pub seed: u64,
    /// Directory relative to the dataset root.
    pub dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub spec: DatasetSpec,
    pub samples: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn entries(&self, split: Split, domain: Option<Domain>) -> impl Iterator<Item = &ManifestEntry> {
        self.samples
            .iter()
            .filter(move |e| e.split == split && domain.is_none_or(|d| e.domain == d))
    }

    pub fn count(&self, split: Split, domain: Option<Domain>) -> usize {
        self.entries(split, domain).count()
    }
}

/// Per-sample metadata stored as `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub split: Split,
    pub domain: Domain,
    pub seed: u64,
    pub timestamps: Vec<f64>,
    /// Timestamp of the RGB frame; events are paired to it.
    pub t_ref: f64,
    pub frame_interval: f64,
    pub event_count: usize,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_png(path: &Path, data: &[u8], width: usize, height: usize, color: image::ExtendedColorType) -> Result<()> {
    image::save_buffer_with_format(path, data, width as u32, height as u32, color, image::ImageFormat::Png).map_err(|e| {
        Error::Image {
            path: path.to_path_buf(),
            detail: e.to_string(),
        }
    })
}

pub fn boxes_csv(boxes: &[LabeledBox]) -> String {
    let mut s = String::from("class,xmin,ymin,xmax,ymax\n");
    for b in boxes {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            b.class_id, b.bbox.x_min, b.bbox.y_min, b.bbox.x_max, b.bbox.y_max
        ));
    }
    s
}

/// Generates one scene and writes a sample directory for each domain.
fn generate_scene(spec: &DatasetSpec, root: &Path, split: Split, index: usize, domains: &[Domain]) -> Result<Vec<ManifestEntry>> {
    let master = spec.scene.seed;
    let tag = match split {
        Split::Train => "train",
        Split::Eval => "eval",
    };
    let seed = derive_seed_n(master, tag, &[index as u64]);
    let scene_cfg = SceneConfig {
        seed,
        ..spec.scene.clone()
    };
    let scene = render_scene_sequence(&scene_cfg)?;
    let events = simulate_events(&scene.frames, &scene.timestamps, &spec.simulator)?;
    let (h, w) = (spec.scene.height, spec.scene.width);

    let mut entries = Vec::new();
    for &domain in domains {
        let dir = match split {
            Split::Train => format!("train/{index:06}"),
            Split::Eval => format!("eval/{}/{index:06}", domain.name()),
        };
        let path = root.join(&dir);
        fs::create_dir_all(&path).map_err(|e| Error::io(&path, e))?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["noise", domain.name()]));
        let rgb = tone_map(&scene.final_frame().data, &scene.mask, &domain.transform(), &mut rng)?;
        write_png(&path.join(RGB_FILE), &rgb, w, h, image::ExtendedColorType::Rgb8)?;
        write_png(&path.join(MASK_FILE), &scene.mask, w, h, image::ExtendedColorType::L8)?;
        write_events_text(&events, &path.join(EVENTS_FILE))?;
        write_file(&path.join(BOXES_FILE), boxes_csv(&scene.boxes).as_bytes())?;
        let meta = SampleMeta {
            split,
            domain,
            seed,
            timestamps: scene.timestamps.clone(),
            t_ref: scene.t_ref(),
            frame_interval: spec.scene.frame_interval,
            event_count: events.len(),
        };
        let json = serde_json::to_string_pretty(&meta).expect("meta serializes");
        write_file(&path.join(META_FILE), json.as_bytes())?;
        entries.push(ManifestEntry { split, domain, seed, dir });
    }
    Ok(entries)
}

fn generate_into(spec: &DatasetSpec, root: &Path, workers: usize) -> Result<Manifest> {
    let train = map_indexed(spec.n_train, workers, |i| generate_scene(spec, root, Split::Train, i, &[Domain::Day]))?;
    let eval = map_indexed(spec.n_eval_per_domain, workers, |i| {
        generate_scene(spec, root, Split::Eval, i, &spec.domains)
    })?;
    let mut samples = Vec::new();
    for r in train {
        samples.extend(r?);
    }
    let mut eval_entries = Vec::new();
    for r in eval {
        eval_entries.extend(r?);
    }
    // Group eval samples by domain, in the configured domain order.
    for d in &spec.domains {
        samples.extend(eval_entries.iter().filter(|e| e.domain == *d).cloned());
    }
    let manifest = Manifest {
        format_version: 1,
        spec: spec.clone(),
        samples,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&root.join(MANIFEST_FILE), json.as_bytes())?;
    Ok(manifest)
}

/// Writes a dataset: day-only training samples and one directory per
/// evaluation domain. Events are simulated from the HDR sequence before
/// tone mapping, so every domain variant of a scene carries the same
/// event file. On failure an `INVALID` marker with the error replaces the
/// manifest.
pub fn generate_dataset(spec: &DatasetSpec, out_dir: &Path, workers: usize) -> Result<Manifest> {
    spec.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for stale in [MANIFEST_FILE, INVALID_MARKER] {
        let p = out_dir.join(stale);
        if p.exists() {
            fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
        }
    }
    match generate_into(spec, out_dir, workers) {
        Ok(m) => Ok(m),
        Err(e) => {
            let _ = fs::write(out_dir.join(INVALID_MARKER), format!("{e}\n"));
            Err(e)
        }
    }
}

pub fn manifest_path(root: &Path) -> PathBuf {
    root.join(MANIFEST_FILE)
}
