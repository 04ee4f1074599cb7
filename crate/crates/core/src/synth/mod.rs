//! Synthetic paired RGB/event scenes with a controlled day-to-night shift.

mod dataset;
mod scene;
mod source;
mod tone;

pub use dataset::{
    boxes_csv, generate_dataset, manifest_path, DatasetSpec, Manifest, ManifestEntry, SampleMeta, Split, BOXES_FILE,
    EVENTS_FILE, INVALID_MARKER, MANIFEST_FILE, MASK_FILE, META_FILE, RGB_FILE,
};
pub use scene::{
    render_layout, render_scene_sequence, sample_layout, Background, LabeledBox, RenderedScene, SceneConfig, SceneLayout,
    ShapeKind, ShapeSpec, BACKGROUND_CLASS, MIN_CONTRAST,
};
pub use source::{
    load_sample, load_split, parse_boxes_csv, read_manifest, AuditedSource, DataSource, EventInputs, FsSource, Sample,
    TAU_FRACTION,
};
pub use tone::{inverse_tone_map, tone_map, Domain, DomainTransform, CLASS_TINTS, GAMMA};
