//! Differentiable network components: encoders, patch predictor, task heads.

mod checkpoint;
mod config;
mod detect;
mod feature;
mod layers;
mod model;
mod params;
pub mod tape;

pub use checkpoint::{Checkpoint, CheckpointHeader, CheckpointKind};
pub use config::{ModelConfig, Task};
pub use detect::{decode_detections, Detection};
pub use feature::{FeatureMap, GridPos, Modality};
pub use layers::{sinusoidal_positions, weight_decay_applies, ConvEncoder, DetHead, Predictor, SegHead};
pub use model::{is_privileged, Components, PeprModel, TaskHead, EVENT_ENCODER, PREDICTOR, RGB_ENCODER};
pub use params::{Init, Param, ParamId, ParamStore};
pub use tape::{Grads, Tape, Var};
