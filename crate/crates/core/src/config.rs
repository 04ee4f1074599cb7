//! The single JSON run configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{ensure, Error, Result};
use crate::nn::{ModelConfig, Task};
use crate::synth::{DatasetSpec, Domain};
use crate::train::{GradCheckConfig, TrainConfig};

pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed. Resolution copies it into `data.scene.seed` and `train.seed`.
    pub seed: u64,
    pub data: DatasetSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval_domains: Vec<Domain>,
    /// Dataset root used when no `--data` flag is given.
    pub data_dir: Option<PathBuf>,
    /// Output root used when no `--out` flag is given.
    pub out_dir: Option<PathBuf>,
    pub gradcheck: GradCheckConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_task(Task::Segmentation)
    }
}

/// Overlays `patch` onto `base`, recursing into objects.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    pub fn for_task(task: Task) -> Self {
        let mut cfg = Self {
            seed: 0,
            data: DatasetSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::for_task(task),
            eval_domains: Domain::STANDARD.to_vec(),
            data_dir: None,
            out_dir: None,
            gradcheck: GradCheckConfig::default(),
        };
        cfg.resolve();
        cfg
    }

    /// Parses a config document. Missing fields take the defaults of the
    /// task named in `train.task`; unknown keys are errors.
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let user: Value = serde_json::from_str(text).map_err(|e| Error::format(origin, e.to_string()))?;
        ensure!(user.is_object(), InvalidConfig, "{}: top level must be an object", origin.display());
        let task: Task = match user.pointer("/train/task") {
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|e| Error::InvalidConfig(format!("{}: train.task: {e}", origin.display())))?,
            None => Task::Segmentation,
        };
        let mut merged = serde_json::to_value(Self::for_task(task)).expect("config serializes");
        merge(&mut merged, user);
        let mut cfg: Self =
            serde_json::from_value(merged).map_err(|e| Error::InvalidConfig(format!("{}: {e}", origin.display())))?;
        cfg.resolve();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    pub fn resolve(&mut self) {
        self.data.scene.seed = self.seed;
        self.train.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.train.validate(&self.model)?;
        ensure!(
            self.model.image_height == self.data.scene.height && self.model.image_width == self.data.scene.width,
            InvalidConfig,
            "model input {}x{} does not match scene {}x{}",
            self.model.image_height,
            self.model.image_width,
            self.data.scene.height,
            self.data.scene.width
        );
        ensure!(!self.eval_domains.is_empty(), InvalidConfig, "eval_domains is empty");
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Writes the resolved config into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(RESOLVED_CONFIG_FILE);
        std::fs::write(&path, self.to_json()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
