use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Downstream task trained on top of the RGB encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Segmentation,
    Detection,
}

/// Network dimensions shared by both encoders, the predictor and the heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub image_height: usize,
    pub image_width: usize,
    /// Output channels of each stride-2 block; the last equals `feature_dim`.
    pub encoder_channels: Vec<usize>,
    pub feature_dim: usize,
    pub norm_groups: usize,
    pub predictor_depth: usize,
    pub predictor_heads: usize,
    pub predictor_ffn_dim: usize,
    /// Segmentation classes including background.
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_height: 128,
            image_width: 128,
            encoder_channels: vec![16, 32, 64, 64],
            feature_dim: 64,
            norm_groups: 4,
            predictor_depth: 4,
            predictor_heads: 8,
            predictor_ffn_dim: 128,
            num_classes: 4,
        }
    }
}

impl ModelConfig {
    /// A few-hundred-parameter network for finite-difference checks.
    pub fn miniature() -> Self {
        Self {
            image_height: 32,
            image_width: 32,
            encoder_channels: vec![2, 2, 4, 4],
            feature_dim: 4,
            norm_groups: 1,
            predictor_depth: 1,
            predictor_heads: 2,
            predictor_ffn_dim: 4,
            num_classes: 4,
        }
    }

    pub fn stride(&self) -> usize {
        1 << self.encoder_channels.len()
    }

    pub fn grid_height(&self) -> usize {
        self.image_height / self.stride()
    }

    pub fn grid_width(&self) -> usize {
        self.image_width / self.stride()
    }

    pub fn grid_cells(&self) -> usize {
        self.grid_height() * self.grid_width()
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            !self.encoder_channels.is_empty(),
            InvalidConfig,
            "encoder needs at least one block"
        );
        ensure!(
            self.encoder_channels.last() == Some(&self.feature_dim),
            InvalidConfig,
            "last encoder block has {:?} channels, feature_dim is {}",
            self.encoder_channels.last(),
            self.feature_dim
        );
        let s = self.stride();
        ensure!(
            self.image_height >= s
                && self.image_width >= s
                && self.image_height % s == 0
                && self.image_width % s == 0,
            InvalidConfig,
            "image {}x{} is not a multiple of the encoder stride {s}",
            self.image_height,
            self.image_width
        );
        ensure!(
            self.norm_groups > 0
                && self.encoder_channels.iter().all(|c| *c > 0 && c % self.norm_groups == 0),
            InvalidConfig,
            "encoder channels {:?} not divisible into {} groups",
            self.encoder_channels,
            self.norm_groups
        );
        ensure!(
            self.predictor_heads > 0 && self.feature_dim % self.predictor_heads == 0,
            InvalidConfig,
            "feature_dim {} not divisible by {} heads",
            self.feature_dim,
            self.predictor_heads
        );
        ensure!(
            self.feature_dim % 4 == 0,
            InvalidConfig,
            "feature_dim {} must be a multiple of 4 for 2-D position encodings",
            self.feature_dim
        );
        ensure!(
            self.predictor_depth > 0 && self.predictor_ffn_dim > 0,
            InvalidConfig,
            "predictor depth and feed-forward width must be positive"
        );
        ensure!(
            self.num_classes >= 2 && self.num_classes < 255,
            InvalidConfig,
            "num_classes must be in [2, 254]"
        );
        Ok(())
    }
}
