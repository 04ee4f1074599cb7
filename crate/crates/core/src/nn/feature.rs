use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Rgb,
    Event,
}

/// Top-left anchor of a patch window on the feature grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridPos {
    pub y: usize,
    pub x: usize,
}

impl GridPos {
    pub fn new(y: usize, x: usize) -> Self {
        Self { y, x }
    }
}

/// Spatial grid of latent vectors, stored `(y, x, d)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub data: Vec<T>,
    pub modality: Modality,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(height: usize, width: usize, dim: usize, data: Vec<T>, modality: Modality) -> Result<Self> {
        ensure!(
            data.len() == height * width * dim,
            InvalidInput,
            "feature map holds {} values, expected {}x{}x{}",
            data.len(),
            height,
            width,
            dim
        );
        Ok(Self {
            height,
            width,
            dim,
            data,
            modality,
        })
    }

    pub fn filled(height: usize, width: usize, dim: usize, value: T, modality: Modality) -> Self {
        Self {
            height,
            width,
            dim,
            data: vec![value; height * width * dim],
            modality,
        }
    }

    pub fn vector(&self, y: usize, x: usize) -> &[T] {
        &self.data[(y * self.width + x) * self.dim..][..self.dim]
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.dim)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
