//! Training RGB perception models with event-camera latents as privileged,
//! training-only prediction targets.
//!
//! Numeric code is generic over [`Scalar`] (`f32` for training, `f64` for
//! gradient verification); the aliases below fix the common choices.

pub mod config;
pub mod error;
pub mod eval;
pub mod events;
pub mod geometry;
pub mod nn;
pub mod objective;
pub mod parallel;
pub mod pipeline;
pub mod scalar;
pub mod seed;
pub mod synth;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Model32 = nn::PeprModel<f32>;
pub type Model64 = nn::PeprModel<f64>;
pub type FeatureMap32 = nn::FeatureMap<f32>;
pub type FeatureMap64 = nn::FeatureMap<f64>;
pub type TimeSurface32 = events::TimeSurface<f32>;
pub type TimeSurface64 = events::TimeSurface<f64>;
