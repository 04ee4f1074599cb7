use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Display gamma shared by every domain.
pub const GAMMA: f64 = 2.2;

/// Per-class colour multipliers (background, circle, square, triangle).
pub const CLASS_TINTS: [[f64; 3]; 4] = [
    [1.0, 1.0, 1.0],
    [1.0, 0.78, 0.78],
    [0.78, 1.0, 0.78],
    [0.78, 0.78, 1.0],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Day,
    Dusk,
    Night,
    PitchBlack,
}

impl Domain {
    pub const ALL: [Domain; 4] = [Domain::Day, Domain::Dusk, Domain::Night, Domain::PitchBlack];
    pub const STANDARD: [Domain; 3] = [Domain::Day, Domain::Dusk, Domain::Night];

    pub fn name(self) -> &'static str {
        match self {
            Domain::Day => "day",
            Domain::Dusk => "dusk",
            Domain::Night => "night",
            Domain::PitchBlack => "pitch_black",
        }
    }

    pub fn transform(self) -> DomainTransform {
        let (gain, noise_sigma) = match self {
            Domain::Day => (1.0, 1.0),
            Domain::Dusk => (0.15, 4.0),
            Domain::Night => (0.02, 10.0),
            Domain::PitchBlack => (0.005, 10.0),
        };
        DomainTransform {
            domain: self,
            gain,
            gamma: GAMMA,
            noise_sigma,
        }
    }
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Domain::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown domain '{s}' (day, dusk, night, pitch_black)")))
    }
}

/// Camera response of one lighting domain, quantized to 8 bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainTransform {
    pub domain: Domain,
    pub gain: f64,
    pub gamma: f64,
    /// Standard deviation of additive noise on the 0..255 scale.
    pub noise_sigma: f64,
}

impl DomainTransform {
    pub fn noiseless(self) -> Self {
        Self {
            noise_sigma: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.gain > 0.0 && self.gain <= 1.0,
            InvalidConfig,
            "gain {} outside (0, 1]",
            self.gain
        );
        ensure!(self.gamma > 0.0, InvalidConfig, "gamma must be positive");
        ensure!(self.noise_sigma >= 0.0, InvalidConfig, "noise sigma must be non-negative");
        Ok(())
    }

    /// Noise-free display value on the 0..255 scale before tinting.
    pub fn display(&self, luminance: f64) -> f64 {
        255.0 * (self.gain * luminance).powf(1.0 / self.gamma)
    }

    /// Mean signal of a full-scale input over the noise level.
    pub fn snr(&self) -> f64 {
        self.display(1.0) / self.noise_sigma
    }
}

/// Maps HDR luminance in `[0, 1]` to an 8-bit `H x W x 3` image. Each
/// pixel is tinted by the chroma of its class in `classes`.
pub fn tone_map(luminance: &[f64], classes: &[u8], transform: &DomainTransform, rng: &mut impl Rng) -> Result<Vec<u8>> {
    transform.validate()?;
    ensure!(
        luminance.len() == classes.len(),
        InvalidInput,
        "{} luminance values but {} class labels",
        luminance.len(),
        classes.len()
    );
    ensure!(
        luminance.iter().all(|l| (0.0..=1.0).contains(l)),
        InvalidInput,
        "luminance outside [0, 1]"
    );
    ensure!(
        classes.iter().all(|c| (*c as usize) < CLASS_TINTS.len()),
        InvalidInput,
        "class id without a tint"
    );
    let noise = Normal::new(0.0, transform.noise_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut out = Vec::with_capacity(luminance.len() * 3);
    for (l, c) in luminance.iter().zip(classes) {
        let v = transform.display(*l);
        for tint in CLASS_TINTS[*c as usize] {
            let n = if transform.noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
            out.push((v * tint + n).round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(out)
}

/// Luminance that a noise-free untinted pixel value came from.
pub fn inverse_tone_map(pixel: u8, transform: &DomainTransform) -> f64 {
    (pixel as f64 / 255.0).powf(transform.gamma) / transform.gain
}
