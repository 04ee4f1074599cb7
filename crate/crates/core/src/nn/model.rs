use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, Task};
use super::detect::{decode_detections, Detection};
use super::feature::{FeatureMap, GridPos, Modality};
use super::layers::{ConvEncoder, Declare, DetHead, Predictor, SegHead};
use super::params::ParamStore;
use super::tape::{sigmoid_value, Tape};
use crate::error::{ensure, Result};
use crate::events::TimeSurface;
use crate::scalar::Scalar;
use crate::seed::derive_seed;

pub const RGB_ENCODER: &str = "rgb_encoder";
pub const EVENT_ENCODER: &str = "event_encoder";
pub const PREDICTOR: &str = "predictor";

/// True for arrays that belong to the training-only event branch.
pub fn is_privileged(name: &str) -> bool {
    name.starts_with("event_encoder.") || name.starts_with("predictor.")
}

/// Which optional training-time components to instantiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Components {
    pub event_encoder: bool,
    pub predictor: bool,
}

impl Components {
    pub const RGB_ONLY: Self = Self {
        event_encoder: false,
        predictor: false,
    };
    pub const ALIGNMENT: Self = Self {
        event_encoder: true,
        predictor: false,
    };
    pub const PREDICTIVE: Self = Self {
        event_encoder: true,
        predictor: true,
    };
}

pub enum TaskHead {
    Segmentation(SegHead),
    Detection(DetHead),
}

/// Parameters plus the component wiring that reads them.
pub struct PeprModel<T> {
    pub config: ModelConfig,
    pub task: Task,
    pub store: ParamStore<T>,
    pub rgb_encoder: ConvEncoder,
    pub event_encoder: Option<ConvEncoder>,
    pub predictor: Option<Predictor>,
    pub head: TaskHead,
}

impl<T: Scalar> PeprModel<T> {
    /// Freshly initialized model. Each component draws from its own stream
    /// derived from `seed`, so the RGB path initializes identically
    /// whatever optional components are present.
    pub fn new(config: ModelConfig, task: Task, components: Components, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let rng_for = |tag: &str| ChaCha8Rng::seed_from_u64(derive_seed(seed, &["init", tag]));

        let mut rng = rng_for(RGB_ENCODER);
        let rgb_encoder = ConvEncoder::declare(&mut store, &mut Declare::init(&mut rng), RGB_ENCODER, &config, 3)?;
        let mut rng = rng_for("head");
        let head = Self::declare_head(&mut store, &mut Declare::init(&mut rng), &config, task)?;
        let event_encoder = if components.event_encoder {
            let mut rng = rng_for(EVENT_ENCODER);
            Some(ConvEncoder::declare(&mut store, &mut Declare::init(&mut rng), EVENT_ENCODER, &config, 2)?)
        } else {
            None
        };
        let predictor = if components.predictor {
            let mut rng = rng_for(PREDICTOR);
            Some(Predictor::declare(&mut store, &mut Declare::init(&mut rng), &config)?)
        } else {
            None
        };
        Ok(Self {
            config,
            task,
            store,
            rgb_encoder,
            event_encoder,
            predictor,
            head,
        })
    }

    /// Rebinds components to a loaded store. Optional components are
    /// present exactly when their arrays are.
    pub fn from_store(config: ModelConfig, task: Task, store: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let mut store = store;
        let has = |prefix: &str, s: &ParamStore<T>| s.iter().any(|(_, p)| p.name.starts_with(&format!("{prefix}.")));
        let has_event = has(EVENT_ENCODER, &store);
        let has_pred = has(PREDICTOR, &store);
        let rgb_encoder = ConvEncoder::declare(&mut store, &mut Declare::bind(), RGB_ENCODER, &config, 3)?;
        let head = Self::declare_head(&mut store, &mut Declare::bind(), &config, task)?;
        let event_encoder = if has_event {
            Some(ConvEncoder::declare(&mut store, &mut Declare::bind(), EVENT_ENCODER, &config, 2)?)
        } else {
            None
        };
        let predictor = if has_pred {
            Some(Predictor::declare(&mut store, &mut Declare::bind(), &config)?)
        } else {
            None
        };
        Ok(Self {
            config,
            task,
            store,
            rgb_encoder,
            event_encoder,
            predictor,
            head,
        })
    }

    fn declare_head(store: &mut ParamStore<T>, decl: &mut Declare<'_>, config: &ModelConfig, task: Task) -> Result<TaskHead> {
        Ok(match task {
            Task::Segmentation => TaskHead::Segmentation(SegHead::declare(store, decl, config)?),
            Task::Detection => TaskHead::Detection(DetHead::declare(store, decl, config)?),
        })
    }

    /// The deployable subset: RGB encoder and task head only.
    pub fn inference_store(&self) -> ParamStore<T> {
        self.store.filtered(|n| !is_privileged(n))
    }

    fn grid(&self) -> (usize, usize) {
        (self.config.grid_height(), self.config.grid_width())
    }

    fn to_feature_map(&self, tape: &Tape<T>, v: super::tape::Var, modality: Modality) -> FeatureMap<T> {
        let (h, w) = self.grid();
        FeatureMap::new(h, w, self.config.feature_dim, tape.value(v).to_vec(), modality).expect("encoder output shape")
    }

    /// Encodes an `H x W x 3` image with values in `[0, 1]`.
    pub fn rgb_encode(&self, image: &[T]) -> Result<FeatureMap<T>> {
        let (h, w) = (self.config.image_height, self.config.image_width);
        ensure!(
            image.len() == h * w * 3,
            InvalidInput,
            "image holds {} values, expected {h}x{w}x3",
            image.len()
        );
        let mut tape = Tape::new();
        let x = tape.leaf(image.to_vec(), h * w, 3);
        let f = self.rgb_encoder.forward(&mut tape, &self.store, x, h, w);
        Ok(self.to_feature_map(&tape, f, Modality::Rgb))
    }

    /// Encodes a two-channel time surface with the event encoder.
    pub fn event_encode(&self, surface: &TimeSurface<T>) -> Result<FeatureMap<T>> {
        let enc = self
            .event_encoder
            .as_ref()
            .ok_or_else(|| crate::Error::InvalidInput("model has no event encoder".into()))?;
        let (h, w) = (self.config.image_height, self.config.image_width);
        ensure!(
            surface.resolution.height == h && surface.resolution.width == w && surface.values.len() == h * w * 2,
            InvalidInput,
            "time surface {}x{} does not match model input {h}x{w}",
            surface.resolution.height,
            surface.resolution.width
        );
        let mut tape = Tape::new();
        let x = tape.leaf(surface.values.clone(), h * w, 2);
        let f = enc.forward(&mut tape, &self.store, x, h, w);
        Ok(self.to_feature_map(&tape, f, Modality::Event))
    }

    fn check_features(&self, features: &FeatureMap<T>) -> Result<()> {
        let (h, w) = self.grid();
        ensure!(
            features.shape() == (h, w, self.config.feature_dim),
            InvalidInput,
            "feature map {:?} does not match the model grid {h}x{w}x{}",
            features.shape(),
            self.config.feature_dim
        );
        Ok(())
    }

    /// One predicted latent vector per location, in input order.
    pub fn predict_patches(&self, features: &FeatureMap<T>, locations: &[GridPos]) -> Result<Vec<Vec<T>>> {
        let pred = self
            .predictor
            .as_ref()
            .ok_or_else(|| crate::Error::InvalidInput("model has no predictor".into()))?;
        self.check_features(features)?;
        pred.check_locations(locations)?;
        if locations.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let (h, w) = self.grid();
        let tokens = tape.leaf(features.data.clone(), h * w, self.config.feature_dim);
        let out = pred.forward(&mut tape, &self.store, tokens, locations);
        Ok(tape
            .value(out)
            .chunks(self.config.feature_dim)
            .map(<[T]>::to_vec)
            .collect())
    }

    /// Per-pixel class logits, `(H*W) x num_classes` row-major.
    pub fn seg_head_forward(&self, features: &FeatureMap<T>) -> Result<Vec<T>> {
        self.check_features(features)?;
        let TaskHead::Segmentation(head) = &self.head else {
            return Err(crate::Error::InvalidInput("model has no segmentation head".into()));
        };
        let mut tape = Tape::new();
        let (h, w) = self.grid();
        let f = tape.leaf(features.data.clone(), h * w, self.config.feature_dim);
        let logits = head.forward(&mut tape, &self.store, f);
        Ok(tape.value(logits).to_vec())
    }

    /// Objectness probabilities per cell and `(width, height)` per cell.
    pub fn det_head_forward(&self, features: &FeatureMap<T>) -> Result<(Vec<T>, Vec<T>)> {
        self.check_features(features)?;
        let TaskHead::Detection(head) = &self.head else {
            return Err(crate::Error::InvalidInput("model has no detection head".into()));
        };
        let mut tape = Tape::new();
        let (h, w) = self.grid();
        let f = tape.leaf(features.data.clone(), h * w, self.config.feature_dim);
        let (logits, sizes) = head.forward(&mut tape, &self.store, f);
        let heat = tape.value(logits).iter().map(|z| sigmoid_value(*z)).collect();
        Ok((heat, tape.value(sizes).to_vec()))
    }

    /// Arg-max class per pixel.
    pub fn segment(&self, image: &[T]) -> Result<Vec<u8>> {
        let f = self.rgb_encode(image)?;
        let logits = self.seg_head_forward(&f)?;
        let k = self.config.num_classes;
        Ok(logits
            .chunks(k)
            .map(|row| {
                let mut best = 0;
                for (j, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = j;
                    }
                }
                best as u8
            })
            .collect())
    }

    /// Peak-decoded boxes from the detection head.
    pub fn detect(&self, image: &[T], score_threshold: f64, max_dets: usize) -> Result<Vec<Detection>> {
        let f = self.rgb_encode(image)?;
        let (heat, sizes) = self.det_head_forward(&f)?;
        let (gh, gw) = self.grid();
        Ok(decode_detections(&heat, &sizes, gh, gw, self.config.stride(), score_threshold, max_dets))
    }
}
