//! The per-sample training objective recorded on one tape.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::events::TimeSurface;
use crate::geometry::BBox;
use crate::nn::{GridPos, PeprModel, Tape, TaskHead, Var};
use crate::objective::{detection_targets, LossWeights, IGNORE_LABEL};
use crate::scalar::Scalar;

/// Training recipe being compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    RgbOnly,
    L2Align,
    Pepr,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::RgbOnly, Method::L2Align, Method::Pepr];

    pub fn name(self) -> &'static str {
        match self {
            Method::RgbOnly => "rgb_only",
            Method::L2Align => "l2_align",
            Method::Pepr => "pepr",
        }
    }

    pub fn uses_events(self) -> bool {
        self != Method::RgbOnly
    }

    pub fn components(self) -> crate::nn::Components {
        match self {
            Method::RgbOnly => crate::nn::Components::RGB_ONLY,
            Method::L2Align => crate::nn::Components::ALIGNMENT,
            Method::Pepr => crate::nn::Components::PREDICTIVE,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method '{s}' (rgb_only, l2_align, pepr)")))
    }
}

/// Supervision for the task head.
#[derive(Debug, Clone, Copy)]
pub enum TaskTarget<'a> {
    Mask(&'a [u8]),
    Boxes(&'a [BBox]),
}

/// One training example as the objective sees it.
#[derive(Debug, Clone, Copy)]
pub struct TrainItem<'a, T> {
    /// `H x W x 3`, values in `[0, 1]`.
    pub image: &'a [T],
    pub surface: Option<&'a TimeSurface<T>>,
    pub target: TaskTarget<'a>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveSettings {
    pub method: Method,
    pub weights: LossWeights,
    pub patch_size: usize,
    /// Blocks the predictive gradient from reaching the event encoder.
    pub stop_gradient: bool,
}

/// Handles to the interesting nodes of a recorded objective.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveVars {
    pub total: Var,
    pub task: Var,
    pub feat: Option<Var>,
    pub rgb_features: Var,
    pub event_features: Option<Var>,
    pub targets: Option<Var>,
    pub predictions: Option<Var>,
}

/// Records the task loss and, depending on the method, the alignment or
/// predictive term and their weighted sum. `locations` is only read by
/// the predictive method.
pub fn record_objective<T: Scalar>(
    tape: &mut Tape<T>,
    model: &PeprModel<T>,
    item: &TrainItem<'_, T>,
    settings: &ObjectiveSettings,
    locations: &[GridPos],
) -> Result<ObjectiveVars> {
    let cfg = &model.config;
    let (h, w) = (cfg.image_height, cfg.image_width);
    let (gh, gw) = (cfg.grid_height(), cfg.grid_width());
    ensure!(
        item.image.len() == h * w * 3,
        InvalidInput,
        "image holds {} values, expected {h}x{w}x3",
        item.image.len()
    );
    let x = tape.leaf(item.image.to_vec(), h * w, 3);
    let rgb = model.rgb_encoder.forward(tape, &model.store, x, h, w);

    let task = match (&model.head, item.target) {
        (TaskHead::Segmentation(head), TaskTarget::Mask(mask)) => {
            crate::objective::check_mask(mask, h * w, cfg.num_classes)?;
            let logits = head.forward(tape, &model.store, rgb);
            tape.softmax_cross_entropy(logits, mask, IGNORE_LABEL)
        }
        (TaskHead::Detection(head), TaskTarget::Boxes(boxes)) => {
            let (obj, sizes) = detection_targets::<T>(boxes, gh, gw, cfg.stride())?;
            let (logits, size_map) = head.forward(tape, &model.store, rgb);
            tape.detection_loss(logits, size_map, &obj, &sizes, T::c(crate::objective::SIZE_LOSS_WEIGHT))
        }
        _ => return Err(Error::InvalidInput("task target does not match the model head".into())),
    };

    let mut vars = ObjectiveVars {
        total: task,
        task,
        feat: None,
        rgb_features: rgb,
        event_features: None,
        targets: None,
        predictions: None,
    };
    let weights = &settings.weights;
    if settings.method == Method::RgbOnly {
        vars.total = tape.weighted_sum(task, task, T::c(weights.task), T::zero());
        return Ok(vars);
    }

    let surface = item
        .surface
        .ok_or_else(|| Error::MissingModality(format!("{} needs a time surface", settings.method)))?;
    let enc = model
        .event_encoder
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("model has no event encoder".into()))?;
    ensure!(
        surface.resolution.height == h && surface.resolution.width == w,
        InvalidInput,
        "time surface {}x{} does not match model input {h}x{w}",
        surface.resolution.height,
        surface.resolution.width
    );
    let ts = tape.leaf(surface.values.clone(), h * w, 2);
    let mut ev = enc.forward(tape, &model.store, ts, h, w);
    vars.event_features = Some(ev);
    if settings.stop_gradient {
        ev = tape.detach(ev);
    }

    let feat = match settings.method {
        Method::L2Align => tape.mean_squared_error(rgb, ev),
        Method::Pepr => {
            let pred = model
                .predictor
                .as_ref()
                .ok_or_else(|| Error::InvalidInput("model has no predictor".into()))?;
            ensure!(!locations.is_empty(), InvalidInput, "predictive loss needs M >= 1 locations");
            pred.check_locations(locations)?;
            let s = settings.patch_size;
            for p in locations {
                ensure!(
                    s >= 1 && p.y + s <= gh && p.x + s <= gw,
                    InvalidInput,
                    "{s}x{s} window at ({}, {}) leaves the {gh}x{gw} grid",
                    p.y,
                    p.x
                );
            }
            let anchors: Vec<(usize, usize)> = locations.iter().map(|p| (p.y, p.x)).collect();
            let targets = tape.window_mean(ev, gh, gw, &anchors, s);
            let predictions = pred.forward(tape, &model.store, rgb, locations);
            vars.targets = Some(targets);
            vars.predictions = Some(predictions);
            tape.patch_squared_error(predictions, targets)
        }
        Method::RgbOnly => unreachable!(),
    };
    vars.feat = Some(feat);
    vars.total = tape.weighted_sum(task, feat, T::c(weights.task), T::c(weights.feat));
    Ok(vars)
}
