//! Central finite differences against the tape's analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::composite::{record_objective, Method, ObjectiveSettings, TaskTarget, TrainItem};
use crate::error::{ensure, Result};
use crate::events::{Resolution, TimeSurface};
use crate::geometry::BBox;
use crate::nn::{GridPos, ModelConfig, PeprModel, Tape, Task, TaskHead};
use crate::objective::{detection_targets, LossWeights, IGNORE_LABEL, SIZE_LOSS_WEIGHT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    pub step: f64,
    pub samples_per_group: usize,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Fraction of coordinates that must meet `rel_tol`; the rest must meet `abs_tol`.
    pub min_rel_fraction: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            samples_per_group: 200,
            rel_tol: 1e-4,
            abs_tol: 1e-7,
            min_rel_fraction: 0.99,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub group: String,
    pub checked: usize,
    pub max_rel_error: f64,
    /// Largest absolute error among coordinates that missed `rel_tol`.
    pub max_abs_error_outside_rel: f64,
    pub rel_pass_fraction: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub composite: String,
    pub groups: Vec<GroupReport>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        !self.groups.is_empty() && self.groups.iter().all(|g| g.passed)
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Compares `analytic` (one buffer per store entry) with central
/// differences of `loss` on randomly sampled coordinates of each group.
/// A group is every parameter whose name starts with `"{group}."`.
pub fn check_gradients<F>(
    model: &mut PeprModel<f64>,
    groups: &[&str],
    analytic: &[Vec<f64>],
    mut loss: F,
    cfg: &GradCheckConfig,
) -> Result<Vec<GroupReport>>
where
    F: FnMut(&PeprModel<f64>) -> Result<f64>,
{
    ensure!(cfg.step > 0.0, InvalidConfig, "finite-difference step must be positive");
    ensure!(
        analytic.len() == model.store.len(),
        InvalidInput,
        "analytic gradients cover {} arrays, the model has {}",
        analytic.len(),
        model.store.len()
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut reports = Vec::new();
    for group in groups {
        let prefix = format!("{group}.");
        let coords: Vec<(usize, usize)> = model
            .store
            .iter()
            .filter(|(_, p)| p.name.starts_with(&prefix))
            .flat_map(|(id, p)| (0..p.data.len()).map(move |k| (id.index(), k)))
            .collect();
        ensure!(!coords.is_empty(), InvalidInput, "no parameters in group '{group}'");
        let n = cfg.samples_per_group.min(coords.len());
        let picks = rand::seq::index::sample(&mut rng, coords.len(), n);

        let mut max_rel: f64 = 0.0;
        let mut max_abs_outside: f64 = 0.0;
        let mut rel_ok = 0usize;
        let mut abs_ok = true;
        for i in picks.iter() {
            let (p, k) = coords[i];
            let original = model.store.params_mut()[p].data[k];
            model.store.params_mut()[p].data[k] = original + cfg.step;
            let up = loss(model)?;
            model.store.params_mut()[p].data[k] = original - cfg.step;
            let down = loss(model)?;
            model.store.params_mut()[p].data[k] = original;
            let numeric = (up - down) / (2.0 * cfg.step);
            let a = analytic[p][k];
            let rel = relative_error(a, numeric);
            max_rel = max_rel.max(rel);
            if rel < cfg.rel_tol {
                rel_ok += 1;
            } else {
                let abs = (a - numeric).abs();
                max_abs_outside = max_abs_outside.max(abs);
                abs_ok &= abs < cfg.abs_tol;
            }
        }
        let fraction = rel_ok as f64 / n as f64;
        reports.push(GroupReport {
            group: group.to_string(),
            checked: n,
            max_rel_error: max_rel,
            max_abs_error_outside_rel: max_abs_outside,
            rel_pass_fraction: fraction,
            passed: abs_ok && fraction >= cfg.min_rel_fraction,
        });
    }
    Ok(reports)
}

/// Differentiable pieces checked in isolation or together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Composite {
    /// RGB encoder under a squared-error probe.
    RgbEncoder,
    /// Event encoder under a squared-error probe.
    EventEncoder,
    /// Predictor on fixed features under the predictive loss.
    Predictor,
    SegHead,
    DetHead,
    /// Segmentation classifier under a squared-error probe (quadratic in
    /// the parameters, so central differences are exact up to rounding).
    LinearProbe,
    /// The full weighted objective of one method and task.
    Objective { method: Method, task: Task },
}

impl Composite {
    pub fn name(&self) -> String {
        match self {
            Composite::RgbEncoder => "rgb_encoder".into(),
            Composite::EventEncoder => "event_encoder".into(),
            Composite::Predictor => "predictor".into(),
            Composite::SegHead => "seg_head".into(),
            Composite::DetHead => "det_head".into(),
            Composite::LinearProbe => "linear_probe".into(),
            Composite::Objective { method, task } => {
                let t = match task {
                    Task::Segmentation => "segmentation",
                    Task::Detection => "detection",
                };
                format!("objective_{method}_{t}")
            }
        }
    }

    /// Every composite, with the full objective for each method and task.
    pub fn all() -> Vec<Composite> {
        let mut out = vec![
            Composite::RgbEncoder,
            Composite::EventEncoder,
            Composite::Predictor,
            Composite::SegHead,
            Composite::DetHead,
            Composite::LinearProbe,
        ];
        for task in [Task::Segmentation, Task::Detection] {
            for method in Method::ALL {
                out.push(Composite::Objective { method, task });
            }
        }
        out
    }

    fn task(&self) -> Task {
        match self {
            Composite::DetHead => Task::Detection,
            Composite::Objective { task, .. } => *task,
            _ => Task::Segmentation,
        }
    }

    fn method(&self) -> Method {
        match self {
            Composite::RgbEncoder | Composite::SegHead | Composite::DetHead | Composite::LinearProbe => Method::RgbOnly,
            Composite::EventEncoder => Method::L2Align,
            Composite::Predictor => Method::Pepr,
            Composite::Objective { method, .. } => *method,
        }
    }

    fn groups(&self) -> Vec<&'static str> {
        let head = match self.task() {
            Task::Segmentation => "seg_head",
            Task::Detection => "det_head",
        };
        match self {
            Composite::RgbEncoder => vec!["rgb_encoder"],
            Composite::EventEncoder => vec!["event_encoder"],
            Composite::Predictor => vec!["predictor"],
            Composite::SegHead | Composite::LinearProbe => vec!["seg_head"],
            Composite::DetHead => vec!["det_head"],
            Composite::Objective { method, .. } => match method {
                Method::RgbOnly => vec!["rgb_encoder", head],
                Method::L2Align => vec!["rgb_encoder", "event_encoder", head],
                Method::Pepr => vec!["rgb_encoder", "event_encoder", "predictor", head],
            },
        }
    }
}

/// Random inputs for a miniature model.
pub struct Fixture {
    pub image: Vec<f64>,
    pub surface: TimeSurface<f64>,
    pub mask: Vec<u8>,
    pub boxes: Vec<BBox>,
    pub locations: Vec<GridPos>,
    pub patch_size: usize,
    pub features: Vec<f64>,
    pub feature_target: Vec<f64>,
    pub patch_targets: Vec<f64>,
}

impl Fixture {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (cfg.image_height, cfg.image_width);
        let (gh, gw, d) = (cfg.grid_height(), cfg.grid_width(), cfg.feature_dim);
        let image = (0..h * w * 3).map(|_| rng.random::<f64>()).collect();
        let values = (0..h * w * 2)
            .map(|_| if rng.random_bool(0.3) { (-rng.random::<f64>() * 3.0).exp() } else { 0.0 })
            .collect();
        let surface = TimeSurface {
            resolution: Resolution::new(h, w),
            values,
            t_ref: 1.0,
            tau: 0.5,
        };
        let mask = (0..h * w)
            .map(|_| {
                if rng.random_bool(0.05) {
                    IGNORE_LABEL
                } else {
                    rng.random_range(0..cfg.num_classes) as u8
                }
            })
            .collect();
        let mut boxes = Vec::new();
        for _ in 0..2 {
            let bw = rng.random_range(4.0..(w as f64 / 2.0));
            let bh = rng.random_range(4.0..(h as f64 / 2.0));
            let x0 = rng.random_range(0.0..(w as f64 - bw));
            let y0 = rng.random_range(0.0..(h as f64 - bh));
            boxes.push(BBox::new(x0, y0, x0 + bw, y0 + bh));
        }
        let patch_size = 1;
        // Every cell once, in a scrambled order, so no query row is unused.
        let mut locations: Vec<GridPos> = (0..gh * gw).map(|i| GridPos::new(i / gw, i % gw)).collect();
        locations.reverse();
        locations.swap(0, gh * gw / 2);
        let normal = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> { (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect() };
        let features = normal(&mut rng, gh * gw * d);
        let feature_target = normal(&mut rng, gh * gw * d);
        let patch_targets = normal(&mut rng, locations.len() * d);
        Self {
            image,
            surface,
            mask,
            boxes,
            locations,
            patch_size,
            features,
            feature_target,
            patch_targets,
        }
    }
}

fn evaluate(
    model: &PeprModel<f64>,
    fx: &Fixture,
    composite: Composite,
    want_grads: bool,
) -> Result<(f64, Option<Vec<Vec<f64>>>)> {
    let cfg = &model.config;
    let (h, w) = (cfg.image_height, cfg.image_width);
    let (gh, gw, d) = (cfg.grid_height(), cfg.grid_width(), cfg.feature_dim);
    let mut tape = Tape::new();
    let loss = match composite {
        Composite::RgbEncoder => {
            let x = tape.leaf(fx.image.clone(), h * w, 3);
            let f = model.rgb_encoder.forward(&mut tape, &model.store, x, h, w);
            let t = tape.leaf(fx.feature_target.clone(), gh * gw, d);
            tape.mean_squared_error(f, t)
        }
        Composite::EventEncoder => {
            let enc = model.event_encoder.as_ref().expect("event encoder");
            let x = tape.leaf(fx.surface.values.clone(), h * w, 2);
            let f = enc.forward(&mut tape, &model.store, x, h, w);
            let t = tape.leaf(fx.feature_target.clone(), gh * gw, d);
            tape.mean_squared_error(f, t)
        }
        Composite::Predictor => {
            let pred = model.predictor.as_ref().expect("predictor");
            let f = tape.leaf(fx.features.clone(), gh * gw, d);
            let p = pred.forward(&mut tape, &model.store, f, &fx.locations);
            let t = tape.leaf(fx.patch_targets.clone(), fx.locations.len(), d);
            tape.patch_squared_error(p, t)
        }
        Composite::SegHead | Composite::LinearProbe | Composite::DetHead => {
            let f = tape.leaf(fx.features.clone(), gh * gw, d);
            match (&model.head, composite) {
                (TaskHead::Segmentation(head), Composite::SegHead) => {
                    let logits = head.forward(&mut tape, &model.store, f);
                    tape.softmax_cross_entropy(logits, &fx.mask, IGNORE_LABEL)
                }
                (TaskHead::Segmentation(head), Composite::LinearProbe) => {
                    let logits = head.forward(&mut tape, &model.store, f);
                    let target = vec![0.25; h * w * cfg.num_classes];
                    let t = tape.leaf(target, h * w, cfg.num_classes);
                    tape.mean_squared_error(logits, t)
                }
                (TaskHead::Detection(head), Composite::DetHead) => {
                    let (obj, sizes) = detection_targets::<f64>(&fx.boxes, gh, gw, cfg.stride())?;
                    let (logits, size_map) = head.forward(&mut tape, &model.store, f);
                    tape.detection_loss(logits, size_map, &obj, &sizes, SIZE_LOSS_WEIGHT)
                }
                _ => unreachable!("head matches composite task"),
            }
        }
        Composite::Objective { method, task } => {
            let target = match task {
                Task::Segmentation => TaskTarget::Mask(&fx.mask),
                Task::Detection => TaskTarget::Boxes(&fx.boxes),
            };
            let item = TrainItem {
                image: &fx.image,
                surface: Some(&fx.surface),
                target,
            };
            let settings = ObjectiveSettings {
                method,
                weights: LossWeights { task: 1.0, feat: 0.5 },
                patch_size: fx.patch_size,
                stop_gradient: false,
            };
            record_objective(&mut tape, model, &item, &settings, &fx.locations)?.total
        }
    };
    let value = tape.scalar(loss);
    let grads = want_grads.then(|| {
        let mut acc = model.store.zeros_like();
        tape.backward(loss).accumulate_into(&mut acc);
        acc
    });
    Ok((value, grads))
}

/// Miniature model for `composite`, initialized from `seed`. The query
/// table is scaled up from its 0.02 init so self-attention scores are not
/// nearly constant, which would leave only rounding noise in the
/// finite differences of the attention weights.
pub fn miniature_model(composite: Composite, seed: u64) -> Result<PeprModel<f64>> {
    let mut model = PeprModel::new(ModelConfig::miniature(), composite.task(), composite.method().components(), seed)?;
    if let Some(id) = model.store.id("predictor.queries") {
        for v in &mut model.store.get_mut(id).data {
            *v *= 25.0;
        }
    }
    Ok(model)
}

/// Analytic gradients of `composite` on its fixture.
pub fn analytic_gradients(model: &PeprModel<f64>, fixture: &Fixture, composite: Composite) -> Result<Vec<Vec<f64>>> {
    Ok(evaluate(model, fixture, composite, true)?.1.expect("gradients requested"))
}

/// Loss of `composite` on its fixture.
pub fn composite_loss(model: &PeprModel<f64>, fixture: &Fixture, composite: Composite) -> Result<f64> {
    Ok(evaluate(model, fixture, composite, false)?.0)
}

/// Finite-difference check of one composite on a seeded miniature model.
pub fn gradient_check(composite: Composite, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut model = miniature_model(composite, cfg.seed)?;
    let fixture = Fixture::new(&model.config, cfg.seed ^ 0x5eed);
    let analytic = analytic_gradients(&model, &fixture, composite)?;
    let groups = composite.groups();
    let reports = check_gradients(
        &mut model,
        &groups,
        &analytic,
        |m| composite_loss(m, &fixture, composite),
        cfg,
    )?;
    Ok(GradCheckReport {
        composite: composite.name(),
        groups: reports,
    })
}
