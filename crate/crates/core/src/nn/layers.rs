//! Network components expressed as tape operations.

use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::feature::GridPos;
use super::params::{Init, ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{ensure, Result};
use crate::scalar::Scalar;

/// Normalization parameters and the query table are exempt from weight decay.
pub fn weight_decay_applies(name: &str) -> bool {
    !(name.contains(".norm") || name.ends_with(".queries"))
}

/// Declares a fresh parameter when an rng is supplied, otherwise binds an
/// existing one by name.
pub(crate) struct Declare<'a> {
    rng: Option<&'a mut ChaCha8Rng>,
}

impl<'a> Declare<'a> {
    pub fn init(rng: &'a mut ChaCha8Rng) -> Self {
        Self { rng: Some(rng) }
    }

    pub fn bind() -> Self {
        Self { rng: None }
    }

    fn param<T: Scalar>(
        &mut self,
        store: &mut ParamStore<T>,
        name: &str,
        shape: &[usize],
        init: Init,
    ) -> Result<ParamId> {
        match self.rng.as_deref_mut() {
            Some(rng) => store.init(name, shape, init, weight_decay_applies(name), rng),
            None => store.bind(name, shape),
        }
    }
}

struct ConvBlock {
    weight: ParamId,
    bias: ParamId,
    gain: ParamId,
    shift: ParamId,
}

/// Stack of `conv3x3(stride 2) -> group norm -> SiLU` blocks.
pub struct ConvEncoder {
    blocks: Vec<ConvBlock>,
    in_channels: usize,
    groups: usize,
}

impl ConvEncoder {
    pub(crate) fn declare<T: Scalar>(
        store: &mut ParamStore<T>,
        decl: &mut Declare<'_>,
        prefix: &str,
        cfg: &ModelConfig,
        in_channels: usize,
    ) -> Result<Self> {
        let mut blocks = Vec::new();
        let mut cin = in_channels;
        for (i, &cout) in cfg.encoder_channels.iter().enumerate() {
            let fan_in = 9 * cin;
            let p = format!("{prefix}.block{i}");
            blocks.push(ConvBlock {
                weight: decl.param(store, &format!("{p}.conv.weight"), &[fan_in, cout], Init::FanInUniform { fan_in })?,
                bias: decl.param(store, &format!("{p}.conv.bias"), &[cout], Init::FanInUniform { fan_in })?,
                gain: decl.param(store, &format!("{p}.norm.gain"), &[cout], Init::Const(1.0))?,
                shift: decl.param(store, &format!("{p}.norm.bias"), &[cout], Init::Const(0.0))?,
            });
            cin = cout;
        }
        Ok(Self {
            blocks,
            in_channels,
            groups: cfg.norm_groups,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    /// `input` is `(h*w) x in_channels`; returns `(h'*w') x D`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, input: Var, h: usize, w: usize) -> Var {
        let (mut x, mut h, mut w) = (input, h, w);
        for b in &self.blocks {
            let wt = tape.param(store, b.weight);
            let bs = tape.param(store, b.bias);
            let g = tape.param(store, b.gain);
            let s = tape.param(store, b.shift);
            x = tape.conv3x3(x, wt, bs, h, w, 2);
            h = h.div_ceil(2);
            w = w.div_ceil(2);
            x = tape.group_norm(x, g, s, self.groups);
            x = tape.silu(x);
        }
        x
    }
}

struct LinearParams {
    weight: ParamId,
    bias: Option<ParamId>,
}

impl LinearParams {
    fn declare<T: Scalar>(store: &mut ParamStore<T>, decl: &mut Declare<'_>, name: &str, din: usize, dout: usize) -> Result<Self> {
        Ok(Self {
            weight: decl.param(store, &format!("{name}.weight"), &[din, dout], Init::FanInUniform { fan_in: din })?,
            bias: Some(decl.param(store, &format!("{name}.bias"), &[dout], Init::FanInUniform { fan_in: din })?),
        })
    }

    /// Without a bias; used for attention keys, where a bias shifts every
    /// score of a query equally and cancels in the softmax.
    fn declare_unbiased<T: Scalar>(store: &mut ParamStore<T>, decl: &mut Declare<'_>, name: &str, din: usize, dout: usize) -> Result<Self> {
        Ok(Self {
            weight: decl.param(store, &format!("{name}.weight"), &[din, dout], Init::FanInUniform { fan_in: din })?,
            bias: None,
        })
    }

    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Var {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|b| tape.param(store, b));
        tape.linear(x, w, b)
    }
}

struct NormParams {
    gain: ParamId,
    bias: ParamId,
}

impl NormParams {
    fn declare<T: Scalar>(store: &mut ParamStore<T>, decl: &mut Declare<'_>, name: &str, d: usize) -> Result<Self> {
        Ok(Self {
            gain: decl.param(store, &format!("{name}.gain"), &[d], Init::Const(1.0))?,
            bias: decl.param(store, &format!("{name}.bias"), &[d], Init::Const(0.0))?,
        })
    }

    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Var {
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        tape.layer_norm(x, g, b)
    }
}

struct MultiHeadAttention {
    q: LinearParams,
    k: LinearParams,
    v: LinearParams,
    out: LinearParams,
    heads: usize,
}

impl MultiHeadAttention {
    fn declare<T: Scalar>(store: &mut ParamStore<T>, decl: &mut Declare<'_>, name: &str, d: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            q: LinearParams::declare(store, decl, &format!("{name}.q"), d, d)?,
            k: LinearParams::declare_unbiased(store, decl, &format!("{name}.k"), d, d)?,
            v: LinearParams::declare(store, decl, &format!("{name}.v"), d, d)?,
            out: LinearParams::declare(store, decl, &format!("{name}.o"), d, d)?,
            heads,
        })
    }

    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, queries: Var, context: Var) -> Var {
        let q = self.q.forward(tape, store, queries);
        let k = self.k.forward(tape, store, context);
        let v = self.v.forward(tape, store, context);
        let a = tape.attention(q, k, v, self.heads);
        self.out.forward(tape, store, a)
    }
}

struct DecoderLayer {
    self_attn: MultiHeadAttention,
    cross_attn: MultiHeadAttention,
    fc1: LinearParams,
    fc2: LinearParams,
    norms: [NormParams; 3],
}

/// Fixed 2-D sinusoidal encodings for a `h x w` token grid; the first half
/// of the channels encodes the row, the second half the column.
pub fn sinusoidal_positions(h: usize, w: usize, d: usize) -> Vec<f64> {
    let half = d / 2;
    let pairs = half / 2;
    let mut out = vec![0.0; h * w * d];
    for y in 0..h {
        for x in 0..w {
            let row = &mut out[(y * w + x) * d..][..d];
            for (offset, pos) in [(0, y as f64), (half, x as f64)] {
                for i in 0..pairs {
                    let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / half as f64);
                    row[offset + 2 * i] = (pos * freq).sin();
                    row[offset + 2 * i + 1] = (pos * freq).cos();
                }
            }
        }
    }
    out
}

/// Transformer decoder mapping positional patch queries and RGB feature
/// tokens to predicted event-latent patches.
pub struct Predictor {
    queries: ParamId,
    layers: Vec<DecoderLayer>,
    out: LinearParams,
    grid_h: usize,
    grid_w: usize,
    dim: usize,
}

impl Predictor {
    pub(crate) fn declare<T: Scalar>(store: &mut ParamStore<T>, decl: &mut Declare<'_>, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.feature_dim;
        let queries = decl.param(store, "predictor.queries", &[cfg.grid_cells(), d], Init::Normal { std: 0.02 })?;
        let mut layers = Vec::new();
        for i in 0..cfg.predictor_depth {
            let p = format!("predictor.layer{i}");
            layers.push(DecoderLayer {
                self_attn: MultiHeadAttention::declare(store, decl, &format!("{p}.self_attn"), d, cfg.predictor_heads)?,
                cross_attn: MultiHeadAttention::declare(store, decl, &format!("{p}.cross_attn"), d, cfg.predictor_heads)?,
                fc1: LinearParams::declare(store, decl, &format!("{p}.ffn.fc1"), d, cfg.predictor_ffn_dim)?,
                fc2: LinearParams::declare(store, decl, &format!("{p}.ffn.fc2"), cfg.predictor_ffn_dim, d)?,
                norms: [
                    NormParams::declare(store, decl, &format!("{p}.norm1"), d)?,
                    NormParams::declare(store, decl, &format!("{p}.norm2"), d)?,
                    NormParams::declare(store, decl, &format!("{p}.norm3"), d)?,
                ],
            });
        }
        let out = LinearParams::declare(store, decl, "predictor.out", d, d)?;
        Ok(Self {
            queries,
            layers,
            out,
            grid_h: cfg.grid_height(),
            grid_w: cfg.grid_width(),
            dim: d,
        })
    }

    pub fn check_locations(&self, locations: &[GridPos]) -> Result<()> {
        for p in locations {
            ensure!(
                p.y < self.grid_h && p.x < self.grid_w,
                InvalidInput,
                "location ({}, {}) outside the {}x{} feature grid",
                p.y,
                p.x,
                self.grid_h,
                self.grid_w
            );
        }
        Ok(())
    }

    /// `rgb_tokens` is `(h'*w') x D`; returns `M x D`, row `m` predicting
    /// the patch at `locations[m]`. `locations` must be non-empty.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, rgb_tokens: Var, locations: &[GridPos]) -> Var {
        assert!(!locations.is_empty(), "predictor needs at least one query");
        let pe: Vec<T> = sinusoidal_positions(self.grid_h, self.grid_w, self.dim)
            .into_iter()
            .map(T::c)
            .collect();
        let pe = tape.leaf(pe, self.grid_h * self.grid_w, self.dim);
        let memory = tape.add(rgb_tokens, pe);
        let table = tape.param(store, self.queries);
        let rows: Vec<usize> = locations.iter().map(|p| p.y * self.grid_w + p.x).collect();
        let mut x = tape.gather_rows(table, &rows);
        for layer in &self.layers {
            let sa = layer.self_attn.forward(tape, store, x, x);
            let r = tape.add(x, sa);
            x = layer.norms[0].forward(tape, store, r);
            let ca = layer.cross_attn.forward(tape, store, x, memory);
            let r = tape.add(x, ca);
            x = layer.norms[1].forward(tape, store, r);
            let h = layer.fc1.forward(tape, store, x);
            let h = tape.silu(h);
            let h = layer.fc2.forward(tape, store, h);
            let r = tape.add(x, h);
            x = layer.norms[2].forward(tape, store, r);
        }
        self.out.forward(tape, store, x)
    }
}

/// Pointwise classifier on the feature grid, bilinearly upsampled to
/// image resolution.
pub struct SegHead {
    classifier: LinearParams,
    grid_h: usize,
    grid_w: usize,
    factor: usize,
}

impl SegHead {
    pub(crate) fn declare<T: Scalar>(store: &mut ParamStore<T>, decl: &mut Declare<'_>, cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            classifier: LinearParams::declare(store, decl, "seg_head.classifier", cfg.feature_dim, cfg.num_classes)?,
            grid_h: cfg.grid_height(),
            grid_w: cfg.grid_width(),
            factor: cfg.stride(),
        })
    }

    /// Returns `(H*W) x num_classes` logits.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, features: Var) -> Var {
        let low = self.classifier.forward(tape, store, features);
        tape.upsample_bilinear(low, self.grid_h, self.grid_w, self.factor)
    }
}

/// Anchor-free objectness logit and box size per grid cell.
pub struct DetHead {
    objectness: LinearParams,
    size: LinearParams,
    stride: usize,
}

impl DetHead {
    pub(crate) fn declare<T: Scalar>(store: &mut ParamStore<T>, decl: &mut Declare<'_>, cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            objectness: LinearParams::declare(store, decl, "det_head.objectness", cfg.feature_dim, 1)?,
            size: LinearParams::declare(store, decl, "det_head.size", cfg.feature_dim, 2)?,
            stride: cfg.stride(),
        })
    }

    /// Returns objectness logits (`cells x 1`) and sizes in pixels
    /// (`cells x 2`, width then height).
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, features: Var) -> (Var, Var) {
        let logits = self.objectness.forward(tape, store, features);
        let raw = self.size.forward(tape, store, features);
        let sizes = tape.softplus(raw, T::c(self.stride as f64));
        (logits, sizes)
    }
}
