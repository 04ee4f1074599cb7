//! Reverse-mode automatic differentiation over dense row-major matrices.
//!
//! Every value on the tape is a `rows x cols` matrix; spatial feature maps
//! are stored as `(H*W) x C` with row index `y * W + x`. Operations record
//! whatever they need for the backward pass at construction time.

use super::params::{ParamId, ParamStore};
use crate::scalar::{matmul_acc, matmul_nt_acc, matmul_tn_acc, Scalar};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Param,
    Conv3x3 {
        x: Var,
        w: Var,
        b: Var,
        in_h: usize,
        in_w: usize,
        stride: usize,
        cols: Vec<T>,
    },
    GroupNorm {
        x: Var,
        gain: Var,
        bias: Var,
        groups: usize,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Silu {
        x: Var,
    },
    Softplus {
        x: Var,
        scale: T,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<T>,
    },
    GatherRows {
        table: Var,
        rows: Vec<usize>,
    },
    WindowMean {
        x: Var,
        grid_w: usize,
        anchors: Vec<(usize, usize)>,
        size: usize,
    },
    Upsample {
        x: Var,
        in_h: usize,
        in_w: usize,
        factor: usize,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<u8>,
        probs: Vec<T>,
        counted: usize,
    },
    DetectionLoss {
        logits: Var,
        sizes: Var,
        objectness: Vec<T>,
        size_targets: Vec<(usize, T, T)>,
        size_weight: T,
    },
    PatchSquaredError {
        pred: Var,
        target: Var,
    },
    MeanSquaredError {
        a: Var,
        b: Var,
    },
    WeightedSum {
        a: Var,
        b: Var,
        wa: T,
        wb: T,
    },
}

struct Node<T> {
    value: Vec<T>,
    rows: usize,
    cols: usize,
    needs_grad: bool,
    op: Op<T>,
}

/// Records a computation for one backward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of one scalar with respect to every tape node that needs one.
pub struct Grads<T> {
    per_node: Vec<Option<Vec<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Scalar> Grads<T> {
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.per_node.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds parameter gradients into `acc`, one buffer per store entry.
    pub fn accumulate_into(&self, acc: &mut [Vec<T>]) {
        for (id, var) in &self.params {
            if let Some(g) = self.wrt(*var) {
                for (a, b) in acc[id.index()].iter_mut().zip(g) {
                    *a += *b;
                }
            }
        }
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Bilinear source taps for one output axis (half-pixel centers).
fn upsample_taps(input: usize, factor: usize) -> Vec<(usize, usize, f64, f64)> {
    (0..input * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let w1 = src - i0 as f64;
            (i0, i1, 1.0 - w1, w1)
        })
        .collect()
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    fn push(&mut self, value: Vec<T>, rows: usize, cols: usize, needs_grad: bool, op: Op<T>) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            value,
            rows,
            cols,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        (self.nodes[v.0].rows, self.nodes[v.0].cols)
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    /// A constant input.
    pub fn leaf(&mut self, value: Vec<T>, rows: usize, cols: usize) -> Var {
        assert_eq!(value.len(), rows * cols, "leaf shape mismatch");
        self.push(value, rows, cols, false, Op::Leaf)
    }

    /// An input whose gradient is wanted (used when checking input gradients).
    pub fn leaf_with_grad(&mut self, value: Vec<T>, rows: usize, cols: usize) -> Var {
        assert_eq!(value.len(), rows * cols, "leaf shape mismatch");
        self.push(value, rows, cols, true, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let p = store.get(id);
        let (rows, cols) = p.matrix_dims();
        let var = self.push(p.data.clone(), rows, cols, true, Op::Param);
        self.params.push((id, var));
        var
    }

    /// Copies a value as a constant, blocking gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let n = &self.nodes[v.0];
        let (value, rows, cols) = (n.value.clone(), n.rows, n.cols);
        self.leaf(value, rows, cols)
    }

    /// 3x3 convolution with zero padding 1. `x` is `(in_h*in_w) x cin`,
    /// `w` is `(9*cin) x cout` with row `(ky*3 + kx)*cin + ci`.
    pub fn conv3x3(&mut self, x: Var, w: Var, b: Var, in_h: usize, in_w: usize, stride: usize) -> Var {
        let (xr, cin) = self.dims(x);
        let (wr, cout) = self.dims(w);
        assert_eq!(xr, in_h * in_w, "conv input rows");
        assert_eq!(wr, 9 * cin, "conv weight rows");
        assert_eq!(self.dims(b), (1, cout), "conv bias shape");
        let out_h = (in_h - 1) / stride + 1;
        let out_w = (in_w - 1) / stride + 1;
        let p = out_h * out_w;
        let k = 9 * cin;
        let xv = &self.nodes[x.0].value;
        let mut cols = vec![T::zero(); p * k];
        for oy in 0..out_h {
            for ox in 0..out_w {
                let row = &mut cols[(oy * out_w + ox) * k..][..k];
                for ky in 0..3 {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= in_h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix < 0 || ix >= in_w as isize {
                            continue;
                        }
                        let src = (iy as usize * in_w + ix as usize) * cin;
                        row[(ky * 3 + kx) * cin..][..cin].copy_from_slice(&xv[src..src + cin]);
                    }
                }
            }
        }
        let bias = &self.nodes[b.0].value;
        let mut out = Vec::with_capacity(p * cout);
        for _ in 0..p {
            out.extend_from_slice(bias);
        }
        matmul_acc(p, k, cout, &cols, &self.nodes[w.0].value, &mut out);
        let needs = self.needs(&[x, w, b]);
        self.push(
            out,
            p,
            cout,
            needs,
            Op::Conv3x3 {
                x,
                w,
                b,
                in_h,
                in_w,
                stride,
                cols,
            },
        )
    }

    /// Normalizes each group of channels over all spatial positions, then
    /// applies a per-channel affine map.
    pub fn group_norm(&mut self, x: Var, gain: Var, bias: Var, groups: usize) -> Var {
        let (p, c) = self.dims(x);
        assert!(groups > 0 && c % groups == 0, "channels not divisible by groups");
        let cg = c / groups;
        let n = T::c((p * cg) as f64);
        let eps = T::c(1e-5);
        let xv = &self.nodes[x.0].value;
        let g = &self.nodes[gain.0].value;
        let bb = &self.nodes[bias.0].value;
        let mut xhat = vec![T::zero(); p * c];
        let mut rstd = vec![T::zero(); groups];
        for gi in 0..groups {
            let chans = gi * cg..(gi + 1) * cg;
            let mut mean = T::zero();
            for r in 0..p {
                for ch in chans.clone() {
                    mean += xv[r * c + ch];
                }
            }
            mean /= n;
            let mut var = T::zero();
            for r in 0..p {
                for ch in chans.clone() {
                    let d = xv[r * c + ch] - mean;
                    var += d * d;
                }
            }
            var /= n;
            let rs = T::one() / (var + eps).sqrt();
            rstd[gi] = rs;
            for r in 0..p {
                for ch in chans.clone() {
                    xhat[r * c + ch] = (xv[r * c + ch] - mean) * rs;
                }
            }
        }
        let out = xhat
            .iter()
            .enumerate()
            .map(|(i, xh)| *xh * g[i % c] + bb[i % c])
            .collect();
        let needs = self.needs(&[x, gain, bias]);
        self.push(
            out,
            p,
            c,
            needs,
            Op::GroupNorm {
                x,
                gain,
                bias,
                groups,
                xhat,
                rstd,
            },
        )
    }

    /// Per-row layer normalization with a per-column affine map.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let (r, c) = self.dims(x);
        let eps = T::c(1e-5);
        let n = T::c(c as f64);
        let xv = &self.nodes[x.0].value;
        let g = &self.nodes[gain.0].value;
        let bb = &self.nodes[bias.0].value;
        let mut xhat = vec![T::zero(); r * c];
        let mut rstd = vec![T::zero(); r];
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / n;
            let rs = T::one() / (var + eps).sqrt();
            rstd[i] = rs;
            for j in 0..c {
                let xh = (row[j] - mean) * rs;
                xhat[i * c + j] = xh;
                out[i * c + j] = xh * g[j] + bb[j];
            }
        }
        let needs = self.needs(&[x, gain, bias]);
        self.push(
            out,
            r,
            c,
            needs,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        )
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let out = self.nodes[x.0].value.iter().map(|v| *v * sigmoid(*v)).collect();
        let needs = self.needs(&[x]);
        self.push(out, r, c, needs, Op::Silu { x })
    }

    /// `scale * ln(1 + e^x)`, elementwise.
    pub fn softplus(&mut self, x: Var, scale: T) -> Var {
        let (r, c) = self.dims(x);
        let out = self.nodes[x.0].value.iter().map(|v| scale * softplus(*v)).collect();
        let needs = self.needs(&[x]);
        self.push(out, r, c, needs, Op::Softplus { x, scale })
    }

    /// `x * w + b` with `x: n x in`, `w: in x out`, `b: 1 x out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (n, din) = self.dims(x);
        let (wr, dout) = self.dims(w);
        assert_eq!(din, wr, "linear input width");
        let mut out = match b {
            Some(b) => {
                assert_eq!(self.dims(b), (1, dout), "linear bias shape");
                let bias = &self.nodes[b.0].value;
                let mut o = Vec::with_capacity(n * dout);
                for _ in 0..n {
                    o.extend_from_slice(bias);
                }
                o
            }
            None => vec![T::zero(); n * dout],
        };
        matmul_acc(n, din, dout, &self.nodes[x.0].value, &self.nodes[w.0].value, &mut out);
        let needs = self.needs(&[x, w]) || b.is_some_and(|b| self.needs(&[b]));
        self.push(out, n, dout, needs, Op::Linear { x, w, b })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.dims(a), self.dims(b), "add shape mismatch");
        let (r, c) = self.dims(a);
        let out = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| *x + *y)
            .collect();
        let needs = self.needs(&[a, b]);
        self.push(out, r, c, needs, Op::Add { a, b })
    }

    /// Multi-head scaled dot-product attention of `q: m x d` over
    /// `k, v: n x d`; heads split the `d` columns into equal contiguous
    /// slices.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Var {
        let (m, d) = self.dims(q);
        let (n, dk) = self.dims(k);
        assert_eq!(d, dk, "attention key width");
        assert_eq!(self.dims(v), (n, d), "attention value shape");
        assert!(heads > 0 && d % heads == 0, "width not divisible by heads");
        let dh = d / heads;
        let scale = T::one() / T::c(dh as f64).sqrt();
        let (qv, kv, vv) = (
            &self.nodes[q.0].value,
            &self.nodes[k.0].value,
            &self.nodes[v.0].value,
        );
        let mut probs = vec![T::zero(); heads * m * n];
        let mut out = vec![T::zero(); m * d];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..m {
                let row = &mut probs[(h * m + i) * n..][..n];
                let mut max = T::neg_infinity();
                for (j, s) in row.iter_mut().enumerate() {
                    let mut dot = T::zero();
                    for t in 0..dh {
                        dot += qv[i * d + off + t] * kv[j * d + off + t];
                    }
                    *s = dot * scale;
                    max = max.max(*s);
                }
                let mut z = T::zero();
                for s in row.iter_mut() {
                    *s = (*s - max).exp();
                    z += *s;
                }
                for s in row.iter_mut() {
                    *s /= z;
                }
                for (j, pj) in row.iter().enumerate() {
                    for t in 0..dh {
                        out[i * d + off + t] += *pj * vv[j * d + off + t];
                    }
                }
            }
        }
        let needs = self.needs(&[q, k, v]);
        self.push(
            out,
            m,
            d,
            needs,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
        )
    }

    /// Selects rows of `table` in the given order (repeats allowed).
    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Var {
        let (tr, c) = self.dims(table);
        let tv = &self.nodes[table.0].value;
        let mut out = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            assert!(r < tr, "gather row {r} out of range {tr}");
            out.extend_from_slice(&tv[r * c..(r + 1) * c]);
        }
        let needs = self.needs(&[table]);
        self.push(
            out,
            rows.len(),
            c,
            needs,
            Op::GatherRows {
                table,
                rows: rows.to_vec(),
            },
        )
    }

    /// Mean of each `size x size` spatial window anchored (top-left) at
    /// `(y, x)` on a `grid_h x grid_w` feature map; one row per anchor.
    pub fn window_mean(&mut self, x: Var, grid_h: usize, grid_w: usize, anchors: &[(usize, usize)], size: usize) -> Var {
        let (p, c) = self.dims(x);
        assert_eq!(p, grid_h * grid_w, "window_mean grid mismatch");
        let xv = &self.nodes[x.0].value;
        let inv = T::one() / T::c((size * size) as f64);
        let mut out = vec![T::zero(); anchors.len() * c];
        for (m, &(ay, ax)) in anchors.iter().enumerate() {
            assert!(ay + size <= grid_h && ax + size <= grid_w, "window out of bounds");
            let dst = &mut out[m * c..(m + 1) * c];
            for yy in ay..ay + size {
                for xx in ax..ax + size {
                    let src = &xv[(yy * grid_w + xx) * c..][..c];
                    for (o, s) in dst.iter_mut().zip(src) {
                        *o += *s;
                    }
                }
            }
            for o in dst.iter_mut() {
                *o *= inv;
            }
        }
        let needs = self.needs(&[x]);
        self.push(
            out,
            anchors.len(),
            c,
            needs,
            Op::WindowMean {
                x,
                grid_w,
                anchors: anchors.to_vec(),
                size,
            },
        )
    }

    /// Bilinear upsampling by an integer factor (half-pixel centers, edge
    /// clamped).
    pub fn upsample_bilinear(&mut self, x: Var, in_h: usize, in_w: usize, factor: usize) -> Var {
        let (p, c) = self.dims(x);
        assert_eq!(p, in_h * in_w, "upsample grid mismatch");
        let ty = upsample_taps(in_h, factor);
        let tx = upsample_taps(in_w, factor);
        let (oh, ow) = (in_h * factor, in_w * factor);
        let xv = &self.nodes[x.0].value;
        let mut out = vec![T::zero(); oh * ow * c];
        for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                let dst = &mut out[(oy * ow + ox) * c..][..c];
                for (yy, wy) in [(y0, wy0), (y1, wy1)] {
                    for (xx, wx) in [(x0, wx0), (x1, wx1)] {
                        let w = T::c(wy * wx);
                        let src = &xv[(yy * in_w + xx) * c..][..c];
                        for (o, s) in dst.iter_mut().zip(src) {
                            *o += w * *s;
                        }
                    }
                }
            }
        }
        let needs = self.needs(&[x]);
        self.push(
            out,
            oh * ow,
            c,
            needs,
            Op::Upsample {
                x,
                in_h,
                in_w,
                factor,
            },
        )
    }

    /// Mean softmax cross-entropy over rows whose label is not `ignore`.
    /// Panics if every row is ignored; callers validate first.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[u8], ignore: u8) -> Var {
        let (p, k) = self.dims(logits);
        assert_eq!(labels.len(), p, "one label per row");
        let lv = &self.nodes[logits.0].value;
        let mut probs = vec![T::zero(); p * k];
        let mut total = T::zero();
        let mut counted = 0usize;
        let mut stored = labels.to_vec();
        for i in 0..p {
            let row = &lv[i * k..(i + 1) * k];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = row.iter().map(|v| (*v - max).exp()).sum();
            let lse = max + z.ln();
            for j in 0..k {
                probs[i * k + j] = (row[j] - lse).exp();
            }
            if labels[i] != ignore {
                let l = labels[i] as usize;
                assert!(l < k, "label {l} outside {k} classes");
                total += lse - row[l];
                counted += 1;
            } else {
                stored[i] = u8::MAX;
            }
        }
        assert!(counted > 0, "all rows ignored");
        let out = vec![total / T::c(counted as f64)];
        let needs = self.needs(&[logits]);
        self.push(
            out,
            1,
            1,
            needs,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: stored,
                probs,
                counted,
            },
        )
    }

    /// Mean binary cross-entropy of objectness logits (`n x 1`) against
    /// `objectness` plus `size_weight` times the mean absolute error of
    /// `sizes` (`n x 2`) at the listed `(cell, width, height)` targets.
    pub fn detection_loss(
        &mut self,
        logits: Var,
        sizes: Var,
        objectness: &[T],
        size_targets: &[(usize, T, T)],
        size_weight: T,
    ) -> Var {
        let (n, one) = self.dims(logits);
        assert_eq!(one, 1, "objectness logits must be a column");
        assert_eq!(self.dims(sizes), (n, 2), "size map shape");
        assert_eq!(objectness.len(), n, "objectness target length");
        let lv = &self.nodes[logits.0].value;
        let sv = &self.nodes[sizes.0].value;
        let mut bce = T::zero();
        for (z, y) in lv.iter().zip(objectness) {
            bce += softplus(*z) - *z * *y;
        }
        bce /= T::c(n as f64);
        let mut l1 = T::zero();
        for &(cell, w, h) in size_targets {
            l1 += (sv[cell * 2] - w).abs() + (sv[cell * 2 + 1] - h).abs();
        }
        if !size_targets.is_empty() {
            l1 /= T::c((2 * size_targets.len()) as f64);
        }
        let needs = self.needs(&[logits, sizes]);
        self.push(
            vec![bce + size_weight * l1],
            1,
            1,
            needs,
            Op::DetectionLoss {
                logits,
                sizes,
                objectness: objectness.to_vec(),
                size_targets: size_targets.to_vec(),
                size_weight,
            },
        )
    }

    /// `(1/M) * sum_m ||pred_m - target_m||^2` over the rows.
    pub fn patch_squared_error(&mut self, pred: Var, target: Var) -> Var {
        assert_eq!(self.dims(pred), self.dims(target), "patch shapes differ");
        let (m, _) = self.dims(pred);
        assert!(m > 0, "no patches");
        let s: T = self.nodes[pred.0]
            .value
            .iter()
            .zip(&self.nodes[target.0].value)
            .map(|(a, b)| (*a - *b) * (*a - *b))
            .sum();
        let needs = self.needs(&[pred, target]);
        self.push(vec![s / T::c(m as f64)], 1, 1, needs, Op::PatchSquaredError { pred, target })
    }

    /// Mean over every coordinate of the squared difference.
    pub fn mean_squared_error(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.dims(a), self.dims(b), "mse shapes differ");
        let n = self.nodes[a.0].value.len();
        let s: T = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| (*x - *y) * (*x - *y))
            .sum();
        let needs = self.needs(&[a, b]);
        self.push(vec![s / T::c(n as f64)], 1, 1, needs, Op::MeanSquaredError { a, b })
    }

    /// `wa * a + wb * b` for scalars.
    pub fn weighted_sum(&mut self, a: Var, b: Var, wa: T, wb: T) -> Var {
        assert_eq!(self.dims(a), (1, 1));
        assert_eq!(self.dims(b), (1, 1));
        let v = wa * self.scalar(a) + wb * self.scalar(b);
        let needs = self.needs(&[a, b]);
        self.push(vec![v], 1, 1, needs, Op::WeightedSum { a, b, wa, wb })
    }

    /// Gradients of the scalar `loss` with respect to every recorded value.
    pub fn backward(&self, loss: Var) -> Grads<T> {
        assert_eq!(self.dims(loss), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            self.backward_node(node, &gout, &mut grads);
            grads[idx] = Some(gout);
        }
        Grads {
            per_node: grads,
            params: self.params.clone(),
        }
    }

    fn grad_buf<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        let n = &self.nodes[v.0];
        if !n.needs_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n.value.len()]))
    }

    fn backward_node(&self, node: &Node<T>, gout: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Conv3x3 {
                x,
                w,
                b,
                in_h,
                in_w,
                stride,
                cols,
            } => {
                let p = node.rows;
                let cout = node.cols;
                let cin = self.nodes[x.0].cols;
                let k = 9 * cin;
                if let Some(gw) = self.grad_buf(grads, *w) {
                    matmul_tn_acc(k, p, cout, cols, gout, gw);
                }
                if let Some(gb) = self.grad_buf(grads, *b) {
                    for r in 0..p {
                        for (g, o) in gb.iter_mut().zip(&gout[r * cout..(r + 1) * cout]) {
                            *g += *o;
                        }
                    }
                }
                if self.nodes[x.0].needs_grad {
                    let mut gcols = vec![T::zero(); p * k];
                    matmul_nt_acc(p, cout, k, gout, &self.nodes[w.0].value, &mut gcols);
                    let out_w = (in_w - 1) / stride + 1;
                    let gx = self.grad_buf(grads, *x).expect("needs grad");
                    for r in 0..p {
                        let (oy, ox) = (r / out_w, r % out_w);
                        let row = &gcols[r * k..(r + 1) * k];
                        for ky in 0..3 {
                            let iy = (oy * stride + ky) as isize - 1;
                            if iy < 0 || iy >= *in_h as isize {
                                continue;
                            }
                            for kx in 0..3 {
                                let ix = (ox * stride + kx) as isize - 1;
                                if ix < 0 || ix >= *in_w as isize {
                                    continue;
                                }
                                let dst = (iy as usize * in_w + ix as usize) * cin;
                                for (g, s) in gx[dst..dst + cin]
                                    .iter_mut()
                                    .zip(&row[(ky * 3 + kx) * cin..][..cin])
                                {
                                    *g += *s;
                                }
                            }
                        }
                    }
                }
            }
            Op::GroupNorm {
                x,
                gain,
                bias,
                groups,
                xhat,
                rstd,
            } => {
                let (p, c) = (node.rows, node.cols);
                if let Some(gg) = self.grad_buf(grads, *gain) {
                    for (i, (go, xh)) in gout.iter().zip(xhat).enumerate() {
                        gg[i % c] += *go * *xh;
                    }
                }
                if let Some(gb) = self.grad_buf(grads, *bias) {
                    for (i, go) in gout.iter().enumerate() {
                        gb[i % c] += *go;
                    }
                }
                if self.nodes[x.0].needs_grad {
                    let g = self.nodes[gain.0].value.clone();
                    let gx = self.grad_buf(grads, *x).expect("needs grad");
                    let cg = c / groups;
                    let n = T::c((p * cg) as f64);
                    for gi in 0..*groups {
                        let chans = gi * cg..(gi + 1) * cg;
                        let (mut s1, mut s2) = (T::zero(), T::zero());
                        for r in 0..p {
                            for ch in chans.clone() {
                                let i = r * c + ch;
                                let dxh = gout[i] * g[ch];
                                s1 += dxh;
                                s2 += dxh * xhat[i];
                            }
                        }
                        let rs = rstd[gi];
                        for r in 0..p {
                            for ch in chans.clone() {
                                let i = r * c + ch;
                                let dxh = gout[i] * g[ch];
                                gx[i] += rs / n * (n * dxh - s1 - xhat[i] * s2);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let (r, c) = (node.rows, node.cols);
                if let Some(gg) = self.grad_buf(grads, *gain) {
                    for (i, (go, xh)) in gout.iter().zip(xhat).enumerate() {
                        gg[i % c] += *go * *xh;
                    }
                }
                if let Some(gb) = self.grad_buf(grads, *bias) {
                    for (i, go) in gout.iter().enumerate() {
                        gb[i % c] += *go;
                    }
                }
                if self.nodes[x.0].needs_grad {
                    let g = self.nodes[gain.0].value.clone();
                    let gx = self.grad_buf(grads, *x).expect("needs grad");
                    let n = T::c(c as f64);
                    for i in 0..r {
                        let (mut s1, mut s2) = (T::zero(), T::zero());
                        for j in 0..c {
                            let dxh = gout[i * c + j] * g[j];
                            s1 += dxh;
                            s2 += dxh * xhat[i * c + j];
                        }
                        for j in 0..c {
                            let dxh = gout[i * c + j] * g[j];
                            gx[i * c + j] += rstd[i] / n * (n * dxh - s1 - xhat[i * c + j] * s2);
                        }
                    }
                }
            }
            Op::Silu { x } => {
                let xv = self.nodes[x.0].value.as_slice();
                if let Some(gx) = self.grad_buf(grads, *x) {
                    for ((g, go), v) in gx.iter_mut().zip(gout).zip(xv) {
                        let s = sigmoid(*v);
                        *g += *go * s * (T::one() + *v * (T::one() - s));
                    }
                }
            }
            Op::Softplus { x, scale } => {
                let xv = self.nodes[x.0].value.as_slice();
                if let Some(gx) = self.grad_buf(grads, *x) {
                    for ((g, go), v) in gx.iter_mut().zip(gout).zip(xv) {
                        *g += *go * *scale * sigmoid(*v);
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let (n, dout) = (node.rows, node.cols);
                let din = self.nodes[x.0].cols;
                if let Some(gw) = self.grad_buf(grads, *w) {
                    matmul_tn_acc(din, n, dout, &self.nodes[x.0].value, gout, gw);
                }
                if let Some(b) = b {
                    if let Some(gb) = self.grad_buf(grads, *b) {
                        for r in 0..n {
                            for (g, o) in gb.iter_mut().zip(&gout[r * dout..(r + 1) * dout]) {
                                *g += *o;
                            }
                        }
                    }
                }
                let wv = self.nodes[w.0].value.as_slice();
                if let Some(gx) = self.grad_buf(grads, *x) {
                    matmul_nt_acc(n, dout, din, gout, wv, gx);
                }
            }
            Op::Add { a, b } => {
                for v in [a, b] {
                    if let Some(g) = self.grad_buf(grads, *v) {
                        for (gi, go) in g.iter_mut().zip(gout) {
                            *gi += *go;
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            } => {
                let (m, d) = (node.rows, node.cols);
                let n = self.nodes[k.0].rows;
                let dh = d / heads;
                let scale = T::one() / T::c(dh as f64).sqrt();
                let qv = self.nodes[q.0].value.as_slice();
                let kv = self.nodes[k.0].value.as_slice();
                let vv = self.nodes[v.0].value.as_slice();
                let mut gq = vec![T::zero(); m * d];
                let mut gk = vec![T::zero(); n * d];
                let mut gv = vec![T::zero(); n * d];
                let mut dp = vec![T::zero(); n];
                for h in 0..*heads {
                    let off = h * dh;
                    for i in 0..m {
                        let pr = &probs[(h * m + i) * n..][..n];
                        let go = &gout[i * d + off..][..dh];
                        let mut dot = T::zero();
                        for j in 0..n {
                            let mut s = T::zero();
                            for t in 0..dh {
                                s += go[t] * vv[j * d + off + t];
                                gv[j * d + off + t] += pr[j] * go[t];
                            }
                            dp[j] = s;
                            dot += s * pr[j];
                        }
                        for j in 0..n {
                            let ds = pr[j] * (dp[j] - dot) * scale;
                            for t in 0..dh {
                                gq[i * d + off + t] += ds * kv[j * d + off + t];
                                gk[j * d + off + t] += ds * qv[i * d + off + t];
                            }
                        }
                    }
                }
                for (var, g) in [(q, gq), (k, gk), (v, gv)] {
                    if let Some(buf) = self.grad_buf(grads, *var) {
                        for (a, b) in buf.iter_mut().zip(&g) {
                            *a += *b;
                        }
                    }
                }
            }
            Op::GatherRows { table, rows } => {
                let c = node.cols;
                if let Some(gt) = self.grad_buf(grads, *table) {
                    for (i, &r) in rows.iter().enumerate() {
                        for (g, o) in gt[r * c..(r + 1) * c].iter_mut().zip(&gout[i * c..(i + 1) * c]) {
                            *g += *o;
                        }
                    }
                }
            }
            Op::WindowMean {
                x,
                grid_w,
                anchors,
                size,
            } => {
                let c = node.cols;
                let inv = T::one() / T::c((size * size) as f64);
                if let Some(gx) = self.grad_buf(grads, *x) {
                    for (m, &(ay, ax)) in anchors.iter().enumerate() {
                        let go = &gout[m * c..(m + 1) * c];
                        for yy in ay..ay + size {
                            for xx in ax..ax + size {
                                let dst = &mut gx[(yy * grid_w + xx) * c..][..c];
                                for (g, o) in dst.iter_mut().zip(go) {
                                    *g += *o * inv;
                                }
                            }
                        }
                    }
                }
            }
            Op::Upsample {
                x,
                in_h,
                in_w,
                factor,
            } => {
                let c = node.cols;
                let ty = upsample_taps(*in_h, *factor);
                let tx = upsample_taps(*in_w, *factor);
                let ow = in_w * factor;
                if let Some(gx) = self.grad_buf(grads, *x) {
                    for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                        for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                            let go = &gout[(oy * ow + ox) * c..][..c];
                            for (yy, wy) in [(y0, wy0), (y1, wy1)] {
                                for (xx, wx) in [(x0, wx0), (x1, wx1)] {
                                    let w = T::c(wy * wx);
                                    let dst = &mut gx[(yy * in_w + xx) * c..][..c];
                                    for (g, o) in dst.iter_mut().zip(go) {
                                        *g += w * *o;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
                counted,
            } => {
                let k = self.nodes[logits.0].cols;
                let scale = gout[0] / T::c(*counted as f64);
                if let Some(gl) = self.grad_buf(grads, *logits) {
                    for (i, &l) in labels.iter().enumerate() {
                        if l == u8::MAX {
                            continue;
                        }
                        for j in 0..k {
                            let y = if j == l as usize { T::one() } else { T::zero() };
                            gl[i * k + j] += scale * (probs[i * k + j] - y);
                        }
                    }
                }
            }
            Op::DetectionLoss {
                logits,
                sizes,
                objectness,
                size_targets,
                size_weight,
            } => {
                let n = objectness.len();
                let lv = self.nodes[logits.0].value.as_slice();
                let sv = self.nodes[sizes.0].value.as_slice();
                if let Some(gl) = self.grad_buf(grads, *logits) {
                    let s = gout[0] / T::c(n as f64);
                    for ((g, z), y) in gl.iter_mut().zip(lv).zip(objectness) {
                        *g += s * (sigmoid(*z) - *y);
                    }
                }
                if !size_targets.is_empty() {
                    if let Some(gs) = self.grad_buf(grads, *sizes) {
                        let s = gout[0] * *size_weight / T::c((2 * size_targets.len()) as f64);
                        for &(cell, w, h) in size_targets {
                            gs[cell * 2] += s * (sv[cell * 2] - w).signum();
                            gs[cell * 2 + 1] += s * (sv[cell * 2 + 1] - h).signum();
                        }
                    }
                }
            }
            Op::PatchSquaredError { pred, target } => {
                let m = self.nodes[pred.0].rows;
                let s = gout[0] * T::c(2.0) / T::c(m as f64);
                let pv = self.nodes[pred.0].value.as_slice();
                let tv = self.nodes[target.0].value.as_slice();
                if let Some(gp) = self.grad_buf(grads, *pred) {
                    for ((g, a), b) in gp.iter_mut().zip(pv).zip(tv) {
                        *g += s * (*a - *b);
                    }
                }
                if let Some(gt) = self.grad_buf(grads, *target) {
                    for ((g, a), b) in gt.iter_mut().zip(pv).zip(tv) {
                        *g -= s * (*a - *b);
                    }
                }
            }
            Op::MeanSquaredError { a, b } => {
                let av = self.nodes[a.0].value.as_slice();
                let bv = self.nodes[b.0].value.as_slice();
                let s = gout[0] * T::c(2.0) / T::c(av.len() as f64);
                if let Some(ga) = self.grad_buf(grads, *a) {
                    for ((g, x), y) in ga.iter_mut().zip(av).zip(bv) {
                        *g += s * (*x - *y);
                    }
                }
                if let Some(gb) = self.grad_buf(grads, *b) {
                    for ((g, x), y) in gb.iter_mut().zip(av).zip(bv) {
                        *g -= s * (*x - *y);
                    }
                }
            }
            Op::WeightedSum { a, b, wa, wb } => {
                if let Some(g) = self.grad_buf(grads, *a) {
                    g[0] += gout[0] * *wa;
                }
                if let Some(g) = self.grad_buf(grads, *b) {
                    g[0] += gout[0] * *wb;
                }
            }
        }
    }
}

pub(crate) fn sigmoid_value<T: Scalar>(x: T) -> T {
    sigmoid(x)
}
