//! Minimal reverse-mode autodiff over dense tensors.
//!
//! A [`Graph`] is a define-by-run tape: every op computes its value
//! eagerly and records what it needs for the backward pass. The op set
//! is exactly what the model and its losses require — convolutions,
//! transposed convolutions, pixel shuffle, leaky ReLU, channel
//! concat/slice, elementwise arithmetic, a full-tensor mean, and the
//! orthonormal Haar analysis/synthesis pair (whose adjoints are each
//! other, so their backward passes come for free).
//!
//! Gradients live in a side table parallel to the node list and are
//! accumulated in a fixed loop order, which — together with
//! single-threaded execution — makes every training step bitwise
//! reproducible for a given seed and input.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::wavelet;

pub type NodeId = usize;

#[derive(Clone, Debug)]
enum Op<S> {
    Leaf,
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        padding: usize,
    },
    ConvT2d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        padding: usize,
    },
    PixelShuffle {
        x: NodeId,
        factor: usize,
    },
    LeakyRelu {
        x: NodeId,
        slope: S,
    },
    Concat {
        xs: Vec<NodeId>,
    },
    SliceChannels {
        x: NodeId,
        start: usize,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Sub {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Div {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        x: NodeId,
        k: S,
    },
    AddScalar {
        x: NodeId,
    },
    Abs {
        x: NodeId,
    },
    MeanAll {
        x: NodeId,
    },
    HaarAnalysis {
        x: NodeId,
    },
    HaarSynthesis {
        x: NodeId,
    },
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    needs_grad: bool,
}

pub struct Graph<S> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Vec<S>>>,
}

/// `(h + 2p - k)/s + 1`, the conv output extent.
pub fn conv2d_out_dim(h: usize, k: usize, stride: usize, padding: usize) -> Result<usize> {
    if h + 2 * padding < k {
        return Err(Error::config(format!(
            "conv input extent {} (+2*{} padding) smaller than kernel {}",
            h, padding, k
        )));
    }
    Ok((h + 2 * padding - k) / stride + 1)
}

/// `(h - 1)s - 2p + k`, the transposed-conv output extent.
pub fn conv_transpose2d_out_dim(h: usize, k: usize, stride: usize, padding: usize) -> Result<usize> {
    let out = (h - 1) * stride + k;
    if out < 2 * padding + 1 {
        return Err(Error::config(format!(
            "conv_transpose output extent would be non-positive (in {}, k {}, s {}, p {})",
            h, k, stride, padding
        )));
    }
    Ok(out - 2 * padding)
}

/// Output index range `[lo, hi)` such that `o*s + k - p` stays inside
/// `[0, extent)` for every `o` in the range, clamped to `[0, out_extent)`.
#[inline]
fn valid_range(extent: usize, k: usize, s: usize, p: usize, out_extent: usize) -> (usize, usize) {
    let lo = if p > k { (p - k).div_ceil(s) } else { 0 };
    let hi = if extent + p > k {
        ((extent + p - k - 1) / s + 1).min(out_extent)
    } else {
        0
    };
    (lo.min(hi), hi)
}

// ── raw conv kernels (shared by forward and backward) ──────────────────

#[allow(clippy::too_many_arguments)]
fn conv2d_forward<S: Scalar>(
    x: &[S],
    (ci_n, h, w): (usize, usize, usize),
    wgt: &[S],
    (co_n, kh, kw): (usize, usize, usize),
    bias: Option<&[S]>,
    s: usize,
    p: usize,
    out: &mut [S],
    (oh, ow): (usize, usize),
) {
    for co in 0..co_n {
        let bv = bias.map_or(S::ZERO, |b| b[co]);
        for v in &mut out[co * oh * ow..(co + 1) * oh * ow] {
            *v = bv;
        }
    }
    for co in 0..co_n {
        let out_plane = &mut out[co * oh * ow..(co + 1) * oh * ow];
        for ci in 0..ci_n {
            let xp = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..kh {
                let (oy_lo, oy_hi) = valid_range(h, ky, s, p, oh);
                for kx in 0..kw {
                    let wv = wgt[((co * ci_n + ci) * kh + ky) * kw + kx];
                    let (ox_lo, ox_hi) = valid_range(w, kx, s, p, ow);
                    if ox_hi <= ox_lo {
                        continue;
                    }
                    for oy in oy_lo..oy_hi {
                        let iy = oy * s + ky - p;
                        let in_row = &xp[iy * w..iy * w + w];
                        let out_row = &mut out_plane[oy * ow + ox_lo..oy * ow + ox_hi];
                        if s == 1 {
                            let ix0 = ox_lo + kx - p;
                            for (d, &v) in out_row.iter_mut().zip(&in_row[ix0..ix0 + (ox_hi - ox_lo)]) {
                                *d += wv * v;
                            }
                        } else {
                            for (j, d) in out_row.iter_mut().enumerate() {
                                *d += wv * in_row[(ox_lo + j) * s + kx - p];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward_input<S: Scalar>(
    dy: &[S],
    (ci_n, h, w): (usize, usize, usize),
    wgt: &[S],
    (co_n, kh, kw): (usize, usize, usize),
    s: usize,
    p: usize,
    dx: &mut [S],
    (oh, ow): (usize, usize),
) {
    for ci in 0..ci_n {
        let dxp = &mut dx[ci * h * w..(ci + 1) * h * w];
        for co in 0..co_n {
            let dyp = &dy[co * oh * ow..(co + 1) * oh * ow];
            for ky in 0..kh {
                let (oy_lo, oy_hi) = valid_range(h, ky, s, p, oh);
                for kx in 0..kw {
                    let wv = wgt[((co * ci_n + ci) * kh + ky) * kw + kx];
                    let (ox_lo, ox_hi) = valid_range(w, kx, s, p, ow);
                    if ox_hi <= ox_lo {
                        continue;
                    }
                    for oy in oy_lo..oy_hi {
                        let iy = oy * s + ky - p;
                        let dy_row = &dyp[oy * ow + ox_lo..oy * ow + ox_hi];
                        if s == 1 {
                            let ix0 = ox_lo + kx - p;
                            let dx_row = &mut dxp[iy * w + ix0..iy * w + ix0 + dy_row.len()];
                            for (d, &g) in dx_row.iter_mut().zip(dy_row) {
                                *d += wv * g;
                            }
                        } else {
                            for (j, &g) in dy_row.iter().enumerate() {
                                dxp[iy * w + (ox_lo + j) * s + kx - p] += wv * g;
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward_weight<S: Scalar>(
    x: &[S],
    (ci_n, h, w): (usize, usize, usize),
    dy: &[S],
    (co_n, kh, kw): (usize, usize, usize),
    s: usize,
    p: usize,
    dw: &mut [S],
    (oh, ow): (usize, usize),
) {
    for co in 0..co_n {
        let dyp = &dy[co * oh * ow..(co + 1) * oh * ow];
        for ci in 0..ci_n {
            let xp = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..kh {
                let (oy_lo, oy_hi) = valid_range(h, ky, s, p, oh);
                for kx in 0..kw {
                    let (ox_lo, ox_hi) = valid_range(w, kx, s, p, ow);
                    let mut acc = S::ZERO;
                    if ox_hi > ox_lo {
                        for oy in oy_lo..oy_hi {
                            let iy = oy * s + ky - p;
                            let dy_row = &dyp[oy * ow + ox_lo..oy * ow + ox_hi];
                            if s == 1 {
                                let ix0 = ox_lo + kx - p;
                                let x_row = &xp[iy * w + ix0..iy * w + ix0 + dy_row.len()];
                                for (&g, &v) in dy_row.iter().zip(x_row) {
                                    acc += g * v;
                                }
                            } else {
                                for (j, &g) in dy_row.iter().enumerate() {
                                    acc += g * xp[iy * w + (ox_lo + j) * s + kx - p];
                                }
                            }
                        }
                    }
                    dw[((co * ci_n + ci) * kh + ky) * kw + kx] += acc;
                }
            }
        }
    }
}

/// Transposed conv forward: the adjoint (scatter) of [`conv2d_forward`].
/// Weight layout `[ci, co, kh, kw]`.
#[allow(clippy::too_many_arguments)]
fn conv_transpose2d_forward<S: Scalar>(
    x: &[S],
    (ci_n, h, w): (usize, usize, usize),
    wgt: &[S],
    (co_n, kh, kw): (usize, usize, usize),
    bias: Option<&[S]>,
    s: usize,
    p: usize,
    out: &mut [S],
    (oh, ow): (usize, usize),
) {
    for co in 0..co_n {
        let bv = bias.map_or(S::ZERO, |b| b[co]);
        for v in &mut out[co * oh * ow..(co + 1) * oh * ow] {
            *v = bv;
        }
    }
    for co in 0..co_n {
        let out_plane = &mut out[co * oh * ow..(co + 1) * oh * ow];
        for ci in 0..ci_n {
            let xp = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..kh {
                // oy = iy*s + ky - p must land in [0, oh)
                let (iy_lo, iy_hi) = valid_range(oh, ky, s, p, h);
                for kx in 0..kw {
                    let wv = wgt[((ci * co_n + co) * kh + ky) * kw + kx];
                    let (ix_lo, ix_hi) = valid_range(ow, kx, s, p, w);
                    if ix_hi <= ix_lo {
                        continue;
                    }
                    for iy in iy_lo..iy_hi {
                        let oy = iy * s + ky - p;
                        let x_row = &xp[iy * w + ix_lo..iy * w + ix_hi];
                        if s == 1 {
                            let ox0 = ix_lo + kx - p;
                            let out_row = &mut out_plane[oy * ow + ox0..oy * ow + ox0 + x_row.len()];
                            for (d, &v) in out_row.iter_mut().zip(x_row) {
                                *d += wv * v;
                            }
                        } else {
                            for (j, &v) in x_row.iter().enumerate() {
                                out_plane[oy * ow + (ix_lo + j) * s + kx - p] += wv * v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradient of the transposed conv w.r.t. its input: gather pattern,
/// `dx[ci, iy, ix] = sum_{co,ky,kx} w[ci,co,ky,kx] * dy[iy*s+ky-p, ix*s+kx-p]`.
#[allow(clippy::too_many_arguments)]
fn conv_transpose2d_backward_input<S: Scalar>(
    dy: &[S],
    (ci_n, h, w): (usize, usize, usize),
    wgt: &[S],
    (co_n, kh, kw): (usize, usize, usize),
    s: usize,
    p: usize,
    dx: &mut [S],
    (oh, ow): (usize, usize),
) {
    for ci in 0..ci_n {
        let dxp = &mut dx[ci * h * w..(ci + 1) * h * w];
        for co in 0..co_n {
            let dyp = &dy[co * oh * ow..(co + 1) * oh * ow];
            for ky in 0..kh {
                let (iy_lo, iy_hi) = valid_range(oh, ky, s, p, h);
                for kx in 0..kw {
                    let wv = wgt[((ci * co_n + co) * kh + ky) * kw + kx];
                    let (ix_lo, ix_hi) = valid_range(ow, kx, s, p, w);
                    if ix_hi <= ix_lo {
                        continue;
                    }
                    for iy in iy_lo..iy_hi {
                        let oy = iy * s + ky - p;
                        let dx_row = &mut dxp[iy * w + ix_lo..iy * w + ix_hi];
                        if s == 1 {
                            let ox0 = ix_lo + kx - p;
                            let dy_row = &dyp[oy * ow + ox0..oy * ow + ox0 + dx_row.len()];
                            for (d, &g) in dx_row.iter_mut().zip(dy_row) {
                                *d += wv * g;
                            }
                        } else {
                            for (j, d) in dx_row.iter_mut().enumerate() {
                                *d += wv * dyp[oy * ow + (ix_lo + j) * s + kx - p];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_transpose2d_backward_weight<S: Scalar>(
    x: &[S],
    (ci_n, h, w): (usize, usize, usize),
    dy: &[S],
    (co_n, kh, kw): (usize, usize, usize),
    s: usize,
    p: usize,
    dw: &mut [S],
    (oh, ow): (usize, usize),
) {
    for ci in 0..ci_n {
        let xp = &x[ci * h * w..(ci + 1) * h * w];
        for co in 0..co_n {
            let dyp = &dy[co * oh * ow..(co + 1) * oh * ow];
            for ky in 0..kh {
                let (iy_lo, iy_hi) = valid_range(oh, ky, s, p, h);
                for kx in 0..kw {
                    let (ix_lo, ix_hi) = valid_range(ow, kx, s, p, w);
                    let mut acc = S::ZERO;
                    if ix_hi > ix_lo {
                        for iy in iy_lo..iy_hi {
                            let oy = iy * s + ky - p;
                            let x_row = &xp[iy * w + ix_lo..iy * w + ix_hi];
                            if s == 1 {
                                let ox0 = ix_lo + kx - p;
                                let dy_row = &dyp[oy * ow + ox0..oy * ow + ox0 + x_row.len()];
                                for (&v, &g) in x_row.iter().zip(dy_row) {
                                    acc += v * g;
                                }
                            } else {
                                for (j, &v) in x_row.iter().enumerate() {
                                    acc += v * dyp[oy * ow + (ix_lo + j) * s + kx - p];
                                }
                            }
                        }
                    }
                    dw[((ci * co_n + co) * kh + ky) * kw + kx] += acc;
                }
            }
        }
    }
}

/// `out[c, y*f + a, x*f + b] = in[c*f^2 + a*f + b, y, x]`.
fn pixel_shuffle_forward<S: Scalar>(
    x: &[S],
    (ci_n, h, w): (usize, usize, usize),
    f: usize,
    out: &mut [S],
) {
    let c_out = ci_n / (f * f);
    let (oh, ow) = (h * f, w * f);
    for c in 0..c_out {
        for a in 0..f {
            for b in 0..f {
                let xp = &x[(c * f * f + a * f + b) * h * w..];
                for y in 0..h {
                    let in_row = &xp[y * w..y * w + w];
                    let o_base = c * oh * ow + (y * f + a) * ow + b;
                    for (xcol, &v) in in_row.iter().enumerate() {
                        out[o_base + xcol * f] = v;
                    }
                }
            }
        }
    }
}

/// Exact inverse permutation of [`pixel_shuffle_forward`].
pub(crate) fn pixel_unshuffle<S: Scalar>(
    y: &[S],
    (c_out, oh, ow): (usize, usize, usize),
    f: usize,
    out: &mut [S],
) {
    let (h, w) = (oh / f, ow / f);
    for c in 0..c_out {
        for a in 0..f {
            for b in 0..f {
                let op = (c * f * f + a * f + b) * h * w;
                for yy in 0..h {
                    let i_base = c * oh * ow + (yy * f + a) * ow + b;
                    for xx in 0..w {
                        out[op + yy * w + xx] = y[i_base + xx * f];
                    }
                }
            }
        }
    }
}

// ── the graph ───────────────────────────────────────────────────────────

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.grads.push(None);
        self.nodes.len() - 1
    }

    fn ng(&self, id: NodeId) -> bool {
        self.nodes[id].needs_grad
    }

    /// Insert a constant (no gradient will flow into it).
    pub fn constant(&mut self, t: Tensor<S>) -> NodeId {
        self.push(t, Op::Leaf, false)
    }

    /// Insert a differentiable leaf (a parameter).
    pub fn param(&mut self, t: Tensor<S>) -> NodeId {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&[S]> {
        self.grads[id].as_deref()
    }

    /// Move a gradient out of the graph (used when handing gradients to
    /// the optimizer without copying).
    pub fn take_grad(&mut self, id: NodeId) -> Option<Vec<S>> {
        self.grads[id].take()
    }

    /// `x: [Ci, H, W]`, `w: [Co, Ci, Kh, Kw]`, `b: [Co]`; output
    /// `[Co, (H+2p-Kh)/s+1, (W+2p-Kw)/s+1]`.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        if stride == 0 {
            return Err(Error::config("conv2d stride must be >= 1".to_string()));
        }
        let (ci, h, wd) = self.value(x).dims3()?;
        let (co, wci, kh, kw) = self.value(w).dims4()?;
        if wci != ci {
            return Err(Error::config(format!(
                "conv2d weight expects {} input channels, input has {}",
                wci, ci
            )));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [co] {
                return Err(Error::config(format!(
                    "conv2d bias shape {:?} != [{}]",
                    self.value(b).shape(),
                    co
                )));
            }
        }
        let oh = conv2d_out_dim(h, kh, stride, padding)?;
        let ow = conv2d_out_dim(wd, kw, stride, padding)?;
        let mut out = Tensor::zeros(vec![co, oh, ow]);
        conv2d_forward(
            self.value(x).data(),
            (ci, h, wd),
            self.value(w).data(),
            (co, kh, kw),
            b.map(|b| self.value(b).data()),
            stride,
            padding,
            out.data_mut(),
            (oh, ow),
        );
        let needs = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(
            out,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                padding,
            },
            needs,
        ))
    }

    /// `x: [Ci, H, W]`, `w: [Ci, Co, Kh, Kw]`, `b: [Co]`; output
    /// `[Co, (H-1)s-2p+Kh, (W-1)s-2p+Kw]`. With the complementary
    /// weight layouts, a `[Co, Ci, Kh, Kw]` conv weight reinterpreted
    /// as `[Ci', Co', Kh, Kw]` makes this op the exact adjoint of
    /// `conv2d` at the same stride/padding (when the conv tiles its
    /// input exactly).
    pub fn conv_transpose2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        if stride == 0 {
            return Err(Error::config("conv_transpose2d stride must be >= 1".to_string()));
        }
        let (ci, h, wd) = self.value(x).dims3()?;
        let (wci, co, kh, kw) = self.value(w).dims4()?;
        if wci != ci {
            return Err(Error::config(format!(
                "conv_transpose2d weight expects {} input channels, input has {}",
                wci, ci
            )));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [co] {
                return Err(Error::config(format!(
                    "conv_transpose2d bias shape {:?} != [{}]",
                    self.value(b).shape(),
                    co
                )));
            }
        }
        let oh = conv_transpose2d_out_dim(h, kh, stride, padding)?;
        let ow = conv_transpose2d_out_dim(wd, kw, stride, padding)?;
        let mut out = Tensor::zeros(vec![co, oh, ow]);
        conv_transpose2d_forward(
            self.value(x).data(),
            (ci, h, wd),
            self.value(w).data(),
            (co, kh, kw),
            b.map(|b| self.value(b).data()),
            stride,
            padding,
            out.data_mut(),
            (oh, ow),
        );
        let needs = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(
            out,
            Op::ConvT2d {
                x,
                w,
                b,
                stride,
                padding,
            },
            needs,
        ))
    }

    /// `[C*f^2, H, W] -> [C, H*f, W*f]`; `factor = 1` is the identity.
    pub fn pixel_shuffle(&mut self, x: NodeId, factor: usize) -> Result<NodeId> {
        if factor == 0 {
            return Err(Error::config("pixel_shuffle factor must be >= 1".to_string()));
        }
        let (c, h, w) = self.value(x).dims3()?;
        if c % (factor * factor) != 0 {
            return Err(Error::config(format!(
                "pixel_shuffle needs channels divisible by {}^2, got {}",
                factor, c
            )));
        }
        let mut out = Tensor::zeros(vec![c / (factor * factor), h * factor, w * factor]);
        pixel_shuffle_forward(self.value(x).data(), (c, h, w), factor, out.data_mut());
        let needs = self.ng(x);
        Ok(self.push(out, Op::PixelShuffle { x, factor }, needs))
    }

    /// `x` for `x >= 0`, `slope*x` otherwise.
    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let sl = S::from_f64(slope);
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| if v >= S::ZERO { v } else { sl * v })
            .collect();
        let out = Tensor::new(self.value(x).shape().to_vec(), data).expect("same shape");
        let needs = self.ng(x);
        self.push(out, Op::LeakyRelu { x, slope: sl }, needs)
    }

    /// Concatenate `[Ci, H, W]` tensors along the channel axis.
    pub fn concat_channels(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::config("concat_channels needs at least one input".to_string()));
        }
        let (_, h, w) = self.value(xs[0]).dims3()?;
        let mut c_total = 0;
        for &id in xs {
            let (c, hh, ww) = self.value(id).dims3()?;
            if (hh, ww) != (h, w) {
                return Err(Error::config(format!(
                    "concat_channels spatial mismatch: {}x{} vs {}x{}",
                    hh, ww, h, w
                )));
            }
            c_total += c;
        }
        let mut data = Vec::with_capacity(c_total * h * w);
        for &id in xs {
            data.extend_from_slice(self.value(id).data());
        }
        let out = Tensor::new(vec![c_total, h, w], data)?;
        let needs = xs.iter().any(|&id| self.ng(id));
        Ok(self.push(out, Op::Concat { xs: xs.to_vec() }, needs))
    }

    /// Channels `[start, start+len)` of a `[C, H, W]` tensor.
    pub fn slice_channels(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (c, h, w) = self.value(x).dims3()?;
        if start + len > c || len == 0 {
            return Err(Error::config(format!(
                "slice_channels [{}, {}) out of range for {} channels",
                start,
                start + len,
                c
            )));
        }
        let plane = h * w;
        let data = self.value(x).data()[start * plane..(start + len) * plane].to_vec();
        let out = Tensor::new(vec![len, h, w], data)?;
        let needs = self.ng(x);
        Ok(self.push(out, Op::SliceChannels { x, start }, needs))
    }

    fn binary(&mut self, a: NodeId, b: NodeId, name: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::config(format!(
                "{} shape mismatch: {:?} vs {:?}",
                name,
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let needs = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add { a, b }, needs))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, "sub")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x - y)
            .collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let needs = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Sub { a, b }, needs))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let needs = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Mul { a, b }, needs))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, "div")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x / y)
            .collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let needs = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Div { a, b }, needs))
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> NodeId {
        let ks = S::from_f64(k);
        let data = self.value(x).data().iter().map(|&v| v * ks).collect();
        let out = Tensor::new(self.value(x).shape().to_vec(), data).expect("same shape");
        let needs = self.ng(x);
        self.push(out, Op::Scale { x, k: ks }, needs)
    }

    pub fn add_scalar(&mut self, x: NodeId, k: f64) -> NodeId {
        let ks = S::from_f64(k);
        let data = self.value(x).data().iter().map(|&v| v + ks).collect();
        let out = Tensor::new(self.value(x).shape().to_vec(), data).expect("same shape");
        let needs = self.ng(x);
        self.push(out, Op::AddScalar { x }, needs)
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        let data = self.value(x).data().iter().map(|&v| v.abs()).collect();
        let out = Tensor::new(self.value(x).shape().to_vec(), data).expect("same shape");
        let needs = self.ng(x);
        self.push(out, Op::Abs { x }, needs)
    }

    /// Mean over every element; output shape `[1]`.
    pub fn mean_all(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.value(x).numel();
        if n == 0 {
            return Err(Error::config("mean_all of an empty tensor".to_string()));
        }
        let recip = S::from_f64(1.0 / n as f64);
        let mut acc = S::ZERO;
        for &v in self.value(x).data() {
            acc += v;
        }
        let out = Tensor::scalar(acc * recip);
        let needs = self.ng(x);
        Ok(self.push(out, Op::MeanAll { x }, needs))
    }

    /// `[C, H, W] -> [4C, H/2, W/2]` stacked Haar analysis
    /// (band order `ll, lh, hl, hh`).
    pub fn haar_analysis(&mut self, x: NodeId) -> Result<NodeId> {
        let (c, h, w) = self.value(x).dims3()?;
        if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
            return Err(Error::input(format!(
                "haar_analysis needs even spatial dims, got {}x{}",
                h, w
            )));
        }
        let mut out = Tensor::zeros(vec![4 * c, h / 2, w / 2]);
        wavelet::dwt2_stacked(self.value(x).data(), c, h, w, out.data_mut());
        let needs = self.ng(x);
        Ok(self.push(out, Op::HaarAnalysis { x }, needs))
    }

    /// `[4C, H/2, W/2] -> [C, H, W]` stacked Haar synthesis; exact
    /// inverse (and adjoint) of [`Graph::haar_analysis`].
    pub fn haar_synthesis(&mut self, x: NodeId) -> Result<NodeId> {
        let (c4, hh, hw) = self.value(x).dims3()?;
        if c4 % 4 != 0 || c4 == 0 {
            return Err(Error::config(format!(
                "haar_synthesis needs 4k channels, got {}",
                c4
            )));
        }
        let c = c4 / 4;
        let (h, w) = (hh * 2, hw * 2);
        let mut out = Tensor::zeros(vec![c, h, w]);
        wavelet::idwt2_stacked(self.value(x).data(), c, h, w, out.data_mut());
        let needs = self.ng(x);
        Ok(self.push(out, Op::HaarSynthesis { x }, needs))
    }

    fn grad_buf(&mut self, id: NodeId) -> &mut Vec<S> {
        let n = self.nodes[id].value.numel();
        self.grads[id].get_or_insert_with(|| vec![S::ZERO; n])
    }

    /// Reverse pass from a scalar root. Gradients accumulate into every
    /// reachable node with `needs_grad`; leaves keep theirs for the
    /// caller, readable via [`Graph::grad`] / [`Graph::take_grad`].
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if self.value(root).numel() != 1 {
            return Err(Error::config(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        self.grad_buf(root)[0] = S::ONE;

        for id in (0..=root).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(gy) = self.grads[id].take() else {
                continue;
            };
            // Clone is avoided: ops read node values immutably and the
            // gradient table separately.
            match self.nodes[id].op.clone() {
                Op::Leaf => {}
                Op::Conv2d {
                    x,
                    w,
                    b,
                    stride,
                    padding,
                } => {
                    let (ci, h, wd) = self.nodes[x].value.dims3().unwrap();
                    let (co, _, kh, kw) = self.nodes[w].value.dims4().unwrap();
                    let (_, oh, ow) = self.nodes[id].value.dims3().unwrap();
                    if self.ng(x) {
                        let wgt = std::mem::take(self.grad_buf(x));
                        // take/put dance: we need node values immutably
                        // while writing this grad buffer.
                        let mut dx = wgt;
                        conv2d_backward_input(
                            &gy,
                            (ci, h, wd),
                            self.nodes[w].value.data(),
                            (co, kh, kw),
                            stride,
                            padding,
                            &mut dx,
                            (oh, ow),
                        );
                        self.grads[x] = Some(dx);
                    }
                    if self.ng(w) {
                        let mut dw = std::mem::take(self.grad_buf(w));
                        conv2d_backward_weight(
                            self.nodes[x].value.data(),
                            (ci, h, wd),
                            &gy,
                            (co, kh, kw),
                            stride,
                            padding,
                            &mut dw,
                            (oh, ow),
                        );
                        self.grads[w] = Some(dw);
                    }
                    if let Some(b) = b {
                        if self.ng(b) {
                            let db = self.grad_buf(b);
                            for c in 0..co {
                                let mut acc = S::ZERO;
                                for &g in &gy[c * oh * ow..(c + 1) * oh * ow] {
                                    acc += g;
                                }
                                db[c] += acc;
                            }
                        }
                    }
                }
                Op::ConvT2d {
                    x,
                    w,
                    b,
                    stride,
                    padding,
                } => {
                    let (ci, h, wd) = self.nodes[x].value.dims3().unwrap();
                    let (_, co, kh, kw) = self.nodes[w].value.dims4().unwrap();
                    let (_, oh, ow) = self.nodes[id].value.dims3().unwrap();
                    if self.ng(x) {
                        let mut dx = std::mem::take(self.grad_buf(x));
                        conv_transpose2d_backward_input(
                            &gy,
                            (ci, h, wd),
                            self.nodes[w].value.data(),
                            (co, kh, kw),
                            stride,
                            padding,
                            &mut dx,
                            (oh, ow),
                        );
                        self.grads[x] = Some(dx);
                    }
                    if self.ng(w) {
                        let mut dw = std::mem::take(self.grad_buf(w));
                        conv_transpose2d_backward_weight(
                            self.nodes[x].value.data(),
                            (ci, h, wd),
                            &gy,
                            (co, kh, kw),
                            stride,
                            padding,
                            &mut dw,
                            (oh, ow),
                        );
                        self.grads[w] = Some(dw);
                    }
                    if let Some(b) = b {
                        if self.ng(b) {
                            let db = self.grad_buf(b);
                            for c in 0..co {
                                let mut acc = S::ZERO;
                                for &g in &gy[c * oh * ow..(c + 1) * oh * ow] {
                                    acc += g;
                                }
                                db[c] += acc;
                            }
                        }
                    }
                }
                Op::PixelShuffle { x, factor } => {
                    if self.ng(x) {
                        let dims_out = self.nodes[id].value.dims3().unwrap();
                        let mut scratch = vec![S::ZERO; gy.len()];
                        pixel_unshuffle(&gy, dims_out, factor, &mut scratch);
                        let dx = self.grad_buf(x);
                        for (d, g) in dx.iter_mut().zip(scratch) {
                            *d += g;
                        }
                    }
                }
                Op::LeakyRelu { x, slope } => {
                    if self.ng(x) {
                        // Split borrows: values immutable, grads mutable.
                        let xv = std::mem::take(self.grad_buf(x));
                        let mut dx = xv;
                        for (i, g) in gy.iter().enumerate() {
                            let v = self.nodes[x].value.data()[i];
                            dx[i] += if v >= S::ZERO { *g } else { slope * *g };
                        }
                        self.grads[x] = Some(dx);
                    }
                }
                Op::Concat { xs } => {
                    let mut offset = 0;
                    for xid in xs {
                        let n = self.nodes[xid].value.numel();
                        if self.ng(xid) {
                            let dx = self.grad_buf(xid);
                            for (d, &g) in dx.iter_mut().zip(&gy[offset..offset + n]) {
                                *d += g;
                            }
                        }
                        offset += n;
                    }
                }
                Op::SliceChannels { x, start } => {
                    if self.ng(x) {
                        let (_, h, w) = self.nodes[x].value.dims3().unwrap();
                        let plane = h * w;
                        let dx = self.grad_buf(x);
                        for (i, &g) in gy.iter().enumerate() {
                            dx[start * plane + i] += g;
                        }
                    }
                }
                Op::Add { a, b } => {
                    if self.ng(a) {
                        let da = self.grad_buf(a);
                        for (d, &g) in da.iter_mut().zip(&gy) {
                            *d += g;
                        }
                    }
                    if self.ng(b) {
                        let db = self.grad_buf(b);
                        for (d, &g) in db.iter_mut().zip(&gy) {
                            *d += g;
                        }
                    }
                }
                Op::Sub { a, b } => {
                    if self.ng(a) {
                        let da = self.grad_buf(a);
                        for (d, &g) in da.iter_mut().zip(&gy) {
                            *d += g;
                        }
                    }
                    if self.ng(b) {
                        let db = self.grad_buf(b);
                        for (d, &g) in db.iter_mut().zip(&gy) {
                            *d -= g;
                        }
                    }
                }
                Op::Mul { a, b } => {
                    if self.ng(a) {
                        let mut da = std::mem::take(self.grad_buf(a));
                        for (i, &g) in gy.iter().enumerate() {
                            da[i] += g * self.nodes[b].value.data()[i];
                        }
                        self.grads[a] = Some(da);
                    }
                    if self.ng(b) {
                        let mut db = std::mem::take(self.grad_buf(b));
                        for (i, &g) in gy.iter().enumerate() {
                            db[i] += g * self.nodes[a].value.data()[i];
                        }
                        self.grads[b] = Some(db);
                    }
                }
                Op::Div { a, b } => {
                    if self.ng(a) {
                        let mut da = std::mem::take(self.grad_buf(a));
                        for (i, &g) in gy.iter().enumerate() {
                            da[i] += g / self.nodes[b].value.data()[i];
                        }
                        self.grads[a] = Some(da);
                    }
                    if self.ng(b) {
                        let mut db = std::mem::take(self.grad_buf(b));
                        for (i, &g) in gy.iter().enumerate() {
                            let bv = self.nodes[b].value.data()[i];
                            let av = self.nodes[a].value.data()[i];
                            db[i] -= g * av / (bv * bv);
                        }
                        self.grads[b] = Some(db);
                    }
                }
                Op::Scale { x, k } => {
                    if self.ng(x) {
                        let dx = self.grad_buf(x);
                        for (d, &g) in dx.iter_mut().zip(&gy) {
                            *d += k * g;
                        }
                    }
                }
                Op::AddScalar { x } => {
                    if self.ng(x) {
                        let dx = self.grad_buf(x);
                        for (d, &g) in dx.iter_mut().zip(&gy) {
                            *d += g;
                        }
                    }
                }
                Op::Abs { x } => {
                    if self.ng(x) {
                        // Subgradient 0 at exactly zero.
                        let mut dx = std::mem::take(self.grad_buf(x));
                        for (i, &g) in gy.iter().enumerate() {
                            let v = self.nodes[x].value.data()[i];
                            if v > S::ZERO {
                                dx[i] += g;
                            } else if v < S::ZERO {
                                dx[i] -= g;
                            }
                        }
                        self.grads[x] = Some(dx);
                    }
                }
                Op::MeanAll { x } => {
                    if self.ng(x) {
                        let n = self.nodes[x].value.numel();
                        let recip = S::from_f64(1.0 / n as f64);
                        let g = gy[0] * recip;
                        let dx = self.grad_buf(x);
                        for d in dx.iter_mut() {
                            *d += g;
                        }
                    }
                }
                Op::HaarAnalysis { x } => {
                    if self.ng(x) {
                        // Orthonormal transform: adjoint == inverse.
                        let (c, h, w) = self.nodes[x].value.dims3().unwrap();
                        let mut scratch = vec![S::ZERO; c * h * w];
                        wavelet::idwt2_stacked(&gy, c, h, w, &mut scratch);
                        let dx = self.grad_buf(x);
                        for (d, g) in dx.iter_mut().zip(scratch) {
                            *d += g;
                        }
                    }
                }
                Op::HaarSynthesis { x } => {
                    if self.ng(x) {
                        let (c, h, w) = self.nodes[id].value.dims3().unwrap();
                        let mut scratch = vec![S::ZERO; 4 * c * (h / 2) * (w / 2)];
                        wavelet::dwt2_stacked(&gy, c, h, w, &mut scratch);
                        let dx = self.grad_buf(x);
                        for (d, g) in dx.iter_mut().zip(scratch) {
                            *d += g;
                        }
                    }
                }
            }
            self.grads[id] = Some(gy);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Vec<usize>, data: Vec<f32>) -> Tensor<f32> {
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn conv2d_identity_kernel_reproduces_input() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(t(vec![1, 3, 3], (1..=9).map(|v| v as f32).collect()));
        // 1x1 kernel of weight 1.
        let w = g.constant(t(vec![1, 1, 1, 1], vec![1.0]));
        let y = g.conv2d(x, w, None, 1, 0).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
        assert_eq!(g.value(y).shape(), &[1, 3, 3]);
    }

    #[test]
    fn conv2d_output_shape_formula() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(vec![2, 5, 7]));
        let w = g.constant(Tensor::zeros(vec![4, 2, 3, 3]));
        let y = g.conv2d(x, w, None, 2, 1).unwrap();
        // (5 + 2 - 3)/2 + 1 = 3, (7 + 2 - 3)/2 + 1 = 4
        assert_eq!(g.value(y).shape(), &[4, 3, 4]);
    }

    #[test]
    fn conv2d_rejects_channel_mismatch() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(vec![3, 4, 4]));
        let w = g.constant(Tensor::zeros(vec![4, 2, 3, 3]));
        assert!(g.conv2d(x, w, None, 1, 1).is_err());
    }

    #[test]
    fn conv_transpose2d_shape_and_zero_input() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(vec![1, 2, 2]));
        let w = g.constant(Tensor::full(vec![1, 1, 2, 2], 1.0));
        let b = g.constant(t(vec![1], vec![0.5]));
        let y = g.conv_transpose2d(x, w, Some(b), 2, 0).unwrap();
        // (2-1)*2 + 2 = 4
        assert_eq!(g.value(y).shape(), &[1, 4, 4]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.5), "zero input passes bias through");
    }

    #[test]
    fn pixel_shuffle_frozen_example() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(t(vec![4, 1, 1], vec![0.0, 1.0, 2.0, 3.0]));
        let y = g.pixel_shuffle(x, 2).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 2, 2]);
        assert_eq!(g.value(y).data(), &[0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn pixel_shuffle_factor_one_is_identity() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(t(vec![2, 2, 2], (0..8).map(|v| v as f32).collect()));
        let y = g.pixel_shuffle(x, 1).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn pixel_shuffle_rejects_bad_channel_count() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(vec![3, 2, 2]));
        assert!(g.pixel_shuffle(x, 2).is_err());
    }

    #[test]
    fn leaky_relu_frozen_example() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(t(vec![2], vec![1.0, -1.0]));
        let y = g.leaky_relu(x, 0.1);
        assert_eq!(g.value(y).data(), &[1.0, -0.1]);
        // Slope 1 is the identity; non-negative input is unchanged.
        let z = g.leaky_relu(x, 1.0);
        assert_eq!(g.value(z).data(), &[1.0, -1.0]);
    }

    #[test]
    fn concat_then_slice_recovers_inputs() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(t(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let b = g.constant(t(vec![2, 2, 2], (5..13).map(|v| v as f32).collect()));
        let cat = g.concat_channels(&[a, b]).unwrap();
        assert_eq!(g.value(cat).shape(), &[3, 2, 2]);
        let sa = g.slice_channels(cat, 0, 1).unwrap();
        let sb = g.slice_channels(cat, 1, 2).unwrap();
        assert_eq!(g.value(sa).data(), g.value(a).data());
        assert_eq!(g.value(sb).data(), g.value(b).data());
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::zeros(vec![1, 2, 2]));
        let b = g.constant(Tensor::zeros(vec![1, 2, 3]));
        assert!(g.concat_channels(&[a, b]).is_err());
    }

    #[test]
    fn linear_chain_gradient_is_input() {
        // y = mean(w (*) x) for a 1x1 conv: dy/dw = mean(x).
        let mut g = Graph::<f32>::new();
        let x = g.constant(t(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let w = g.param(t(vec![1, 1, 1, 1], vec![2.0]));
        let y = g.conv2d(x, w, None, 1, 0).unwrap();
        let loss = g.mean_all(y).unwrap();
        assert!((g.value(loss).data()[0] - 5.0).abs() < 1e-6);
        g.backward(loss).unwrap();
        let gw = g.grad(w).unwrap();
        assert!((gw[0] - 2.5).abs() < 1e-6, "d mean(wx)/dw = mean(x) = 2.5");
    }

    #[test]
    fn disconnected_param_gets_no_grad() {
        let mut g = Graph::<f32>::new();
        let x = g.param(t(vec![1], vec![3.0]));
        let unused = g.param(t(vec![1], vec![7.0]));
        let y = g.scale(x, 2.0);
        let loss = g.mean_all(y).unwrap();
        g.backward(loss).unwrap();
        assert!(g.grad(x).is_some());
        assert!(g.grad(unused).is_none());
    }

    #[test]
    fn grad_accumulates_over_shared_use() {
        // loss = mean(x + x) => dloss/dx = 2/n each.
        let mut g = Graph::<f32>::new();
        let x = g.param(t(vec![2], vec![1.0, 2.0]));
        let y = g.add(x, x).unwrap();
        let loss = g.mean_all(y).unwrap();
        g.backward(loss).unwrap();
        let gx = g.grad(x).unwrap();
        assert!((gx[0] - 1.0).abs() < 1e-6 && (gx[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut g = Graph::<f32>::new();
        let x = g.param(t(vec![2], vec![1.0, 2.0]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn haar_graph_ops_match_tensor_api_bitwise() {
        use crate::wavelet::{dwt2_haar, Subbands};
        let data: Vec<f32> = (0..3 * 4 * 6).map(|i| (i as f32 * 0.37).sin()).collect();
        let x = t(vec![3, 4, 6], data);
        let sb = dwt2_haar(&x).unwrap();

        let mut g = Graph::<f32>::new();
        let xn = g.constant(x.clone());
        let an = g.haar_analysis(xn).unwrap();
        assert_eq!(g.value(an), &sb.stack(), "graph analysis == tensor analysis");

        let sn = g.haar_synthesis(an).unwrap();
        let back = Subbands::from_stacked(g.value(an)).unwrap();
        assert_eq!(g.value(sn), &crate::wavelet::idwt2_haar(&back).unwrap());
    }
}
