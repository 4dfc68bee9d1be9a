//! The spectra-preserving video model: encoder, decoder, and the
//! temporal extension.
//!
//! Backbone data flow per frame:
//!
//! ```text
//! frame --DWT--> [ll | lh hl hh]
//!                 |
//!                 +--> DB stack --> e_t (16 x h_e x w_e)
//!
//! e_t --UB0..UB4--> u0..u4 --MFU(u2,u3,u4)--> m
//! m --ll head--> ll'      m --HFR--> lh' hl' hh'
//! [ll' lh' hl' hh'] --IDWT--> frame'
//! ```
//!
//! Only the low-frequency band is embedded; the three detail bands are
//! synthesized by the decoder (the HFR), which is what lets the model
//! hold on to high-frequency content without spending embedding
//! capacity on it.
//!
//! The temporal extension adds a second encoder that embeds the
//! temporally low-passed LL planes of (prev, cur) and (cur, next) frame
//! pairs, and replaces the decoder's last three stages with temporal
//! up-sampling blocks (TUBs) that process target/backward/forward
//! streams jointly.

use std::collections::HashMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::wavelet::Subbands;

/// Channel count of the per-frame embedding `e_t`.
pub const EMBED_CHANNELS: usize = 16;
/// Channel count of each temporal embedding `e_dt`.
pub const TEMPORAL_EMBED_CHANNELS: usize = 3;
/// Internal width of the encoder's down-sampling blocks.
pub const ENCODER_WIDTH: usize = 64;
/// Internal width of the temporal encoder's down-sampling blocks.
pub const TEMPORAL_ENCODER_WIDTH: usize = 64;
/// Floor for the decoder channel schedule.
pub const MIN_CHANNELS: usize = 8;
/// Number of up-sampling stages in the decoder.
pub const NUM_STAGES: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Frame height (even).
    pub height: usize,
    /// Frame width (even).
    pub width: usize,
    /// Up-sampling factor of each decoder stage; their product times 2
    /// (the final synthesis) must recover the frame size from the
    /// embedding.
    pub strides: [usize; NUM_STAGES],
    /// Output width of the first decoder stage; later stages shrink by
    /// `r` per stage (clamped at [`MIN_CHANNELS`]).
    pub c0: usize,
    /// Channel reduction rate between decoder stages.
    pub r: f64,
    /// Residual blocks per multi-resolution fusion block.
    pub n_rb: usize,
    /// Embedding spatial size; must equal `(H/2, W/2)` divided by the
    /// stride product.
    pub embed_h: usize,
    pub embed_w: usize,
    /// Multi-resolution fusion unit on/off (ablation).
    pub use_mfu: bool,
    /// High-frequency restorer on/off (ablation).
    pub use_hfr: bool,
    /// Temporal extension on/off.
    pub temporal: bool,
    /// Temporal embedding spatial size (channel count is fixed at 3).
    pub temporal_embed_h: usize,
    pub temporal_embed_w: usize,
    /// Strides of the temporal encoder's down-sampling blocks.
    pub temporal_strides: Vec<usize>,
    /// Use real 3x3x3 convolutions in the TUBs instead of the cheaper
    /// time-into-channel 2-D equivalent.
    pub temporal_3d: bool,
    /// Negative slope of every leaky ReLU.
    pub leaky_slope: f64,
    /// Seed for parameter initialization.
    pub seed: u64,
}

impl Default for ModelConfig {
    /// The bundled desk-scale configuration: 64x128 frames, embedding
    /// 16x2x4, ~0.13M decoder parameters.
    fn default() -> Self {
        ModelConfig {
            height: 64,
            width: 128,
            strides: [2, 2, 2, 2, 1],
            c0: 32,
            r: 1.2,
            n_rb: 3,
            embed_h: 2,
            embed_w: 4,
            use_mfu: true,
            use_hfr: true,
            temporal: false,
            temporal_embed_h: 8,
            temporal_embed_w: 16,
            temporal_strides: vec![2, 2],
            temporal_3d: false,
            leaky_slope: 0.1,
            seed: 1,
        }
    }
}

impl ModelConfig {
    /// Fill `embed_h`/`embed_w` from the frame size and strides.
    pub fn with_derived_embedding(mut self) -> Result<Self> {
        let prod: usize = self.strides.iter().product();
        if prod == 0 {
            return Err(Error::config("stride of 0 in decoder strides".to_string()));
        }
        let (lh, lw) = (self.height / 2, self.width / 2);
        if lh % prod != 0 || lw % prod != 0 {
            return Err(Error::config(format!(
                "stride product {} does not divide the LL plane {}x{}",
                prod, lh, lw
            )));
        }
        self.embed_h = lh / prod;
        self.embed_w = lw / prod;
        if self.temporal {
            let tprod: usize = self.temporal_strides.iter().product();
            if tprod == 0 {
                return Err(Error::config(
                    "stride of 0 in temporal encoder strides".to_string(),
                ));
            }
            if lh % tprod != 0 || lw % tprod != 0 {
                return Err(Error::config(format!(
                    "temporal stride product {} does not divide the LL plane {}x{}",
                    tprod, lh, lw
                )));
            }
            self.temporal_embed_h = lh / tprod;
            self.temporal_embed_w = lw / tprod;
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 2 || self.width < 2 || self.height % 2 != 0 || self.width % 2 != 0 {
            return Err(Error::config(format!(
                "frame size must be even and >= 2, got {}x{}",
                self.height, self.width
            )));
        }
        if self.strides.iter().any(|&s| s == 0) {
            return Err(Error::config("decoder strides must be >= 1".to_string()));
        }
        if self.c0 < MIN_CHANNELS {
            return Err(Error::config(format!(
                "c0 must be >= {}, got {}",
                MIN_CHANNELS, self.c0
            )));
        }
        if self.r < 1.0 {
            return Err(Error::config(format!("reduction rate must be >= 1, got {}", self.r)));
        }
        if self.n_rb < 1 {
            return Err(Error::config("n_rb must be >= 1".to_string()));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::config(format!(
                "leaky slope must be in (0, 1), got {}",
                self.leaky_slope
            )));
        }
        // The embedding must be reachable from the LL plane by exact
        // division at every stage (the encoder divides stage by stage).
        let (mut h, mut w) = (self.height / 2, self.width / 2);
        for &s in self.strides.iter().rev() {
            if h % s != 0 || w % s != 0 {
                return Err(Error::config(format!(
                    "stride {} does not divide intermediate plane {}x{}",
                    s, h, w
                )));
            }
            h /= s;
            w /= s;
        }
        if (h, w) != (self.embed_h, self.embed_w) {
            return Err(Error::config(format!(
                "embedding {}x{} unreachable: strides map the LL plane to {}x{}",
                self.embed_h, self.embed_w, h, w
            )));
        }
        if self.embed_h == 0 || self.embed_w == 0 {
            return Err(Error::config("embedding spatial size must be >= 1".to_string()));
        }
        if self.temporal {
            if self.temporal_strides.is_empty() {
                return Err(Error::config("temporal encoder needs at least one stride".to_string()));
            }
            if self.temporal_strides.iter().any(|&s| s == 0) {
                return Err(Error::config("temporal strides must be >= 1".to_string()));
            }
            let (mut h, mut w) = (self.height / 2, self.width / 2);
            for &s in &self.temporal_strides {
                if h % s != 0 || w % s != 0 {
                    return Err(Error::config(format!(
                        "temporal stride {} does not divide plane {}x{}",
                        s, h, w
                    )));
                }
                h /= s;
                w /= s;
            }
            if (h, w) != (self.temporal_embed_h, self.temporal_embed_w) {
                return Err(Error::config(format!(
                    "temporal embedding {}x{} unreachable: strides give {}x{}",
                    self.temporal_embed_h, self.temporal_embed_w, h, w
                )));
            }
            // The temporal streams join the target stream after the
            // second decoder stage; the adapter up-samples by a single
            // integer factor.
            let h1 = self.embed_h * self.strides[0] * self.strides[1];
            let w1 = self.embed_w * self.strides[0] * self.strides[1];
            if h1 % self.temporal_embed_h != 0 || w1 % self.temporal_embed_w != 0 {
                return Err(Error::config(format!(
                    "temporal embedding {}x{} does not divide the stage-2 plane {}x{}",
                    self.temporal_embed_h, self.temporal_embed_w, h1, w1
                )));
            }
            let fh = h1 / self.temporal_embed_h;
            let fw = w1 / self.temporal_embed_w;
            if fh != fw {
                return Err(Error::config(format!(
                    "temporal adapter factor differs per axis: {} vs {}",
                    fh, fw
                )));
            }
        }
        Ok(())
    }

    /// Serialize as `key=value` lines (the model section of config
    /// files and the checkpoint header).
    pub fn to_key_values(&self) -> String {
        let strides: Vec<String> = self.strides.iter().map(|s| s.to_string()).collect();
        let t_strides: Vec<String> = self.temporal_strides.iter().map(|s| s.to_string()).collect();
        format!(
            "height={}\nwidth={}\nstrides={}\nc0={}\nr={}\nn_rb={}\nembed_h={}\nembed_w={}\n\
             use_mfu={}\nuse_hfr={}\ntemporal={}\ntemporal_embed_h={}\ntemporal_embed_w={}\n\
             temporal_strides={}\ntemporal_3d={}\nleaky_slope={}\nseed={}\n",
            self.height,
            self.width,
            strides.join(","),
            self.c0,
            self.r,
            self.n_rb,
            self.embed_h,
            self.embed_w,
            self.use_mfu,
            self.use_hfr,
            self.temporal,
            self.temporal_embed_h,
            self.temporal_embed_w,
            t_strides.join(","),
            self.temporal_3d,
            self.leaky_slope,
            self.seed
        )
    }

    /// Apply one `key=value` assignment. Unknown keys are rejected so
    /// typos surface instead of silently using defaults.
    pub fn set_key_value(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::config(format!("invalid value {:?} for {}", v, key)))
        }
        fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
            v.split(',')
                .map(|p| parse::<usize>(key, p))
                .collect::<Result<Vec<_>>>()
        }
        match key {
            "height" => self.height = parse(key, value)?,
            "width" => self.width = parse(key, value)?,
            "strides" => {
                let v = parse_list(key, value)?;
                if v.len() != NUM_STAGES {
                    return Err(Error::config(format!(
                        "strides needs {} entries, got {}",
                        NUM_STAGES,
                        v.len()
                    )));
                }
                self.strides.copy_from_slice(&v);
            }
            "c0" => self.c0 = parse(key, value)?,
            "r" => self.r = parse(key, value)?,
            "n_rb" => self.n_rb = parse(key, value)?,
            "embed_h" => self.embed_h = parse(key, value)?,
            "embed_w" => self.embed_w = parse(key, value)?,
            "use_mfu" => self.use_mfu = parse(key, value)?,
            "use_hfr" => self.use_hfr = parse(key, value)?,
            "temporal" => self.temporal = parse(key, value)?,
            "temporal_embed_h" => self.temporal_embed_h = parse(key, value)?,
            "temporal_embed_w" => self.temporal_embed_w = parse(key, value)?,
            "temporal_strides" => self.temporal_strides = parse_list(key, value)?,
            "temporal_3d" => self.temporal_3d = parse(key, value)?,
            "leaky_slope" => self.leaky_slope = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            other => {
                return Err(Error::config(format!("unknown model field {:?}", other)));
            }
        }
        Ok(())
    }

    /// Parse `key=value` lines produced by [`Self::to_key_values`].
    /// Missing keys keep their defaults; unknown keys error.
    pub fn from_key_values(text: &str) -> Result<ModelConfig> {
        let mut cfg = ModelConfig::default();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected key=value, got {:?}", ln + 1, line))
            })?;
            cfg.set_key_value(key.trim(), value)?;
        }
        Ok(cfg)
    }

}

/// Per-stage (in, out) channel pairs of the decoder.
///
/// Stage `i` outputs `max(floor(c0 / r^i), 8)` channels; stage 0
/// consumes the 16-channel embedding.
pub fn channel_schedule(cfg: &ModelConfig) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(NUM_STAGES);
    let mut prev = EMBED_CHANNELS;
    for i in 0..NUM_STAGES {
        let out = ((cfg.c0 as f64 / cfg.r.powi(i as i32)).floor() as usize).max(MIN_CHANNELS);
        pairs.push((prev, out));
        prev = out;
    }
    pairs
}

/// Exact parameter / embedding-size accounting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub encoder_params: usize,
    pub decoder_params: usize,
    pub embedding_floats_per_frame: usize,
}

#[derive(Clone)]
struct ParamDef<S> {
    name: String,
    tensor: Tensor<S>,
}

/// The model: a named set of parameter tensors plus forward builders
/// that assemble the computation on a [`Graph`].
#[derive(Clone)]
pub struct SnervModel<S> {
    cfg: ModelConfig,
    params: Vec<ParamDef<S>>,
    by_name: HashMap<String, usize>,
}

impl<S> fmt::Debug for SnervModel<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SnervModel")
            .field("cfg", &self.cfg)
            .field("tensors", &self.params.len())
            .finish()
    }
}

/// Handle to one graph's copy of every parameter, in declaration order.
pub struct Bound {
    ids: Vec<NodeId>,
}

impl Bound {
    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }
}

/// Subband stack and synthesized frame nodes produced by a decode.
#[derive(Clone, Copy, Debug)]
pub struct Decoded {
    /// `[12, H/2, W/2]` node, band order `ll, lh, hl, hh`.
    pub stack: NodeId,
    /// `[3, H, W]` node; always `haar_synthesis(stack)`.
    pub frame: NodeId,
}

struct ParamBuilder<S> {
    rng: ChaCha8Rng,
    params: Vec<ParamDef<S>>,
}

impl<S: Scalar> ParamBuilder<S> {
    fn new(seed: u64) -> Self {
        ParamBuilder {
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: Vec::new(),
        }
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weight plus zero bias.
    /// Values are drawn as f32 regardless of `S` so that f32 and f64
    /// instantiations of the same seed are value-identical.
    fn conv(&mut self, name: &str, shape: Vec<usize>, fan_in: usize, bias: usize) {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<S> = (0..n)
            .map(|_| {
                let v: f32 = self.rng.random_range(-(bound as f32)..bound as f32);
                S::from_f64(v as f64)
            })
            .collect();
        self.params.push(ParamDef {
            name: format!("{}.weight", name),
            tensor: Tensor::new(shape, data).expect("weight shape"),
        });
        self.params.push(ParamDef {
            name: format!("{}.bias", name),
            tensor: Tensor::zeros(vec![bias]),
        });
    }

    /// Standard conv weight `[co, ci, kh, kw]`.
    fn conv2d(&mut self, name: &str, co: usize, ci: usize, kh: usize, kw: usize) {
        self.conv(name, vec![co, ci, kh, kw], ci * kh * kw, co);
    }

    /// Transposed conv weight `[ci, co, kh, kw]`.
    fn convt2d(&mut self, name: &str, ci: usize, co: usize, kh: usize, kw: usize) {
        self.conv(name, vec![ci, co, kh, kw], ci * kh * kw, co);
    }
}

impl<S: Scalar> SnervModel<S> {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let sched = channel_schedule(&cfg);
        let mut b = ParamBuilder::<S>::new(cfg.seed);

        // ── encoder: DB stack over the LL plane, head to 16 channels ──
        // DB strides mirror the decoder's, coarsest stage last.
        let mut enc_in = 3;
        for (j, &s) in cfg.strides.iter().rev().enumerate() {
            b.conv2d(&format!("encoder.db{}.conv", j), ENCODER_WIDTH, enc_in, 3, 3);
            enc_in = ENCODER_WIDTH;
            let _ = s;
        }
        b.conv2d("encoder.head", EMBED_CHANNELS, ENCODER_WIDTH, 1, 1);

        if cfg.temporal {
            // Temporal encoder: shared across the backward/forward
            // pairs, applied to the temporally low-passed LL plane.
            let mut tin = 3;
            for j in 0..cfg.temporal_strides.len() {
                b.conv2d(
                    &format!("encoder_t.db{}.conv", j),
                    TEMPORAL_ENCODER_WIDTH,
                    tin,
                    3,
                    3,
                );
                tin = TEMPORAL_ENCODER_WIDTH;
            }
            b.conv2d("encoder_t.head", TEMPORAL_EMBED_CHANNELS, TEMPORAL_ENCODER_WIDTH, 1, 1);
        }

        // ── decoder stages ──
        if !cfg.temporal {
            for (i, &(ci, co)) in sched.iter().enumerate() {
                let s = cfg.strides[i];
                b.conv2d(&format!("decoder.ub{}.conv", i), co * s * s, ci, 3, 3);
            }
        } else {
            // First two stages: up-sample + residual double conv.
            for i in 0..2 {
                let (ci, co) = sched[i];
                let s = cfg.strides[i];
                b.conv2d(&format!("decoder.tstage{}.up", i), co * s * s, ci, 3, 3);
                b.conv2d(&format!("decoder.tstage{}.conv1", i), co, co, 3, 3);
                b.conv2d(&format!("decoder.tstage{}.conv2", i), co, co, 3, 3);
            }
            // Adapters lift each temporal embedding to the stage-2
            // stream shape (separate weights per direction).
            let c1 = sched[1].1;
            let f = cfg.embed_h * cfg.strides[0] * cfg.strides[1] / cfg.temporal_embed_h;
            for dir in ["b", "f"] {
                b.conv2d(
                    &format!("decoder.adapt_{}.conv", dir),
                    c1 * f * f,
                    TEMPORAL_EMBED_CHANNELS,
                    3,
                    3,
                );
            }
            // Three TUBs replace stages 2..5.
            for i in 0..3 {
                let (ci, co) = sched[i + 2];
                let s = cfg.strides[i + 2];
                let last = i == 2;
                if !cfg.temporal_3d {
                    b.convt2d(&format!("decoder.tub{}.ct", i), 3 * ci, 3 * ci, s, s);
                    b.conv2d(&format!("decoder.tub{}.conv1", i), 2 * co * 3, 3 * ci, 3, 3);
                    let out = if last { co } else { co * 3 };
                    b.conv2d(&format!("decoder.tub{}.conv2", i), out, 2 * co * 3, 3, 3);
                } else {
                    // 3x3x3 convolutions expressed as three 2-D kernels
                    // per time offset; the CT up-sampling is shared
                    // across time slices.
                    b.convt2d(&format!("decoder.tub{}.ct", i), ci, ci, s, s);
                    for t in 0..3 {
                        b.conv2d(&format!("decoder.tub{}.conv1.t{}", i, t), 2 * co, ci, 3, 3);
                    }
                    for t in 0..3 {
                        b.conv2d(&format!("decoder.tub{}.conv2.t{}", i, t), co, 2 * co, 3, 3);
                    }
                }
            }
        }

        // ── multi-resolution fusion unit ──
        if cfg.use_mfu {
            let taps = [sched[2].1, sched[3].1, sched[4].1];
            let mut m_ch = taps[0];
            for (m, &tap) in taps[1..].iter().enumerate() {
                let half = (m_ch / 2).max(1);
                let s = cfg.strides[3 + m];
                b.convt2d(&format!("decoder.mfu.mfb{}.ct", m), m_ch, half, s, s);
                b.conv2d(&format!("decoder.mfu.mfb{}.fuse", m), tap, half + tap, 1, 1);
                for k in 0..cfg.n_rb {
                    b.conv2d(&format!("decoder.mfu.mfb{}.rb{}.conv1", m, k), tap, tap, 3, 3);
                    b.conv2d(&format!("decoder.mfu.mfb{}.rb{}.conv2", m, k), tap, tap, 3, 3);
                }
                m_ch = tap;
            }
        }

        // ── output heads ──
        let head_in = sched[4].1;
        b.conv2d("decoder.ll_head", 3, head_in, 3, 3);
        if cfg.use_hfr {
            for band in ["lh", "hl", "hh"] {
                b.conv2d(&format!("decoder.hfr.{}.conv1", band), head_in, head_in, 3, 3);
                b.conv2d(&format!("decoder.hfr.{}.conv2", band), 3, head_in, 3, 3);
            }
        }

        let params = b.params;
        let by_name = params
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), i))
            .collect();
        Ok(SnervModel {
            cfg,
            params,
            by_name,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.params.iter().map(|p| (p.name.as_str(), &p.tensor))
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<S>> {
        self.by_name.get(name).map(|&i| &self.params[i].tensor)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor<S>> {
        let i = *self.by_name.get(name)?;
        Some(&mut self.params[i].tensor)
    }

    /// Replace a parameter tensor; the shape must match.
    pub fn set_tensor(&mut self, name: &str, t: Tensor<S>) -> Result<()> {
        let i = *self
            .by_name
            .get(name)
            .ok_or_else(|| Error::config(format!("unknown parameter {}", name)))?;
        if self.params[i].tensor.shape() != t.shape() {
            return Err(Error::config(format!(
                "parameter {} has shape {:?}, got {:?}",
                name,
                self.params[i].tensor.shape(),
                t.shape()
            )));
        }
        self.params[i].tensor = t;
        Ok(())
    }

    /// Mutable views of every parameter, in declaration order (the
    /// order [`SnervModel::bind`] uses).
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        self.params.iter_mut().map(|p| &mut p.tensor).collect()
    }

    pub fn param_count(&self) -> ParamCount {
        let mut enc = 0;
        let mut dec = 0;
        for p in &self.params {
            if p.name.starts_with("encoder") {
                enc += p.tensor.numel();
            } else if p.name.starts_with("decoder.") {
                dec += p.tensor.numel();
            }
        }
        let mut emb = EMBED_CHANNELS * self.cfg.embed_h * self.cfg.embed_w;
        if self.cfg.temporal {
            emb += 2 * TEMPORAL_EMBED_CHANNELS * self.cfg.temporal_embed_h * self.cfg.temporal_embed_w;
        }
        ParamCount {
            encoder_params: enc,
            decoder_params: dec,
            embedding_floats_per_frame: emb,
        }
    }

    /// Insert every parameter into `g` (as trainable leaves or frozen
    /// constants) and return the handle the forward builders use.
    pub fn bind(&self, g: &mut Graph<S>, trainable: bool) -> Bound {
        let ids = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    g.param(p.tensor.clone())
                } else {
                    g.constant(p.tensor.clone())
                }
            })
            .collect();
        Bound { ids }
    }

    fn p(&self, bound: &Bound, name: &str) -> Result<NodeId> {
        self.by_name
            .get(name)
            .map(|&i| bound.ids[i])
            .ok_or_else(|| Error::config(format!("parameter {} not in this model", name)))
    }

    /// conv -> leaky_relu with "same"-style padding `(k - 1) / 2`.
    fn conv_block(
        &self,
        g: &mut Graph<S>,
        bound: &Bound,
        name: &str,
        x: NodeId,
        stride: usize,
    ) -> Result<NodeId> {
        let w = self.p(bound, &format!("{}.weight", name))?;
        let b = self.p(bound, &format!("{}.bias", name))?;
        let (_, _, kh, _) = g.value(w).dims4()?;
        let y = g.conv2d(x, w, Some(b), stride, (kh - 1) / 2)?;
        Ok(g.leaky_relu(y, self.cfg.leaky_slope))
    }

    /// Linear conv (no activation); `pad` chosen by kernel.
    fn conv_linear(
        &self,
        g: &mut Graph<S>,
        bound: &Bound,
        name: &str,
        x: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let w = self.p(bound, &format!("{}.weight", name))?;
        let b = self.p(bound, &format!("{}.bias", name))?;
        g.conv2d(x, w, Some(b), stride, padding)
    }

    // ── encoder ────────────────────────────────────────────────────────

    /// Frame `[3, H, W]` node -> embedding `[16, h_e, w_e]` node. The
    /// frame is decomposed in-graph and only the LL band is embedded.
    pub fn encode(&self, g: &mut Graph<S>, bound: &Bound, frame: NodeId) -> Result<NodeId> {
        let (c, h, w) = g.value(frame).dims3()?;
        if (c, h, w) != (3, self.cfg.height, self.cfg.width) {
            return Err(Error::config(format!(
                "encode expects [3, {}, {}], got [{}, {}, {}]",
                self.cfg.height, self.cfg.width, c, h, w
            )));
        }
        let bands = g.haar_analysis(frame)?;
        let ll = g.slice_channels(bands, 0, 3)?;
        self.encode_ll(g, bound, ll)
    }

    fn encode_ll(&self, g: &mut Graph<S>, bound: &Bound, ll: NodeId) -> Result<NodeId> {
        let mut x = ll;
        for (j, &s) in self.cfg.strides.iter().rev().enumerate() {
            x = self.conv_block(g, bound, &format!("encoder.db{}.conv", j), x, s)?;
        }
        self.conv_linear(g, bound, "encoder.head", x, 1, 0)
    }

    /// Temporal embeddings from (prev, cur, next) frame nodes. Each
    /// adjacent pair is temporally low-passed on its LL planes and run
    /// through the shared temporal DB stack:
    /// backward uses (prev, cur), forward uses (cur, next).
    pub fn encode_temporal(
        &self,
        g: &mut Graph<S>,
        bound: &Bound,
        prev: NodeId,
        cur: NodeId,
        next: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        if !self.cfg.temporal {
            return Err(Error::config("model built without the temporal extension".to_string()));
        }
        for &f in &[prev, cur, next] {
            let (c, h, w) = g.value(f).dims3()?;
            if (c, h, w) != (3, self.cfg.height, self.cfg.width) {
                return Err(Error::input(format!(
                    "encode_temporal expects [3, {}, {}] frames, got [{}, {}, {}]",
                    self.cfg.height, self.cfg.width, c, h, w
                )));
            }
        }
        let ll = |g: &mut Graph<S>, f: NodeId| -> Result<NodeId> {
            let bands = g.haar_analysis(f)?;
            g.slice_channels(bands, 0, 3)
        };
        let ll_prev = ll(g, prev)?;
        let ll_cur = ll(g, cur)?;
        let ll_next = ll(g, next)?;
        // Temporal low-pass: (a + b) / sqrt(2).
        let lf = |g: &mut Graph<S>, a: NodeId, c: NodeId| -> Result<NodeId> {
            let s = g.add(a, c)?;
            Ok(g.scale(s, std::f64::consts::FRAC_1_SQRT_2))
        };
        let lf_b = lf(g, ll_prev, ll_cur)?;
        let lf_f = lf(g, ll_cur, ll_next)?;
        let run = |model: &Self, g: &mut Graph<S>, x0: NodeId| -> Result<NodeId> {
            let mut x = x0;
            for (j, &s) in model.cfg.temporal_strides.iter().enumerate() {
                x = model.conv_block(g, bound, &format!("encoder_t.db{}.conv", j), x, s)?;
            }
            model.conv_linear(g, bound, "encoder_t.head", x, 1, 0)
        };
        Ok((run(self, g, lf_b)?, run(self, g, lf_f)?))
    }

    // ── decoder building blocks ────────────────────────────────────────

    /// One up-sampling stage: conv to `c_out * s^2` channels, pixel
    /// shuffle by `s`, leaky ReLU.
    fn ub(&self, g: &mut Graph<S>, bound: &Bound, i: usize, x: NodeId) -> Result<NodeId> {
        let s = self.cfg.strides[i];
        let w = self.p(bound, &format!("decoder.ub{}.conv.weight", i))?;
        let b = self.p(bound, &format!("decoder.ub{}.conv.bias", i))?;
        let y = g.conv2d(x, w, Some(b), 1, 1)?;
        let y = g.pixel_shuffle(y, s)?;
        Ok(g.leaky_relu(y, self.cfg.leaky_slope))
    }

    /// Residual block: `x + conv2(lrelu(conv1(x)))`, constant width.
    fn rb(&self, g: &mut Graph<S>, bound: &Bound, name: &str, x: NodeId) -> Result<NodeId> {
        let h = self.conv_block(g, bound, &format!("{}.conv1", name), x, 1)?;
        let h = self.conv_linear(g, bound, &format!("{}.conv2", name), h, 1, 1)?;
        g.add(x, h)
    }

    /// Multi-resolution fusion: coarse-to-fine refinement over the last
    /// three stage outputs. Each block up-samples the running feature
    /// with a transposed conv (channel count halved), concatenates the
    /// matching stage output, fuses back to the tap width with a 1x1
    /// conv, and runs the residual blocks at that width.
    fn mfu(
        &self,
        g: &mut Graph<S>,
        bound: &Bound,
        u2: NodeId,
        u3: NodeId,
        u4: NodeId,
    ) -> Result<NodeId> {
        let mut m = u2;
        for (mi, &tap) in [u3, u4].iter().enumerate() {
            let s = self.cfg.strides[3 + mi];
            let ct_w = self.p(bound, &format!("decoder.mfu.mfb{}.ct.weight", mi))?;
            let ct_b = self.p(bound, &format!("decoder.mfu.mfb{}.ct.bias", mi))?;
            let up = g.conv_transpose2d(m, ct_w, Some(ct_b), s, 0)?;
            if g.value(up).shape()[1..] != g.value(tap).shape()[1..] {
                return Err(Error::config(format!(
                    "fusion block {}: up-sampled {:?} does not align with tap {:?}",
                    mi,
                    g.value(up).shape(),
                    g.value(tap).shape()
                )));
            }
            let cat = g.concat_channels(&[up, tap])?;
            let fused = self.conv_block(g, bound, &format!("decoder.mfu.mfb{}.fuse", mi), cat, 1)?;
            let mut x = fused;
            for k in 0..self.cfg.n_rb {
                x = self.rb(g, bound, &format!("decoder.mfu.mfb{}.rb{}", mi, k), x)?;
            }
            m = x;
        }
        Ok(m)
    }

    /// Output heads: LL from a linear conv, detail bands from the HFR
    /// branches (or zero constants when the HFR is ablated), then one
    /// synthesis step. `frame == haar_synthesis(stack)` by construction.
    fn heads(&self, g: &mut Graph<S>, bound: &Bound, base: NodeId) -> Result<Decoded> {
        let ll = self.conv_linear(g, bound, "decoder.ll_head", base, 1, 1)?;
        let (_, bh, bw) = g.value(ll).dims3()?;
        let details: Vec<NodeId> = if self.cfg.use_hfr {
            let mut v = Vec::with_capacity(3);
            for band in ["lh", "hl", "hh"] {
                let h = self.conv_block(g, bound, &format!("decoder.hfr.{}.conv1", band), base, 1)?;
                v.push(self.conv_linear(g, bound, &format!("decoder.hfr.{}.conv2", band), h, 1, 1)?);
            }
            v
        } else {
            (0..3)
                .map(|_| g.constant(Tensor::zeros(vec![3, bh, bw])))
                .collect()
        };
        let stack = g.concat_channels(&[ll, details[0], details[1], details[2]])?;
        let frame = g.haar_synthesis(stack)?;
        Ok(Decoded { stack, frame })
    }

    /// Backbone decode: embedding node -> subband stack + frame nodes.
    pub fn decode(&self, g: &mut Graph<S>, bound: &Bound, e_t: NodeId) -> Result<Decoded> {
        if self.cfg.temporal {
            return Err(Error::config(
                "temporal model: use decode_temporal (backbone decode lacks TUB parameters)".to_string(),
            ));
        }
        let shape = g.value(e_t).shape().to_vec();
        if shape != [EMBED_CHANNELS, self.cfg.embed_h, self.cfg.embed_w] {
            return Err(Error::config(format!(
                "embedding shape {:?} does not match config [{}, {}, {}]",
                shape, EMBED_CHANNELS, self.cfg.embed_h, self.cfg.embed_w
            )));
        }
        let mut us = Vec::with_capacity(NUM_STAGES);
        let mut x = e_t;
        for i in 0..NUM_STAGES {
            x = self.ub(g, bound, i, x)?;
            us.push(x);
        }
        let base = if self.cfg.use_mfu {
            self.mfu(g, bound, us[2], us[3], us[4])?
        } else {
            us[4]
        };
        self.heads(g, bound, base)
    }

    /// First two temporal-decoder stages for the target stream:
    /// up-sample, then a residual double conv.
    fn tstage(&self, g: &mut Graph<S>, bound: &Bound, i: usize, x: NodeId) -> Result<NodeId> {
        let s = self.cfg.strides[i];
        let w = self.p(bound, &format!("decoder.tstage{}.up.weight", i))?;
        let b = self.p(bound, &format!("decoder.tstage{}.up.bias", i))?;
        let y = g.conv2d(x, w, Some(b), 1, 1)?;
        let y = g.pixel_shuffle(y, s)?;
        let u = g.leaky_relu(y, self.cfg.leaky_slope);
        let h = self.conv_block(g, bound, &format!("decoder.tstage{}.conv1", i), u, 1)?;
        let h = self.conv_linear(g, bound, &format!("decoder.tstage{}.conv2", i), h, 1, 1)?;
        g.add(u, h)
    }

    /// Temporal up-sampling block, 2-D time-into-channel form: stack
    /// the three streams on channels, transposed-conv up-sample, expand
    /// to twice the output width, contract back; the last TUB merges to
    /// a single target stream.
    fn tub_2d(
        &self,
        g: &mut Graph<S>,
        bound: &Bound,
        i: usize,
        streams: &[NodeId; 3],
        last: bool,
    ) -> Result<Vec<NodeId>> {
        let s = self.cfg.strides[i + 2];
        let stacked = g.concat_channels(streams)?;
        let ct_w = self.p(bound, &format!("decoder.tub{}.ct.weight", i))?;
        let ct_b = self.p(bound, &format!("decoder.tub{}.ct.bias", i))?;
        let up = g.conv_transpose2d(stacked, ct_w, Some(ct_b), s, 0)?;
        let h = self.conv_block(g, bound, &format!("decoder.tub{}.conv1", i), up, 1)?;
        let out = self.conv_block(g, bound, &format!("decoder.tub{}.conv2", i), h, 1)?;
        if last {
            return Ok(vec![out]);
        }
        let c = g.value(out).shape()[0] / 3;
        Ok((0..3)
            .map(|k| g.slice_channels(out, k * c, c))
            .collect::<Result<Vec<_>>>()?)
    }

    /// Temporal up-sampling block, true 3x3x3 form: the time axis holds
    /// the three streams (backward, target, forward), zero-padded, and
    /// each 3-D convolution is the sum of three 2-D convolutions with
    /// per-offset kernels. The transposed-conv up-sampling is shared
    /// across time slices. The last TUB keeps only the center slice.
    fn tub_3d(
        &self,
        g: &mut Graph<S>,
        bound: &Bound,
        i: usize,
        streams: &[NodeId; 3],
        last: bool,
    ) -> Result<Vec<NodeId>> {
        let s = self.cfg.strides[i + 2];
        let ct_w = self.p(bound, &format!("decoder.tub{}.ct.weight", i))?;
        let ct_b = self.p(bound, &format!("decoder.tub{}.ct.bias", i))?;
        let up: Vec<NodeId> = streams
            .iter()
            .map(|&x| g.conv_transpose2d(x, ct_w, Some(ct_b), s, 0))
            .collect::<Result<Vec<_>>>()?;

        // One 3-D conv layer: out[tau] = sum_j conv2d(in[tau+j-1], w[j]),
        // zero-padded in time, bias added once (on the center term).
        let conv3 = |model: &Self,
                     g: &mut Graph<S>,
                     layer: &str,
                     xs: &[NodeId],
                     taus: std::ops::Range<usize>|
         -> Result<Vec<NodeId>> {
            let mut outs = Vec::new();
            for tau in taus {
                let mut acc: Option<NodeId> = None;
                for j in 0..3usize {
                    let t_in = tau + j;
                    if t_in < 1 || t_in - 1 >= xs.len() {
                        continue;
                    }
                    let w = model.p(bound, &format!("{}.t{}.weight", layer, j))?;
                    let b = if j == 1 {
                        Some(model.p(bound, &format!("{}.t{}.bias", layer, j))?)
                    } else {
                        None
                    };
                    let y = g.conv2d(xs[t_in - 1], w, b, 1, 1)?;
                    acc = Some(match acc {
                        None => y,
                        Some(a) => g.add(a, y)?,
                    });
                }
                outs.push(acc.expect("every time slice has at least one in-range term"));
            }
            Ok(outs)
        };

        let h = conv3(self, g, &format!("decoder.tub{}.conv1", i), &up, 0..3)?;
        let h: Vec<NodeId> = h
            .into_iter()
            .map(|n| g.leaky_relu(n, self.cfg.leaky_slope))
            .collect();
        let taus = if last { 1..2 } else { 0..3 };
        let out = conv3(self, g, &format!("decoder.tub{}.conv2", i), &h, taus)?;
        Ok(out
            .into_iter()
            .map(|n| g.leaky_relu(n, self.cfg.leaky_slope))
            .collect())
    }

    /// Temporal decode: target embedding plus both temporal embeddings.
    pub fn decode_temporal(
        &self,
        g: &mut Graph<S>,
        bound: &Bound,
        e_t: NodeId,
        e_dt_b: NodeId,
        e_dt_f: NodeId,
    ) -> Result<Decoded> {
        if !self.cfg.temporal {
            return Err(Error::config("model built without the temporal extension".to_string()));
        }
        let shape = g.value(e_t).shape().to_vec();
        if shape != [EMBED_CHANNELS, self.cfg.embed_h, self.cfg.embed_w] {
            return Err(Error::config(format!(
                "embedding shape {:?} does not match config [{}, {}, {}]",
                shape, EMBED_CHANNELS, self.cfg.embed_h, self.cfg.embed_w
            )));
        }
        for &e in &[e_dt_b, e_dt_f] {
            let sh = g.value(e).shape().to_vec();
            if sh != [
                TEMPORAL_EMBED_CHANNELS,
                self.cfg.temporal_embed_h,
                self.cfg.temporal_embed_w,
            ] {
                return Err(Error::config(format!(
                    "temporal embedding shape {:?} does not match config [{}, {}, {}]",
                    sh, TEMPORAL_EMBED_CHANNELS, self.cfg.temporal_embed_h, self.cfg.temporal_embed_w
                )));
            }
        }

        let mut t = e_t;
        for i in 0..2 {
            t = self.tstage(g, bound, i, t)?;
        }
        let f = self.cfg.embed_h * self.cfg.strides[0] * self.cfg.strides[1]
            / self.cfg.temporal_embed_h;
        let adapt = |model: &Self, g: &mut Graph<S>, dir: &str, e: NodeId| -> Result<NodeId> {
            let w = model.p(bound, &format!("decoder.adapt_{}.conv.weight", dir))?;
            let b = model.p(bound, &format!("decoder.adapt_{}.conv.bias", dir))?;
            let y = g.conv2d(e, w, Some(b), 1, 1)?;
            let y = g.pixel_shuffle(y, f)?;
            Ok(g.leaky_relu(y, model.cfg.leaky_slope))
        };
        let sb = adapt(self, g, "b", e_dt_b)?;
        let sf = adapt(self, g, "f", e_dt_f)?;

        // Stream order: backward, target, forward (the time axis).
        let mut streams = [sb, t, sf];
        let mut taps = Vec::with_capacity(3);
        for i in 0..3 {
            let last = i == 2;
            let outs = if self.cfg.temporal_3d {
                self.tub_3d(g, bound, i, &streams, last)?
            } else {
                self.tub_2d(g, bound, i, &streams, last)?
            };
            if last {
                taps.push(outs[0]);
            } else {
                // The target stream is the center one.
                taps.push(outs[1]);
                streams = [outs[0], outs[1], outs[2]];
            }
        }
        let base = if self.cfg.use_mfu {
            self.mfu(g, bound, taps[0], taps[1], taps[2])?
        } else {
            taps[2]
        };
        self.heads(g, bound, base)
    }

    // ── tensor-level conveniences (fresh frozen graph per call) ───────

    /// Encode a frame tensor with frozen weights.
    pub fn embed_frame(&self, frame: &Tensor<S>) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let x = g.constant(frame.clone());
        let e = self.encode(&mut g, &bound, x)?;
        Ok(g.value(e).clone())
    }

    /// Temporal embeddings for a (prev, cur, next) frame triple with
    /// frozen weights.
    pub fn embed_temporal(
        &self,
        prev: &Tensor<S>,
        cur: &Tensor<S>,
        next: &Tensor<S>,
    ) -> Result<(Tensor<S>, Tensor<S>)> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let p = g.constant(prev.clone());
        let c = g.constant(cur.clone());
        let n = g.constant(next.clone());
        let (eb, ef) = self.encode_temporal(&mut g, &bound, p, c, n)?;
        Ok((g.value(eb).clone(), g.value(ef).clone()))
    }

    /// Decode an embedding tensor with frozen weights.
    pub fn decode_embedding(&self, e_t: &Tensor<S>) -> Result<(Subbands<S>, Tensor<S>)> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let e = g.constant(e_t.clone());
        let out = self.decode(&mut g, &bound, e)?;
        Ok((
            Subbands::from_stacked(g.value(out.stack))?,
            g.value(out.frame).clone(),
        ))
    }

    /// Decode target + temporal embeddings with frozen weights.
    pub fn decode_embedding_temporal(
        &self,
        e_t: &Tensor<S>,
        e_dt_b: &Tensor<S>,
        e_dt_f: &Tensor<S>,
    ) -> Result<(Subbands<S>, Tensor<S>)> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let e = g.constant(e_t.clone());
        let eb = g.constant(e_dt_b.clone());
        let ef = g.constant(e_dt_f.clone());
        let out = self.decode_temporal(&mut g, &bound, e, eb, ef)?;
        Ok((
            Subbands::from_stacked(g.value(out.stack))?,
            g.value(out.frame).clone(),
        ))
    }

    /// Full frozen reconstruction of one frame (encode then decode).
    pub fn reconstruct(&self, frame: &Tensor<S>) -> Result<(Subbands<S>, Tensor<S>)> {
        let e = self.embed_frame(frame)?;
        self.decode_embedding(&e)
    }
}
