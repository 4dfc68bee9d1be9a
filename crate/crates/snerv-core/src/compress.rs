//! Post-training model compression: global magnitude pruning of the
//! decoder, uniform affine quantization (low-bit decoder weights, 6-bit
//! embeddings by default), bit accounting down to the byte, and a compact
//! binary container (`SNVC`).
//!
//! The compressed representation of a video is the decoder parameter set
//! plus one embedding per frame; the encoder is a training-time artifact
//! and is not stored. Decoder tensors are stored sparsely (a
//! 1-bit-per-element bitmap marks nonzero entries, only those entries are
//! quantized), embeddings densely. Biases are never pruned and never
//! quantized below 8 bits. Exact zeros reconstruct exactly; every retained
//! value reconstructs within `scale / 2`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, SnervModel};
use crate::objectives::{psnr_frame_clamped, FRAME_PEAK};
use crate::tensor::Tensor;
use crate::video::VideoClip;

/// Container magic bytes.
pub const MAGIC: [u8; 4] = *b"SNVC";
/// Container format version.
pub const VERSION: u16 = 1;

/// Smallest supported quantization bit width.
pub const MIN_BITS: u8 = 2;
/// Largest supported quantization bit width (codes fit in `u16`).
pub const MAX_BITS: u8 = 16;

/// Pipeline knobs: how much of the decoder to prune and the bit widths
/// used for decoder weights and embeddings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompressOptions {
    /// Fraction of decoder weight elements to zero, in `[0, 1)`.
    pub prune_fraction: f64,
    /// Bit width for decoder weight tensors (biases use at least 8 bits).
    pub bits_decoder: u8,
    /// Bit width for frame embeddings.
    pub bits_embed: u8,
}

impl Default for CompressOptions {
    fn default() -> Self {
        CompressOptions {
            prune_fraction: 0.10,
            bits_decoder: 8,
            bits_embed: 6,
        }
    }
}

impl CompressOptions {
    fn validate(&self) -> Result<()> {
        check_bits(self.bits_decoder)?;
        check_bits(self.bits_embed)?;
        if !(0.0..1.0).contains(&self.prune_fraction) || !self.prune_fraction.is_finite() {
            return Err(Error::config(format!(
                "prune fraction {} outside [0, 1)",
                self.prune_fraction
            )));
        }
        Ok(())
    }
}

fn check_bits(bits: u8) -> Result<()> {
    if !(MIN_BITS..=MAX_BITS).contains(&bits) {
        return Err(Error::config(format!(
            "bit width {bits} outside supported range {MIN_BITS}..={MAX_BITS}"
        )));
    }
    Ok(())
}

/// True for tensors that participate in magnitude pruning: decoder
/// convolution weights. Biases and everything on the encoder side are
/// exempt.
pub fn prunable(name: &str) -> bool {
    name.starts_with("decoder.") && name.ends_with(".weight")
}

/// What a [`prune_global`] call selected.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PruneOutcome {
    /// Flat indices zeroed per tensor, ascending, keyed by tensor name.
    pub zeroed: BTreeMap<String, Vec<usize>>,
    /// Total number of selected elements, `floor(fraction * N)`.
    pub zero_count: usize,
    /// Total prunable elements `N` across all decoder weight tensors.
    pub total_prunable: usize,
}

/// Zero the `floor(fraction * N)` smallest-magnitude decoder weights,
/// ranking globally across all decoder weight tensors. Ties are broken by
/// (tensor name, flat index) ascending, which makes the selection — and
/// therefore the whole pipeline — deterministic and idempotent: the
/// weights zeroed by one call are exactly the minimal elements of the
/// next.
pub fn prune_global(model: &mut SnervModel<f32>, fraction: f64) -> Result<PruneOutcome> {
    if !(0.0..1.0).contains(&fraction) || !fraction.is_finite() {
        return Err(Error::config(format!(
            "prune fraction {fraction} outside [0, 1)"
        )));
    }
    let mut names: Vec<String> = model
        .tensors()
        .filter(|(name, _)| prunable(name))
        .map(|(name, _)| name.to_string())
        .collect();
    names.sort();

    let mut ranked: Vec<(f32, u32, u32)> = Vec::new();
    for (ord, name) in names.iter().enumerate() {
        let t = model.tensor(name).expect("name taken from this model");
        for (i, &w) in t.data().iter().enumerate() {
            ranked.push((w.abs(), ord as u32, i as u32));
        }
    }
    let n = ranked.len();
    // The epsilon absorbs binary representation error in decimal fractions
    // (0.3 * 10 must select 3 elements, not 2).
    let k = (((fraction * n as f64) + 1e-9).floor() as usize).min(n);
    ranked.sort_unstable_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    ranked.truncate(k);

    let mut zeroed: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for &(_, ord, idx) in &ranked {
        zeroed
            .entry(names[ord as usize].clone())
            .or_default()
            .push(idx as usize);
    }
    for (name, idxs) in zeroed.iter_mut() {
        idxs.sort_unstable();
        let t = model
            .tensor_mut(name)
            .expect("name taken from this model");
        let data = t.data_mut();
        for &i in idxs.iter() {
            data[i] = 0.0;
        }
    }
    Ok(PruneOutcome {
        zeroed,
        zero_count: k,
        total_prunable: n,
    })
}

/// Result of quantizing one value slice.
#[derive(Clone, Debug, PartialEq)]
pub struct Quantized {
    /// One code per input value, in order; each fits the requested width.
    pub codes: Vec<u16>,
    pub scale: f32,
    pub zero_point: i32,
}

/// Uniform affine quantization over the full value range:
/// `scale = (max - min) / (2^bits - 1)`, `zero_point = round(-min / scale)`,
/// `code = clamp(round(x / scale) + zero_point, 0, 2^bits - 1)`.
///
/// A constant slice takes a degenerate exact path: the constant itself is
/// stored in `scale` with every code set to 1 and `zero_point = 0`, so the
/// ordinary dequantization formula `scale * (code - zero_point)`
/// reproduces it bit-exactly (including the all-zero case).
pub fn quantize_values(x: &[f32], bits: u8) -> Result<Quantized> {
    check_bits(bits)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("cannot quantize non-finite values"));
    }
    if x.is_empty() {
        return Ok(Quantized {
            codes: Vec::new(),
            scale: 0.0,
            zero_point: 0,
        });
    }
    let mut min = f32::INFINITY;
    let mut max = f32::NEG_INFINITY;
    for &v in x {
        min = min.min(v);
        max = max.max(v);
    }
    if min == max {
        return Ok(Quantized {
            codes: vec![1; x.len()],
            scale: min,
            zero_point: 0,
        });
    }
    let levels = ((1u32 << bits) - 1) as f64;
    let range = max as f64 - min as f64;
    // Round the stored f32 scale upward so `levels * scale` still covers
    // the full range; otherwise clamping at the extremes could push the
    // round-trip error past scale / 2.
    let mut scale = (range / levels) as f32;
    while (scale as f64) * levels < range {
        scale = scale.next_up();
    }
    let s = scale as f64;
    let zp64 = (-(min as f64) / s).round();
    if zp64.abs() > i32::MAX as f64 {
        return Err(Error::input(format!(
            "value range [{min}, {max}] too narrow relative to its offset to quantize"
        )));
    }
    let zp = zp64 as i32;
    let codes = x
        .iter()
        .map(|&v| ((v as f64 / s).round() + zp64).clamp(0.0, levels) as u16)
        .collect();
    Ok(Quantized {
        codes,
        scale,
        zero_point: zp,
    })
}

/// Invert [`quantize_values`] for one code. This exact affine
/// reconstruction satisfies `|dequantize(quantize(x)) - x| <= scale / 2`
/// for every in-range value; the `f32` storage form in
/// [`dequantize_code`] adds at most half an ulp of representation
/// rounding on top.
pub fn dequantize_code_f64(code: u16, scale: f32, zero_point: i32) -> f64 {
    scale as f64 * (code as i64 - zero_point as i64) as f64
}

/// [`dequantize_code_f64`] rounded to the tensor element type.
pub fn dequantize_code(code: u16, scale: f32, zero_point: i32) -> f32 {
    dequantize_code_f64(code, scale, zero_point) as f32
}

/// One quantized tensor as stored in the container. Decoder tensors
/// (names under `decoder.`) are sparse: `bitmap` holds 1 bit per element,
/// LSB-first within each byte, and `codes` covers only the set bits in
/// flat order. Embedding records are dense with an empty bitmap.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub dims: Vec<usize>,
    pub bits: u8,
    pub scale: f32,
    pub zero_point: i32,
    pub bitmap: Vec<u8>,
    pub codes: Vec<u16>,
}

impl TensorRecord {
    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }

    /// Number of stored values (codes).
    pub fn stored(&self) -> usize {
        self.codes.len()
    }

    /// Sparse records carry a nonzero bitmap; dense records store every
    /// element.
    pub fn is_sparse(&self) -> bool {
        self.name.starts_with("decoder.")
    }

    fn bitmap_popcount(&self) -> usize {
        self.bitmap.iter().map(|b| b.count_ones() as usize).sum()
    }

    /// Quantize a tensor into a record. Sparse records store only the
    /// nonzero elements and derive scale/zero-point from them alone.
    pub fn from_tensor(name: &str, t: &Tensor<f32>, bits: u8, sparse: bool) -> Result<TensorRecord> {
        let data = t.data();
        if sparse != name.starts_with("decoder.") {
            return Err(Error::config(format!(
                "record {name}: sparsity must follow the name prefix"
            )));
        }
        let (bitmap, values): (Vec<u8>, Vec<f32>) = if sparse {
            let mut bitmap = vec![0u8; data.len().div_ceil(8)];
            let mut values = Vec::new();
            for (i, &v) in data.iter().enumerate() {
                if v != 0.0 {
                    bitmap[i / 8] |= 1 << (i % 8);
                    values.push(v);
                }
            }
            (bitmap, values)
        } else {
            (Vec::new(), data.to_vec())
        };
        let q = quantize_values(&values, bits)?;
        Ok(TensorRecord {
            name: name.to_string(),
            dims: t.shape().to_vec(),
            bits,
            scale: q.scale,
            zero_point: q.zero_point,
            bitmap,
            codes: q.codes,
        })
    }

    /// Reconstruct the tensor: unset bitmap bits become exact zeros,
    /// stored codes pass through the affine dequantizer.
    pub fn dequantize(&self) -> Result<Tensor<f32>> {
        let numel = self.numel();
        let mut data = vec![0.0f32; numel];
        if self.is_sparse() {
            if self.bitmap.len() != numel.div_ceil(8) {
                return Err(Error::corrupt(
                    "compressed model",
                    format!("record {}: bitmap length mismatch", self.name),
                ));
            }
            if self.bitmap_popcount() != self.codes.len() {
                return Err(Error::corrupt(
                    "compressed model",
                    format!(
                        "record {}: bitmap popcount {} != stored codes {}",
                        self.name,
                        self.bitmap_popcount(),
                        self.codes.len()
                    ),
                ));
            }
            let mut next = 0usize;
            for (i, slot) in data.iter_mut().enumerate() {
                if self.bitmap[i / 8] >> (i % 8) & 1 == 1 {
                    *slot = dequantize_code(self.codes[next], self.scale, self.zero_point);
                    next += 1;
                }
            }
        } else {
            if self.codes.len() != numel {
                return Err(Error::corrupt(
                    "compressed model",
                    format!("record {}: dense code count mismatch", self.name),
                ));
            }
            for (slot, &c) in data.iter_mut().zip(&self.codes) {
                *slot = dequantize_code(c, self.scale, self.zero_point);
            }
        }
        Tensor::new(self.dims.clone(), data)
    }
}

/// Per-frame embeddings for a whole clip, in frame order. Boundary frames
/// reuse their nearest neighbor for the temporal pair, matching the
/// training-time convention.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipEmbeddings {
    /// One content embedding per frame.
    pub spatial: Vec<Tensor<f32>>,
    /// One (backward, forward) temporal embedding pair per frame; empty
    /// for models without the temporal branch.
    pub temporal: Vec<(Tensor<f32>, Tensor<f32>)>,
}

/// Run the encoder over every frame of a clip.
pub fn embed_clip(model: &SnervModel<f32>, clip: &VideoClip) -> Result<ClipEmbeddings> {
    if clip.is_empty() {
        return Err(Error::input("cannot embed an empty clip"));
    }
    let mut spatial = Vec::with_capacity(clip.len());
    let mut temporal = Vec::new();
    for k in 0..clip.len() {
        spatial.push(model.embed_frame(&clip.frames[k])?);
        if model.config().temporal {
            let prev = &clip.frames[k.saturating_sub(1)];
            let next = &clip.frames[(k + 1).min(clip.len() - 1)];
            temporal.push(model.embed_temporal(prev, &clip.frames[k], next)?);
        }
    }
    Ok(ClipEmbeddings { spatial, temporal })
}

/// Decode every stored embedding back into a frame.
pub fn decode_clip(model: &SnervModel<f32>, emb: &ClipEmbeddings) -> Result<Vec<Tensor<f32>>> {
    let mut frames = Vec::with_capacity(emb.spatial.len());
    for (k, e) in emb.spatial.iter().enumerate() {
        let frame = if model.config().temporal {
            let (eb, ef) = emb.temporal.get(k).ok_or_else(|| {
                Error::input("temporal model but no temporal embedding for frame")
            })?;
            model.decode_embedding_temporal(e, eb, ef)?.1
        } else {
            model.decode_embedding(e)?.1
        };
        frames.push(frame);
    }
    Ok(frames)
}

/// A pruned + quantized model together with the per-frame embeddings of
/// the clip it represents. This is the unit that gets serialized.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressedModel {
    pub cfg: ModelConfig,
    pub prune_fraction: f64,
    pub bits_decoder: u8,
    pub bits_embed: u8,
    pub num_frames: usize,
    /// How many decoder weights the prune step zeroed.
    pub zeroed: usize,
    /// Decoder parameter count before compression.
    pub original_decoder_params: usize,
    /// Total embedding floats across all frames before quantization.
    pub original_embedding_floats: usize,
    /// Decoder tensors (sparse), sorted by name.
    pub decoder: Vec<TensorRecord>,
    /// Embedding tensors (dense), sorted by name; names encode the frame
    /// index so the sort preserves frame order.
    pub embeddings: Vec<TensorRecord>,
}

/// Prune, quantize, and package a trained model together with the
/// embeddings of `clip`. The input model is left untouched.
pub fn compress(
    model: &SnervModel<f32>,
    clip: &VideoClip,
    opts: &CompressOptions,
) -> Result<CompressedModel> {
    let cfg = model.config();
    let (h, w) = clip.dims();
    if (h, w) != (cfg.height, cfg.width) {
        return Err(Error::input(format!(
            "clip is {h}x{w} but the model was built for {}x{}",
            cfg.height, cfg.width
        )));
    }
    let emb = embed_clip(model, clip)?;
    compress_embedded(model, &emb, opts)
}

/// [`compress`] with the embeddings already computed. Useful both for
/// reusing encoder work and for exact size forecasting: the bit
/// accounting depends only on tensor structure, so placeholder
/// embeddings of the right shape (e.g. zeros) predict the rate of a
/// real compression run exactly.
pub fn compress_embedded(
    model: &SnervModel<f32>,
    emb: &ClipEmbeddings,
    opts: &CompressOptions,
) -> Result<CompressedModel> {
    opts.validate()?;
    let cfg = model.config().clone();
    if emb.spatial.is_empty() {
        return Err(Error::input("cannot compress zero frames"));
    }
    if cfg.temporal && emb.temporal.len() != emb.spatial.len() {
        return Err(Error::input(format!(
            "temporal model needs one embedding pair per frame: {} vs {}",
            emb.temporal.len(),
            emb.spatial.len()
        )));
    }

    let mut pruned = model.clone();
    let outcome = prune_global(&mut pruned, opts.prune_fraction)?;

    let mut decoder_names: Vec<String> = pruned
        .tensors()
        .filter(|(name, _)| name.starts_with("decoder."))
        .map(|(name, _)| name.to_string())
        .collect();
    decoder_names.sort();
    let mut decoder = Vec::with_capacity(decoder_names.len());
    for name in &decoder_names {
        let t = pruned.tensor(name).expect("name taken from this model");
        let bits = if name.ends_with(".weight") {
            opts.bits_decoder
        } else {
            // Biases: tiny and sensitive, never below 8 bits.
            opts.bits_decoder.max(8)
        };
        decoder.push(TensorRecord::from_tensor(name, t, bits, true)?);
    }

    let mut embeddings = Vec::new();
    for (k, e) in emb.spatial.iter().enumerate() {
        embeddings.push(TensorRecord::from_tensor(
            &format!("embed.{k:05}.spatial"),
            e,
            opts.bits_embed,
            false,
        )?);
        if cfg.temporal {
            let (eb, ef) = &emb.temporal[k];
            embeddings.push(TensorRecord::from_tensor(
                &format!("embed.{k:05}.tb"),
                eb,
                opts.bits_embed,
                false,
            )?);
            embeddings.push(TensorRecord::from_tensor(
                &format!("embed.{k:05}.tf"),
                ef,
                opts.bits_embed,
                false,
            )?);
        }
    }

    let counts = model.param_count();
    Ok(CompressedModel {
        cfg,
        prune_fraction: opts.prune_fraction,
        bits_decoder: opts.bits_decoder,
        bits_embed: opts.bits_embed,
        num_frames: emb.spatial.len(),
        zeroed: outcome.zero_count,
        original_decoder_params: counts.decoder_params,
        original_embedding_floats: embeddings.iter().map(|r| r.numel()).sum(),
        decoder,
        embeddings,
    })
}

/// Rebuild a decodable model and the per-frame embeddings from a
/// compressed container. Only the decoder is restored from the payload;
/// encoder tensors stay at their seeded initialization (they are not part
/// of the compressed representation and are never used for decoding).
pub fn decompress(cm: &CompressedModel) -> Result<(SnervModel<f32>, ClipEmbeddings)> {
    let mut model = SnervModel::new(cm.cfg.clone())?;
    for rec in &cm.decoder {
        model.set_tensor(&rec.name, rec.dequantize()?)?;
    }

    let mut spatial = Vec::with_capacity(cm.num_frames);
    let mut temporal = Vec::new();
    let mut by_name: BTreeMap<&str, &TensorRecord> = BTreeMap::new();
    for rec in &cm.embeddings {
        by_name.insert(rec.name.as_str(), rec);
    }
    let fetch = |name: &str| -> Result<Tensor<f32>> {
        by_name
            .get(name)
            .ok_or_else(|| Error::corrupt("compressed model", format!("missing record {name}")))?
            .dequantize()
    };
    for k in 0..cm.num_frames {
        spatial.push(fetch(&format!("embed.{k:05}.spatial"))?);
        if cm.cfg.temporal {
            temporal.push((
                fetch(&format!("embed.{k:05}.tb"))?,
                fetch(&format!("embed.{k:05}.tf"))?,
            ));
        }
    }
    Ok((model, ClipEmbeddings { spatial, temporal }))
}

/// Exact bit accounting for a compressed model against a video of
/// `(height, width, frames)` pixels.
///
/// `total_bits` is exactly eight times the serialized byte length:
/// payload and bitmap bits are counted at their information size, and
/// all framing — magic, version, config block, per-record headers, and
/// byte-alignment padding — lands in `header_bits`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BitAccounting {
    /// Quantized decoder codes: stored values times their bit width.
    pub decoder_payload_bits: u64,
    /// One bit per decoder element.
    pub decoder_bitmap_bits: u64,
    /// Dense embedding codes across all frames.
    pub embedding_bits: u64,
    /// Format framing plus byte-alignment padding.
    pub header_bits: u64,
    /// Sum of the above; equals `8 * serialized length`.
    pub total_bits: u64,
    /// `total_bits / (height * width * frames)`.
    pub bpp: f64,
}

impl CompressedModel {
    /// Compute the bit accounting without serializing.
    pub fn accounting(&self, dims: (usize, usize, usize)) -> Result<BitAccounting> {
        let (h, w, t) = dims;
        if h == 0 || w == 0 || t == 0 {
            return Err(Error::input("bpp needs positive video dimensions"));
        }
        let config = self.config_block();
        // Fixed framing: magic, version, config length + text, record count.
        let mut header_bits = 8 * (4 + 2 + 4 + config.len() as u64 + 4);
        let mut decoder_payload_bits = 0u64;
        let mut decoder_bitmap_bits = 0u64;
        let mut embedding_bits = 0u64;
        for rec in self.decoder.iter().chain(self.embeddings.iter()) {
            header_bits += 8 * record_header_bytes(rec);
            let payload = rec.stored() as u64 * rec.bits as u64;
            let payload_pad = 8 * payload.div_ceil(8) - payload;
            header_bits += payload_pad;
            if rec.is_sparse() {
                let n = rec.numel() as u64;
                decoder_bitmap_bits += n;
                header_bits += 8 * n.div_ceil(8) - n;
                decoder_payload_bits += payload;
            } else {
                embedding_bits += payload;
            }
        }
        let total_bits =
            header_bits + decoder_payload_bits + decoder_bitmap_bits + embedding_bits;
        Ok(BitAccounting {
            decoder_payload_bits,
            decoder_bitmap_bits,
            embedding_bits,
            header_bits,
            total_bits,
            bpp: total_bits as f64 / (h * w * t) as f64,
        })
    }

    fn config_block(&self) -> String {
        format!(
            "{}compress.prune_fraction={:?}\ncompress.bits_decoder={}\ncompress.bits_embed={}\n\
             compress.num_frames={}\ncompress.zeroed={}\ncompress.original_decoder_params={}\n\
             compress.original_embedding_floats={}\n",
            self.cfg.to_key_values(),
            self.prune_fraction,
            self.bits_decoder,
            self.bits_embed,
            self.num_frames,
            self.zeroed,
            self.original_decoder_params,
            self.original_embedding_floats,
        )
    }

    /// Serialize to the `SNVC` container. Deterministic: equal models
    /// produce equal bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let config = self.config_block();
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(config.as_bytes());
        let count = (self.decoder.len() + self.embeddings.len()) as u32;
        out.extend_from_slice(&count.to_le_bytes());
        for rec in self.decoder.iter().chain(self.embeddings.iter()) {
            out.extend_from_slice(&(rec.name.len() as u16).to_le_bytes());
            out.extend_from_slice(rec.name.as_bytes());
            out.push(rec.bits);
            out.push(rec.dims.len() as u8);
            for &d in &rec.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.extend_from_slice(&rec.scale.to_le_bytes());
            out.extend_from_slice(&rec.zero_point.to_le_bytes());
            if rec.is_sparse() {
                out.extend_from_slice(&rec.bitmap);
            }
            out.extend_from_slice(&pack_codes(&rec.codes, rec.bits));
        }
        out
    }

    /// Parse an `SNVC` container.
    pub fn from_bytes(bytes: &[u8]) -> Result<CompressedModel> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::corrupt("compressed model", "bad magic bytes"));
        }
        let version = cur.u16()?;
        if version != VERSION {
            return Err(Error::Version {
                kind: "compressed model",
                found: version,
                expected: VERSION,
            });
        }
        let config_len = cur.u32()? as usize;
        let config = std::str::from_utf8(cur.take(config_len)?)
            .map_err(|e| Error::corrupt("compressed model", format!("config not UTF-8: {e}")))?
            .to_string();
        let (cfg, meta) = parse_config_block(&config)?;
        let count = cur.u32()? as usize;
        let mut decoder = Vec::new();
        let mut embeddings = Vec::new();
        for _ in 0..count {
            let name_len = cur.u16()? as usize;
            let name = std::str::from_utf8(cur.take(name_len)?)
                .map_err(|e| Error::corrupt("compressed model", format!("name not UTF-8: {e}")))?
                .to_string();
            let bits = cur.take(1)?[0];
            check_bits(bits)?;
            let ndim = cur.take(1)?[0] as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(cur.u32()? as usize);
            }
            let numel: usize = dims.iter().product();
            let scale = f32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes"));
            let zero_point = i32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes"));
            let sparse = name.starts_with("decoder.");
            let dense = name.starts_with("embed.");
            if !sparse && !dense {
                return Err(Error::corrupt(
                    "compressed model",
                    format!("unrecognized record {name}"),
                ));
            }
            let (bitmap, stored) = if sparse {
                let bitmap = cur.take(numel.div_ceil(8))?.to_vec();
                let stored = bitmap.iter().map(|b| b.count_ones() as usize).sum();
                (bitmap, stored)
            } else {
                (Vec::new(), numel)
            };
            let payload_bytes = (stored * bits as usize).div_ceil(8);
            let codes = unpack_codes(cur.take(payload_bytes)?, bits, stored);
            let rec = TensorRecord {
                name,
                dims,
                bits,
                scale,
                zero_point,
                bitmap,
                codes,
            };
            if sparse {
                decoder.push(rec);
            } else {
                embeddings.push(rec);
            }
        }
        if cur.pos != bytes.len() {
            return Err(Error::corrupt(
                "compressed model",
                format!("{} trailing bytes", bytes.len() - cur.pos),
            ));
        }
        Ok(CompressedModel {
            cfg,
            prune_fraction: meta.prune_fraction,
            bits_decoder: meta.bits_decoder,
            bits_embed: meta.bits_embed,
            num_frames: meta.num_frames,
            zeroed: meta.zeroed,
            original_decoder_params: meta.original_decoder_params,
            original_embedding_floats: meta.original_embedding_floats,
            decoder,
            embeddings,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<CompressedModel> {
        CompressedModel::from_bytes(&fs::read(path)?)
    }
}

fn record_header_bytes(rec: &TensorRecord) -> u64 {
    // name length + name + bits + ndim + dims + scale + zero point
    2 + rec.name.len() as u64 + 1 + 1 + 4 * rec.dims.len() as u64 + 4 + 4
}

struct Meta {
    prune_fraction: f64,
    bits_decoder: u8,
    bits_embed: u8,
    num_frames: usize,
    zeroed: usize,
    original_decoder_params: usize,
    original_embedding_floats: usize,
}

fn parse_config_block(text: &str) -> Result<(ModelConfig, Meta)> {
    let mut model_lines = String::new();
    let mut meta: BTreeMap<&str, &str> = BTreeMap::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("compress.") {
            let (key, value) = rest.split_once('=').ok_or_else(|| {
                Error::corrupt("compressed model", format!("malformed meta line {line:?}"))
            })?;
            meta.insert(key, value);
        } else {
            model_lines.push_str(line);
            model_lines.push('\n');
        }
    }
    let cfg = ModelConfig::from_key_values(&model_lines)?;
    let get = |key: &str| -> Result<&str> {
        meta.get(key).copied().ok_or_else(|| {
            Error::corrupt("compressed model", format!("missing meta key compress.{key}"))
        })
    };
    let parse_usize = |key: &str| -> Result<usize> {
        get(key)?.parse().map_err(|e| {
            Error::corrupt("compressed model", format!("bad compress.{key}: {e}"))
        })
    };
    let prune_fraction: f64 = get("prune_fraction")?.parse().map_err(|e| {
        Error::corrupt("compressed model", format!("bad compress.prune_fraction: {e}"))
    })?;
    let bits_decoder: u8 = get("bits_decoder")?.parse().map_err(|e| {
        Error::corrupt("compressed model", format!("bad compress.bits_decoder: {e}"))
    })?;
    let bits_embed: u8 = get("bits_embed")?.parse().map_err(|e| {
        Error::corrupt("compressed model", format!("bad compress.bits_embed: {e}"))
    })?;
    Ok((
        cfg,
        Meta {
            prune_fraction,
            bits_decoder,
            bits_embed,
            num_frames: parse_usize("num_frames")?,
            zeroed: parse_usize("zeroed")?,
            original_decoder_params: parse_usize("original_decoder_params")?,
            original_embedding_floats: parse_usize("original_embedding_floats")?,
        },
    ))
}

/// Pack codes LSB-first: bit `b` of code `i` lands at stream position
/// `i * bits + b`, and stream position `p` is bit `p % 8` of byte `p / 8`.
fn pack_codes(codes: &[u16], bits: u8) -> Vec<u8> {
    let bits = bits as usize;
    let mut out = vec![0u8; (codes.len() * bits).div_ceil(8)];
    let mut pos = 0usize;
    for &c in codes {
        for b in 0..bits {
            if c >> b & 1 == 1 {
                out[(pos + b) / 8] |= 1 << ((pos + b) % 8);
            }
        }
        pos += bits;
    }
    out
}

fn unpack_codes(bytes: &[u8], bits: u8, count: usize) -> Vec<u16> {
    let bits = bits as usize;
    let mut codes = Vec::with_capacity(count);
    let mut pos = 0usize;
    for _ in 0..count {
        let mut c = 0u16;
        for b in 0..bits {
            if bytes[(pos + b) / 8] >> ((pos + b) % 8) & 1 == 1 {
                c |= 1 << b;
            }
        }
        codes.push(c);
        pos += bits;
    }
    codes
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::corrupt(
                "compressed model",
                format!(
                    "truncated: wanted {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Shannon entropy of the quantized symbol streams, summed per record:
/// an informational estimate of the payload size an ideal per-tensor
/// entropy coder could reach. Not used in any rate figure.
pub fn entropy_bits(cm: &CompressedModel) -> f64 {
    let mut total = 0.0;
    for rec in cm.decoder.iter().chain(cm.embeddings.iter()) {
        if rec.codes.is_empty() {
            continue;
        }
        let mut hist: BTreeMap<u16, usize> = BTreeMap::new();
        for &c in &rec.codes {
            *hist.entry(c).or_default() += 1;
        }
        let n = rec.codes.len() as f64;
        let entropy: f64 = hist
            .values()
            .map(|&count| {
                let p = count as f64 / n;
                -p * p.log2()
            })
            .sum();
        total += entropy * n;
    }
    total
}

/// Full pipeline check: compress, serialize, verify the bytes reload to
/// an identical model, decode both the original and the compressed model,
/// and report the per-frame PSNR cost together with the rate accounting.
#[derive(Clone, Debug)]
pub struct RoundtripReport {
    pub compressed: CompressedModel,
    /// PSNR of the uncompressed model's reconstruction, per frame.
    pub psnr_original: Vec<f64>,
    /// PSNR of the compressed model's reconstruction, per frame.
    pub psnr_compressed: Vec<f64>,
    /// `psnr_original - psnr_compressed`, per frame.
    pub delta_psnr: Vec<f64>,
    pub mean_delta_psnr: f64,
    pub accounting: BitAccounting,
    pub entropy_bits: f64,
    pub file_bytes: usize,
}

pub fn roundtrip(
    model: &SnervModel<f32>,
    clip: &VideoClip,
    opts: &CompressOptions,
) -> Result<RoundtripReport> {
    let cm = compress(model, clip, opts)?;
    let bytes = cm.to_bytes();
    let reloaded = CompressedModel::from_bytes(&bytes)?;
    if reloaded != cm {
        return Err(Error::Integrity(
            "compressed container did not reload identically".to_string(),
        ));
    }
    let (dmodel, demb) = decompress(&reloaded)?;

    let emb = embed_clip(model, clip)?;
    let original = decode_clip(model, &emb)?;
    let restored = decode_clip(&dmodel, &demb)?;

    let mut psnr_original = Vec::with_capacity(clip.len());
    let mut psnr_compressed = Vec::with_capacity(clip.len());
    let mut delta_psnr = Vec::with_capacity(clip.len());
    for k in 0..clip.len() {
        let p0 = psnr_frame_clamped(&original[k], &clip.frames[k], FRAME_PEAK)?;
        let p1 = psnr_frame_clamped(&restored[k], &clip.frames[k], FRAME_PEAK)?;
        psnr_original.push(p0);
        psnr_compressed.push(p1);
        delta_psnr.push(p0 - p1);
    }
    let mean_delta_psnr = delta_psnr.iter().sum::<f64>() / delta_psnr.len().max(1) as f64;
    let (h, w) = clip.dims();
    let accounting = cm.accounting((h, w, clip.len()))?;
    Ok(RoundtripReport {
        entropy_bits: entropy_bits(&cm),
        compressed: cm,
        psnr_original,
        psnr_compressed,
        delta_psnr,
        mean_delta_psnr,
        accounting,
        file_bytes: bytes.len(),
    })
}
