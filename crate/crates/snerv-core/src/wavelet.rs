//! One-level orthonormal 2-D Haar analysis/synthesis and the 1-D
//! temporal Haar pair transform.
//!
//! Filters are the orthonormal pair `phi_L = [1/sqrt(2), 1/sqrt(2)]`,
//! `phi_H = [1/sqrt(2), -1/sqrt(2)]`, applied separably along rows
//! (the W axis) and then columns (the H axis) with stride 2.
//!
//! Band naming convention, fixed here and relied on everywhere else:
//!
//! * `ll` — low-pass both axes; for pixels in `[0, 1]` its values lie
//!   in `[0, 2]`.
//! * `lh` — row low-pass, column high-pass: responds to *horizontal*
//!   edges (intensity varying along H).
//! * `hl` — row high-pass, column low-pass: responds to *vertical*
//!   edges (intensity varying along W).
//! * `hh` — high-pass both axes: diagonal detail.
//!
//! Detail values for `[0, 1]` pixels lie in `[-1, 1]`, which is why
//! wavelet-domain quality metrics use a peak of 2.0 (the dynamic range
//! of every band).
//!
//! Because the transform is orthonormal, synthesis is both the inverse
//! and the adjoint of analysis; the autodiff graph exploits that for
//! the backward passes, and energy is preserved exactly up to rounding
//! (Parseval).

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// The four sub-bands of a one-level 2-D Haar decomposition, each of
/// shape `[C, H/2, W/2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Subbands<S> {
    pub ll: Tensor<S>,
    pub lh: Tensor<S>,
    pub hl: Tensor<S>,
    pub hh: Tensor<S>,
}

impl<S: Scalar> Subbands<S> {
    pub fn bands(&self) -> [&Tensor<S>; 4] {
        [&self.ll, &self.lh, &self.hl, &self.hh]
    }

    /// Stack the bands on the channel axis in `[ll, lh, hl, hh]` order,
    /// giving a `[4C, H/2, W/2]` tensor (the layout the autodiff graph
    /// uses for its analysis/synthesis nodes).
    pub fn stack(&self) -> Tensor<S> {
        let (c, h, w) = self.ll.dims3().expect("subbands are [C,H,W]");
        let mut data = Vec::with_capacity(4 * c * h * w);
        for band in self.bands() {
            data.extend_from_slice(band.data());
        }
        Tensor::new(vec![4 * c, h, w], data).expect("stacked shape consistent")
    }

    /// Inverse of [`Subbands::stack`].
    pub fn from_stacked(t: &Tensor<S>) -> Result<Self> {
        let (c4, h, w) = t.dims3()?;
        if c4 % 4 != 0 {
            return Err(Error::config(format!(
                "stacked sub-band tensor needs 4k channels, got {}",
                c4
            )));
        }
        let c = c4 / 4;
        let plane = c * h * w;
        let band = |i: usize| {
            Tensor::new(
                vec![c, h, w],
                t.data()[i * plane..(i + 1) * plane].to_vec(),
            )
            .expect("band shape consistent")
        };
        Ok(Subbands {
            ll: band(0),
            lh: band(1),
            hl: band(2),
            hh: band(3),
        })
    }
}

/// PSNR of each band plus the aggregated high-frequency figure
/// (mean of the lh/hl/hh PSNRs), all in dB with peak 2.0.
#[derive(Clone, Copy, Debug)]
pub struct BandPsnr {
    pub ll: f64,
    pub lh: f64,
    pub hl: f64,
    pub hh: f64,
    pub hf: f64,
}

fn check_even_dims(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || h % 2 != 0 || w % 2 != 0 {
        return Err(Error::input(format!(
            "Haar analysis needs even, nonzero spatial dims, got {}x{}",
            h, w
        )));
    }
    Ok(())
}

/// One channel plane `[H, W]` -> four `[H/2, W/2]` planes.
pub(crate) fn dwt2_plane<S: Scalar>(
    x: &[S],
    h: usize,
    w: usize,
    ll: &mut [S],
    lh: &mut [S],
    hl: &mut [S],
    hh: &mut [S],
) {
    let inv_sqrt2 = S::from_f64(std::f64::consts::FRAC_1_SQRT_2);
    let (oh, ow) = (h / 2, w / 2);
    for i in 0..oh {
        let top = &x[(2 * i) * w..(2 * i) * w + w];
        let bot = &x[(2 * i + 1) * w..(2 * i + 1) * w + w];
        for j in 0..ow {
            // Row pass (along W) on both rows of the 2x2 block...
            let l_top = (top[2 * j] + top[2 * j + 1]) * inv_sqrt2;
            let h_top = (top[2 * j] - top[2 * j + 1]) * inv_sqrt2;
            let l_bot = (bot[2 * j] + bot[2 * j + 1]) * inv_sqrt2;
            let h_bot = (bot[2 * j] - bot[2 * j + 1]) * inv_sqrt2;
            // ...then the column pass (along H).
            let o = i * ow + j;
            ll[o] = (l_top + l_bot) * inv_sqrt2;
            lh[o] = (l_top - l_bot) * inv_sqrt2;
            hl[o] = (h_top + h_bot) * inv_sqrt2;
            hh[o] = (h_top - h_bot) * inv_sqrt2;
        }
    }
}

/// Inverse of [`dwt2_plane`].
pub(crate) fn idwt2_plane<S: Scalar>(
    ll: &[S],
    lh: &[S],
    hl: &[S],
    hh: &[S],
    out: &mut [S],
    h: usize,
    w: usize,
) {
    let inv_sqrt2 = S::from_f64(std::f64::consts::FRAC_1_SQRT_2);
    let (oh, ow) = (h / 2, w / 2);
    for i in 0..oh {
        for j in 0..ow {
            let o = i * ow + j;
            // Undo the column pass...
            let l_top = (ll[o] + lh[o]) * inv_sqrt2;
            let l_bot = (ll[o] - lh[o]) * inv_sqrt2;
            let h_top = (hl[o] + hh[o]) * inv_sqrt2;
            let h_bot = (hl[o] - hh[o]) * inv_sqrt2;
            // ...then the row pass.
            let t = (2 * i) * w + 2 * j;
            let b = (2 * i + 1) * w + 2 * j;
            out[t] = (l_top + h_top) * inv_sqrt2;
            out[t + 1] = (l_top - h_top) * inv_sqrt2;
            out[b] = (l_bot + h_bot) * inv_sqrt2;
            out[b + 1] = (l_bot - h_bot) * inv_sqrt2;
        }
    }
}

/// Analysis on a stacked layout: `[C, H, W]` -> `[4C, H/2, W/2]` with
/// band blocks in `[ll, lh, hl, hh]` order. Shared by the tensor-level
/// API and the autodiff graph.
pub(crate) fn dwt2_stacked<S: Scalar>(x: &[S], c: usize, h: usize, w: usize, out: &mut [S]) {
    let (oh, ow) = (h / 2, w / 2);
    let plane = oh * ow;
    let band = c * plane;
    for ch in 0..c {
        let xin = &x[ch * h * w..(ch + 1) * h * w];
        // Four disjoint output regions; split_at_mut keeps the borrows
        // separate without unsafe.
        let (ll_all, rest) = out.split_at_mut(band);
        let (lh_all, rest) = rest.split_at_mut(band);
        let (hl_all, hh_all) = rest.split_at_mut(band);
        dwt2_plane(
            xin,
            h,
            w,
            &mut ll_all[ch * plane..(ch + 1) * plane],
            &mut lh_all[ch * plane..(ch + 1) * plane],
            &mut hl_all[ch * plane..(ch + 1) * plane],
            &mut hh_all[ch * plane..(ch + 1) * plane],
        );
    }
}

/// Synthesis on a stacked layout: `[4C, H/2, W/2]` -> `[C, H, W]`.
pub(crate) fn idwt2_stacked<S: Scalar>(sb: &[S], c: usize, h: usize, w: usize, out: &mut [S]) {
    let (oh, ow) = (h / 2, w / 2);
    let plane = oh * ow;
    let band = c * plane;
    for ch in 0..c {
        let ll = &sb[ch * plane..(ch + 1) * plane];
        let lh = &sb[band + ch * plane..band + (ch + 1) * plane];
        let hl = &sb[2 * band + ch * plane..2 * band + (ch + 1) * plane];
        let hh = &sb[3 * band + ch * plane..3 * band + (ch + 1) * plane];
        idwt2_plane(ll, lh, hl, hh, &mut out[ch * h * w..(ch + 1) * h * w], h, w);
    }
}

/// One-level 2-D Haar analysis of a `[C, H, W]` tensor (H, W even).
pub fn dwt2_haar<S: Scalar>(x: &Tensor<S>) -> Result<Subbands<S>> {
    let (c, h, w) = x.dims3()?;
    check_even_dims(h, w)?;
    let mut stacked = Tensor::zeros(vec![4 * c, h / 2, w / 2]);
    dwt2_stacked(x.data(), c, h, w, stacked.data_mut());
    Subbands::from_stacked(&stacked)
}

/// One-level 2-D Haar synthesis; exact inverse of [`dwt2_haar`].
pub fn idwt2_haar<S: Scalar>(sb: &Subbands<S>) -> Result<Tensor<S>> {
    let (c, oh, ow) = sb.ll.dims3()?;
    for (name, band) in [("lh", &sb.lh), ("hl", &sb.hl), ("hh", &sb.hh)] {
        if band.shape() != sb.ll.shape() {
            return Err(Error::config(format!(
                "band {} shape {:?} differs from ll {:?}",
                name,
                band.shape(),
                sb.ll.shape()
            )));
        }
    }
    let (h, w) = (oh * 2, ow * 2);
    let mut out = Tensor::zeros(vec![c, h, w]);
    idwt2_stacked(sb.stack().data(), c, h, w, out.data_mut());
    Ok(out)
}

/// Orthonormal 1-D Haar pair transform along time:
/// `lf = (a + b)/sqrt(2)`, `hf = (a - b)/sqrt(2)`.
///
/// The temporal-extension encoder applies this to the `ll` planes of
/// two adjacent frames and keeps only `lf`.
pub fn dwt_temporal_pair<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>)> {
    if a.shape() != b.shape() {
        return Err(Error::config(format!(
            "temporal pair shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let inv_sqrt2 = S::from_f64(std::f64::consts::FRAC_1_SQRT_2);
    let mut lf = Vec::with_capacity(a.numel());
    let mut hf = Vec::with_capacity(a.numel());
    for (&x, &y) in a.data().iter().zip(b.data().iter()) {
        lf.push((x + y) * inv_sqrt2);
        hf.push((x - y) * inv_sqrt2);
    }
    Ok((
        Tensor::new(a.shape().to_vec(), lf)?,
        Tensor::new(a.shape().to_vec(), hf)?,
    ))
}

/// Mean squared error in `f64`, no clamping.
fn mse<S: Scalar>(x: &Tensor<S>, y: &Tensor<S>) -> f64 {
    let n = x.numel() as f64;
    x.data()
        .iter()
        .zip(y.data().iter())
        .map(|(a, b)| {
            let d = a.to_f64() - b.to_f64();
            d * d
        })
        .sum::<f64>()
        / n
}

/// PSNR in dB for a given peak, capped at 100 dB (also the value
/// returned for an exact match). No clamping is applied: detail bands
/// are signed.
pub fn psnr_with_peak<S: Scalar>(x: &Tensor<S>, y: &Tensor<S>, peak: f64) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(Error::config(format!(
            "psnr shapes differ: {:?} vs {:?}",
            x.shape(),
            y.shape()
        )));
    }
    let m = mse(x, y);
    if m == 0.0 {
        return Ok(100.0);
    }
    Ok((10.0 * (peak * peak / m).log10()).min(100.0))
}

/// Per-band PSNR between two decompositions, peak 2.0 (the dynamic
/// range of every Haar band for `[0, 1]` inputs). The `hf` field
/// aggregates the three detail bands as the mean of their dB values.
pub fn subband_psnr<S: Scalar>(pred: &Subbands<S>, truth: &Subbands<S>) -> Result<BandPsnr> {
    const PEAK: f64 = 2.0;
    let ll = psnr_with_peak(&pred.ll, &truth.ll, PEAK)?;
    let lh = psnr_with_peak(&pred.lh, &truth.lh, PEAK)?;
    let hl = psnr_with_peak(&pred.hl, &truth.hl, PEAK)?;
    let hh = psnr_with_peak(&pred.hh, &truth.hh, PEAK)?;
    Ok(BandPsnr {
        ll,
        lh,
        hl,
        hh,
        hf: (lh + hl + hh) / 3.0,
    })
}

/// Fraction of total signal energy carried by the detail bands.
pub fn detail_energy_fraction<S: Scalar>(x: &Tensor<S>) -> Result<f64> {
    let sb = dwt2_haar(x)?;
    let detail = sb.lh.energy() + sb.hl.energy() + sb.hh.energy();
    let total = detail + sb.ll.energy();
    if total == 0.0 {
        return Ok(0.0);
    }
    Ok(detail / total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t3(c: usize, h: usize, w: usize, data: Vec<f64>) -> Tensor<f64> {
        Tensor::new(vec![c, h, w], data).unwrap()
    }

    #[test]
    fn constant_frame_maps_to_scaled_ll_only() {
        let x = Tensor::<f64>::full(vec![3, 4, 4], 0.25);
        let sb = dwt2_haar(&x).unwrap();
        for v in sb.ll.data() {
            assert!((v - 0.5).abs() < 1e-12, "ll of constant c must be 2c");
        }
        for band in [&sb.lh, &sb.hl, &sb.hh] {
            assert!(band.data().iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn two_by_two_block_hand_values() {
        // Hand application of the separable filters to [[1,2],[3,4]]:
        // row pass gives l = [3, 7]/sqrt(2), h = [-1, -1]/sqrt(2);
        // column pass gives ll = 5, lh = -2, hl = -1, hh = 0.
        let x = t3(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let sb = dwt2_haar(&x).unwrap();
        assert!((sb.ll.data()[0] - 5.0).abs() < 1e-12);
        assert!((sb.lh.data()[0] - -2.0).abs() < 1e-12);
        assert!((sb.hl.data()[0] - -1.0).abs() < 1e-12);
        assert!(sb.hh.data()[0].abs() < 1e-12);
    }

    #[test]
    fn horizontal_edge_lights_up_lh_only() {
        // Rows of 0 then rows of 1: intensity varies along H, i.e. a
        // horizontal edge. Only the lh band may respond; hl and hh must
        // be identically zero. This test pins the directional naming.
        // The switchover sits at an odd row so it lands inside a Haar
        // block (blocks pair rows 2i and 2i+1).
        let mut data = vec![0.0f64; 8 * 8];
        for row in 3..8 {
            for col in 0..8 {
                data[row * 8 + col] = 1.0;
            }
        }
        let x = t3(1, 8, 8, data);
        let sb = dwt2_haar(&x).unwrap();
        let max_abs = |t: &Tensor<f64>| t.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max_abs(&sb.lh) > 0.4, "lh must respond to a horizontal edge");
        assert!(max_abs(&sb.hl) < 1e-12, "hl must stay zero");
        assert!(max_abs(&sb.hh) < 1e-12, "hh must stay zero");
    }

    #[test]
    fn vertical_edge_lights_up_hl_only() {
        // Columns of 0 then 1 with the switch at an odd column: a
        // vertical edge must land in hl exclusively.
        let mut data = vec![0.0f64; 8 * 8];
        for row in 0..8 {
            for col in 3..8 {
                data[row * 8 + col] = 1.0;
            }
        }
        let x = t3(1, 8, 8, data);
        let sb = dwt2_haar(&x).unwrap();
        let max_abs = |t: &Tensor<f64>| t.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max_abs(&sb.hl) > 0.4, "hl must respond to a vertical edge");
        assert!(max_abs(&sb.lh) < 1e-12, "lh must stay zero");
        assert!(max_abs(&sb.hh) < 1e-12, "hh must stay zero");
    }

    proptest::proptest! {
        #[test]
        fn round_trip_reconstructs_exactly(
            c in 1usize..3,
            oh in 1usize..7,
            ow in 1usize..7,
            seed in 0u64..1000,
        ) {
            use rand::{Rng, SeedableRng};
            let (h, w) = (2 * oh, 2 * ow);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = Tensor::new(vec![c, h, w], data).unwrap();
            let back = idwt2_haar(&dwt2_haar(&x).unwrap()).unwrap();
            proptest::prop_assert!(x.max_abs_diff(&back) < 1e-12);
        }

        #[test]
        fn transform_preserves_energy(
            oh in 1usize..7,
            ow in 1usize..7,
            seed in 0u64..1000,
        ) {
            use rand::{Rng, SeedableRng};
            let (h, w) = (2 * oh, 2 * ow);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = Tensor::new(vec![1, h, w], data).unwrap();
            let sb = dwt2_haar(&x).unwrap();
            let band_energy: f64 = sb.bands().iter().map(|b| b.energy()).sum();
            proptest::prop_assert!((band_energy - x.energy()).abs() < 1e-9 * (1.0 + x.energy()));
        }
    }

    #[test]
    fn odd_dims_rejected() {
        assert!(dwt2_haar(&Tensor::<f32>::zeros(vec![3, 5, 8])).is_err());
        assert!(dwt2_haar(&Tensor::<f32>::zeros(vec![3, 8, 5])).is_err());
        assert!(dwt2_haar(&Tensor::<f32>::zeros(vec![3, 0, 0])).is_err());
    }

    #[test]
    fn temporal_pair_identities() {
        let a = t3(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let (lf, hf) = dwt_temporal_pair(&a, &a).unwrap();
        let s2 = std::f64::consts::SQRT_2;
        for (l, x) in lf.data().iter().zip(a.data()) {
            assert!((l - s2 * x).abs() < 1e-12, "equal frames: lf = sqrt(2) x");
        }
        assert!(hf.data().iter().all(|v| v.abs() < 1e-12), "equal frames: hf = 0");

        let b = t3(1, 2, 2, vec![0.0, 0.0, 0.0, 0.0]);
        let (lf, hf) = dwt_temporal_pair(&a, &b).unwrap();
        for ((l, h), x) in lf.data().iter().zip(hf.data()).zip(a.data()) {
            assert!((l - x / s2).abs() < 1e-12);
            assert!((h - x / s2).abs() < 1e-12);
        }
    }

    #[test]
    fn subband_psnr_examples() {
        let x = Tensor::<f64>::full(vec![3, 4, 4], 0.3);
        let sb = dwt2_haar(&x).unwrap();
        let p = subband_psnr(&sb, &sb).unwrap();
        assert_eq!(p.ll, 100.0, "identical bands cap at 100 dB");

        // +0.2 uniform offset on ll with peak 2.0: 20 log10(2/0.2) = 20 dB.
        let mut shifted = sb.clone();
        for v in shifted.ll.data_mut() {
            *v += 0.2;
        }
        let p = subband_psnr(&shifted, &sb).unwrap();
        assert!((p.ll - 20.0).abs() < 1e-9, "ll psnr {} != 20", p.ll);

        // Symmetry in the arguments.
        let q = subband_psnr(&sb, &shifted).unwrap();
        assert_eq!(p.ll, q.ll);
    }
}
