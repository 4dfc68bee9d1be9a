//! Reconstruction objectives and quality metrics.
//!
//! The training loss blends L1 with structural dissimilarity:
//!
//! ```text
//! frame_loss(x, y) = alpha * L1(x, y) + (1 - alpha) * (1 - SSIM(x, y))
//! ```
//!
//! with `alpha = 0.7` by default. The full objective adds the same
//! blend applied to each wavelet subband (peak 2.0 there, since
//! orthonormal Haar bands of a [0, 1] frame live in [-2, 2]):
//!
//! ```text
//! total = frame_loss(frame) + mean over {ll, lh, hl, hh} of frame_loss(band)
//! ```
//!
//! SSIM uses a Gaussian window (11 taps, sigma 1.5), valid convolution,
//! per channel, averaged over channels. Frame-level SSIM insists on the
//! full 11-tap window; subband terms shrink the window to the largest
//! odd size that fits (scaling sigma proportionally) so that small
//! training crops remain usable — subbands are half the frame size.

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_ALPHA: f64 = 0.7;
pub const FRAME_PEAK: f64 = 1.0;
pub const BAND_PEAK: f64 = 2.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

/// SSIM window specification: tap count (odd) and Gaussian sigma.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Window {
    pub size: usize,
    pub sigma: f64,
}

impl Window {
    pub fn fixed() -> Self {
        Window {
            size: SSIM_WINDOW,
            sigma: SSIM_SIGMA,
        }
    }

    /// Largest odd window `<= 11` that fits in an `h x w` plane, with
    /// sigma scaled by `size / 11`.
    pub fn fitted(h: usize, w: usize) -> Result<Self> {
        let m = h.min(w);
        if m == 0 {
            return Err(Error::input("SSIM window cannot fit an empty plane".to_string()));
        }
        let size = if m >= SSIM_WINDOW {
            SSIM_WINDOW
        } else if m % 2 == 1 {
            m
        } else {
            m - 1
        };
        let size = size.max(1);
        Ok(Window {
            size,
            sigma: SSIM_SIGMA * size as f64 / SSIM_WINDOW as f64,
        })
    }
}

/// Normalized 1-D Gaussian taps; the 2-D window is the outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    assert!(size >= 1 && size % 2 == 1, "window must be odd");
    if size == 1 {
        return vec![1.0];
    }
    let c = (size / 2) as f64;
    let mut taps: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - c;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Separable valid convolution of one plane with identical vertical and
/// horizontal taps. Returns the filtered plane and its dimensions.
fn sep_filter(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = taps.len();
    let oh = h - k + 1;
    let ow = w - k + 1;
    // Vertical pass: (oh, w)
    let mut tmp = vec![0.0f64; oh * w];
    for y in 0..oh {
        for (dy, &t) in taps.iter().enumerate() {
            let src = &plane[(y + dy) * w..(y + dy) * w + w];
            let dst = &mut tmp[y * w..y * w + w];
            for (d, &v) in dst.iter_mut().zip(src) {
                *d += t * v;
            }
        }
    }
    // Horizontal pass: (oh, ow)
    let mut out = vec![0.0f64; oh * ow];
    for y in 0..oh {
        let row = &tmp[y * w..y * w + w];
        let orow = &mut out[y * ow..y * ow + ow];
        for (dx, &t) in taps.iter().enumerate() {
            for (o, &v) in orow.iter_mut().zip(&row[dx..dx + ow]) {
                *o += t * v;
            }
        }
    }
    (out, oh, ow)
}

/// Mean SSIM between two `[C, H, W]` tensors, computed per channel in
/// f64 and averaged. This is the reference metric used for evaluation.
pub fn ssim_with_window<S: Scalar>(
    x: &Tensor<S>,
    y: &Tensor<S>,
    peak: f64,
    window: Window,
) -> Result<f64> {
    let (c, h, w) = x.dims3()?;
    if x.shape() != y.shape() {
        return Err(Error::input(format!(
            "ssim shape mismatch: {:?} vs {:?}",
            x.shape(),
            y.shape()
        )));
    }
    if window.size > h.min(w) {
        return Err(Error::input(format!(
            "ssim window {} exceeds plane {}x{}",
            window.size, h, w
        )));
    }
    let taps = gaussian_taps(window.size, window.sigma);
    let c1 = (0.01 * peak) * (0.01 * peak);
    let c2 = (0.03 * peak) * (0.03 * peak);
    let plane = h * w;
    let mut acc = 0.0f64;
    for ch in 0..c {
        let xs: Vec<f64> = x.data()[ch * plane..(ch + 1) * plane]
            .iter()
            .map(|v| v.to_f64())
            .collect();
        let ys: Vec<f64> = y.data()[ch * plane..(ch + 1) * plane]
            .iter()
            .map(|v| v.to_f64())
            .collect();
        let xx: Vec<f64> = xs.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = ys.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = xs.iter().zip(&ys).map(|(a, b)| a * b).collect();
        let (mu_x, oh, ow) = sep_filter(&xs, h, w, &taps);
        let (mu_y, _, _) = sep_filter(&ys, h, w, &taps);
        let (e_xx, _, _) = sep_filter(&xx, h, w, &taps);
        let (e_yy, _, _) = sep_filter(&yy, h, w, &taps);
        let (e_xy, _, _) = sep_filter(&xy, h, w, &taps);
        let mut sum = 0.0f64;
        for i in 0..oh * ow {
            let mx = mu_x[i];
            let my = mu_y[i];
            let vx = e_xx[i] - mx * mx;
            let vy = e_yy[i] - my * my;
            let cov = e_xy[i] - mx * my;
            let num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
            let den = (mx * mx + my * my + c1) * (vx + vy + c2);
            sum += num / den;
        }
        acc += sum / (oh * ow) as f64;
    }
    Ok(acc / c as f64)
}

/// SSIM with the standard 11-tap window (errors if the plane is smaller).
pub fn ssim<S: Scalar>(x: &Tensor<S>, y: &Tensor<S>, peak: f64) -> Result<f64> {
    ssim_with_window(x, y, peak, Window::fixed())
}

/// Mean absolute error between two equal-shaped tensors, in f64.
pub fn l1<S: Scalar>(x: &Tensor<S>, y: &Tensor<S>) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(Error::input(format!(
            "l1 shape mismatch: {:?} vs {:?}",
            x.shape(),
            y.shape()
        )));
    }
    let n = x.numel().max(1);
    let mut acc = 0.0f64;
    for (a, b) in x.data().iter().zip(y.data()) {
        acc += (a.to_f64() - b.to_f64()).abs();
    }
    Ok(acc / n as f64)
}

/// Frame PSNR in dB with both inputs clamped to `[0, peak]` first
/// (display pipelines clamp, so the metric should too). Capped at
/// 100 dB for identical inputs.
pub fn psnr_frame_clamped<S: Scalar>(pred: &Tensor<S>, target: &Tensor<S>, peak: f64) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::input(format!(
            "psnr shape mismatch: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.numel().max(1);
    let mut mse = 0.0f64;
    for (p, t) in pred.data().iter().zip(target.data()) {
        let pc = p.to_f64().clamp(0.0, peak);
        let tc = t.to_f64().clamp(0.0, peak);
        let d = pc - tc;
        mse += d * d;
    }
    mse /= n as f64;
    if mse == 0.0 {
        return Ok(100.0);
    }
    Ok((10.0 * ((peak * peak) / mse).log10()).min(100.0))
}

// ── graph-side (differentiable) versions ────────────────────────────────

/// Separable Gaussian filter as two valid 1-D convolutions on a
/// single-channel node.
fn sep_filter_graph<S: Scalar>(g: &mut Graph<S>, x: NodeId, taps: &[f64]) -> Result<NodeId> {
    let k = taps.len();
    if k == 1 {
        return Ok(x);
    }
    let data: Vec<S> = taps.iter().map(|&t| S::from_f64(t)).collect();
    let wv = g.constant(Tensor::new(vec![1, 1, k, 1], data.clone())?);
    let wh = g.constant(Tensor::new(vec![1, 1, 1, k], data)?);
    let v = g.conv2d(x, wv, None, 1, 0)?;
    g.conv2d(v, wh, None, 1, 0)
}

/// Differentiable mean SSIM over a `[C, H, W]` pair of nodes; returns a
/// scalar node. Matches [`ssim_with_window`] up to float precision.
pub fn ssim_graph<S: Scalar>(
    g: &mut Graph<S>,
    x: NodeId,
    y: NodeId,
    peak: f64,
    window: Window,
) -> Result<NodeId> {
    let (c, h, w) = g.value(x).dims3()?;
    if g.value(x).shape() != g.value(y).shape() {
        return Err(Error::input(format!(
            "ssim shape mismatch: {:?} vs {:?}",
            g.value(x).shape(),
            g.value(y).shape()
        )));
    }
    if window.size > h.min(w) {
        return Err(Error::input(format!(
            "ssim window {} exceeds plane {}x{}",
            window.size, h, w
        )));
    }
    let taps = gaussian_taps(window.size, window.sigma);
    let c1 = (0.01 * peak) * (0.01 * peak);
    let c2 = (0.03 * peak) * (0.03 * peak);

    let mut per_channel: Vec<NodeId> = Vec::with_capacity(c);
    for ch in 0..c {
        let xc = g.slice_channels(x, ch, 1)?;
        let yc = g.slice_channels(y, ch, 1)?;
        let mu_x = sep_filter_graph(g, xc, &taps)?;
        let mu_y = sep_filter_graph(g, yc, &taps)?;
        let xx = g.mul(xc, xc)?;
        let yy = g.mul(yc, yc)?;
        let xy = g.mul(xc, yc)?;
        let e_xx = sep_filter_graph(g, xx, &taps)?;
        let e_yy = sep_filter_graph(g, yy, &taps)?;
        let e_xy = sep_filter_graph(g, xy, &taps)?;

        let mx2 = g.mul(mu_x, mu_x)?;
        let my2 = g.mul(mu_y, mu_y)?;
        let mxy = g.mul(mu_x, mu_y)?;
        let var_x = g.sub(e_xx, mx2)?;
        let var_y = g.sub(e_yy, my2)?;
        let cov = g.sub(e_xy, mxy)?;

        let two_mxy = g.scale(mxy, 2.0);
        let num_l = g.add_scalar(two_mxy, c1);
        let two_cov = g.scale(cov, 2.0);
        let num_r = g.add_scalar(two_cov, c2);
        let num = g.mul(num_l, num_r)?;

        let m_sum = g.add(mx2, my2)?;
        let den_l = g.add_scalar(m_sum, c1);
        let v_sum = g.add(var_x, var_y)?;
        let den_r = g.add_scalar(v_sum, c2);
        let den = g.mul(den_l, den_r)?;

        let map = g.div(num, den)?;
        per_channel.push(g.mean_all(map)?);
    }
    let mut acc = per_channel[0];
    for &s in &per_channel[1..] {
        acc = g.add(acc, s)?;
    }
    Ok(g.scale(acc, 1.0 / c as f64))
}

/// Differentiable mean absolute error; returns a scalar node.
pub fn l1_graph<S: Scalar>(g: &mut Graph<S>, x: NodeId, y: NodeId) -> Result<NodeId> {
    let d = g.sub(x, y)?;
    let a = g.abs(d);
    g.mean_all(a)
}

/// `alpha * L1 + (1 - alpha) * (1 - SSIM)` as a scalar node.
pub fn frame_loss_graph<S: Scalar>(
    g: &mut Graph<S>,
    pred: NodeId,
    target: NodeId,
    peak: f64,
    alpha: f64,
    window: Window,
) -> Result<NodeId> {
    let l1n = l1_graph(g, pred, target)?;
    let ssim_n = ssim_graph(g, pred, target, peak, window)?;
    let neg = g.scale(ssim_n, -1.0);
    let dssim = g.add_scalar(neg, 1.0);
    let a = g.scale(l1n, alpha);
    let b = g.scale(dssim, 1.0 - alpha);
    g.add(a, b)
}

/// Scalar values of every term in the composite objective, read back
/// from the graph after the forward pass (for logging / CSV output).
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: f64,
    pub frame: f64,
    pub band_ll: f64,
    pub band_lh: f64,
    pub band_hl: f64,
    pub band_hh: f64,
}

impl LossTerms {
    pub fn band_mean(&self) -> f64 {
        (self.band_ll + self.band_lh + self.band_hl + self.band_hh) / 4.0
    }
}

/// Reported loss decomposition. `total` is `frame_loss + coeff_loss`
/// by construction, so additivity is exact in the report even though
/// the graph accumulates in a fixed but different order.
#[derive(Clone, Copy, Debug)]
pub struct LossBreakdown {
    pub frame_loss: f64,
    pub coeff_loss: f64,
    pub total: f64,
    pub per_band: [f64; 4],
}

impl From<LossTerms> for LossBreakdown {
    fn from(t: LossTerms) -> Self {
        let coeff = t.band_mean();
        LossBreakdown {
            frame_loss: t.frame,
            coeff_loss: coeff,
            total: t.frame + coeff,
            per_band: [t.band_ll, t.band_lh, t.band_hl, t.band_hh],
        }
    }
}

/// The composite objective on a predicted subband stack.
///
/// `pred_stack` and `target_stack` are `[4C, H/2, W/2]` nodes in band
/// order `ll, lh, hl, hh`; `pred_frame` and `target_frame` are the
/// `[C, H, W]` synthesized frames. The caller supplies the synthesized
/// frame node so the same synthesis output can be reused for metrics.
///
/// Returns the scalar loss node plus the numeric value of every term.
#[allow(clippy::too_many_arguments)]
pub fn total_loss_graph<S: Scalar>(
    g: &mut Graph<S>,
    pred_stack: NodeId,
    target_stack: NodeId,
    pred_frame: NodeId,
    target_frame: NodeId,
    alpha: f64,
) -> Result<(NodeId, LossTerms)> {
    let (c4, bh, bw) = g.value(pred_stack).dims3()?;
    if c4 % 4 != 0 {
        return Err(Error::config(format!(
            "subband stack must hold 4 bands, got {} channels",
            c4
        )));
    }
    let c = c4 / 4;
    let frame = frame_loss_graph(g, pred_frame, target_frame, FRAME_PEAK, alpha, Window::fixed())?;

    let band_window = Window::fitted(bh, bw)?;
    let mut band_nodes = [0usize; 4];
    for (b, node) in band_nodes.iter_mut().enumerate() {
        let pb = g.slice_channels(pred_stack, b * c, c)?;
        let tb = g.slice_channels(target_stack, b * c, c)?;
        *node = frame_loss_graph(g, pb, tb, BAND_PEAK, alpha, band_window)?;
    }
    let s01 = g.add(band_nodes[0], band_nodes[1])?;
    let s23 = g.add(band_nodes[2], band_nodes[3])?;
    let s = g.add(s01, s23)?;
    let band_mean = g.scale(s, 0.25);
    let total = g.add(frame, band_mean)?;

    let terms = LossTerms {
        total: g.value(total).data()[0].to_f64(),
        frame: g.value(frame).data()[0].to_f64(),
        band_ll: g.value(band_nodes[0]).data()[0].to_f64(),
        band_lh: g.value(band_nodes[1]).data()[0].to_f64(),
        band_hl: g.value(band_nodes[2]).data()[0].to_f64(),
        band_hh: g.value(band_nodes[3]).data()[0].to_f64(),
    };
    Ok((total, terms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: Vec<usize>, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(0.0f32..1.0)).collect();
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn gaussian_taps_normalized_and_symmetric() {
        let t = gaussian_taps(11, 1.5);
        let sum: f64 = t.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        for i in 0..5 {
            assert!((t[i] - t[10 - i]).abs() < 1e-15);
        }
        assert!(t[5] > t[4], "center tap dominates");
        assert_eq!(gaussian_taps(1, 1.5), vec![1.0]);
    }

    #[test]
    fn ssim_of_identical_inputs_is_one() {
        let x = rand_tensor(vec![3, 16, 16], 7);
        let s = ssim(&x, &x, 1.0).unwrap();
        assert!((s - 1.0).abs() < 1e-12, "got {}", s);
    }

    #[test]
    fn ssim_penalizes_noise_more_than_small_bias() {
        let x = rand_tensor(vec![1, 24, 24], 11);
        // Structured: constant offset.
        let biased =
            Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v + 0.02).collect()).unwrap();
        // Unstructured: sign-flipping offset of the same magnitude.
        let noisy = Tensor::new(
            x.shape().to_vec(),
            x.data()
                .iter()
                .enumerate()
                .map(|(i, v)| v + if i % 2 == 0 { 0.02 } else { -0.02 })
                .collect(),
        )
        .unwrap();
        let s_bias = ssim(&x, &biased, 1.0).unwrap();
        let s_noise = ssim(&x, &noisy, 1.0).unwrap();
        assert!(s_bias < 1.0 && s_noise < 1.0);
        assert!(s_noise < s_bias, "noise ({}) should hurt more than bias ({})", s_noise, s_bias);
    }

    #[test]
    fn ssim_is_symmetric() {
        let x = rand_tensor(vec![2, 16, 20], 3);
        let y = rand_tensor(vec![2, 16, 20], 4);
        let a = ssim(&x, &y, 1.0).unwrap();
        let b = ssim(&y, &x, 1.0).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn ssim_rejects_undersized_plane() {
        let x = rand_tensor(vec![1, 8, 8], 1);
        assert!(ssim(&x, &x, 1.0).is_err());
        // but a fitted window works
        let win = Window::fitted(8, 8).unwrap();
        assert_eq!(win.size, 7);
        assert!((win.sigma - 1.5 * 7.0 / 11.0).abs() < 1e-12);
        assert!(ssim_with_window(&x, &x, 1.0, win).is_ok());
    }

    #[test]
    fn fitted_window_caps_at_eleven() {
        assert_eq!(Window::fitted(64, 128).unwrap(), Window::fixed());
        assert_eq!(Window::fitted(11, 11).unwrap().size, 11);
        assert_eq!(Window::fitted(2, 100).unwrap().size, 1);
    }

    #[test]
    fn graph_ssim_matches_reference() {
        let x = rand_tensor(vec![3, 14, 18], 21);
        let y = rand_tensor(vec![3, 14, 18], 22);
        let reference = ssim(&x, &y, 1.0).unwrap();
        let mut g = Graph::<f32>::new();
        let xn = g.constant(x);
        let yn = g.constant(y);
        let s = ssim_graph(&mut g, xn, yn, 1.0, Window::fixed()).unwrap();
        let got = g.value(s).data()[0] as f64;
        assert!(
            (got - reference).abs() < 1e-4,
            "graph {} vs reference {}",
            got,
            reference
        );
    }

    #[test]
    fn graph_ssim_matches_reference_in_f64() {
        let x = rand_tensor(vec![2, 12, 12], 31).cast::<f64>();
        let y = rand_tensor(vec![2, 12, 12], 32).cast::<f64>();
        let reference = ssim(&x, &y, 1.0).unwrap();
        let mut g = Graph::<f64>::new();
        let xn = g.constant(x);
        let yn = g.constant(y);
        let s = ssim_graph(&mut g, xn, yn, 1.0, Window::fixed()).unwrap();
        assert!((g.value(s).data()[0] - reference).abs() < 1e-12);
    }

    #[test]
    fn l1_graph_matches_reference() {
        let x = rand_tensor(vec![2, 6, 6], 41);
        let y = rand_tensor(vec![2, 6, 6], 42);
        let reference = l1(&x, &y).unwrap();
        let mut g = Graph::<f32>::new();
        let xn = g.constant(x);
        let yn = g.constant(y);
        let n = l1_graph(&mut g, xn, yn).unwrap();
        assert!((g.value(n).data()[0] as f64 - reference).abs() < 1e-6);
    }

    #[test]
    fn frame_loss_blends_l1_and_dssim() {
        let x = rand_tensor(vec![1, 16, 16], 51);
        let y = rand_tensor(vec![1, 16, 16], 52);
        let l1_ref = l1(&x, &y).unwrap();
        let ssim_ref = ssim(&x, &y, 1.0).unwrap();

        let mut g = Graph::<f32>::new();
        let xn = g.constant(x);
        let yn = g.constant(y);
        let pure_l1 = frame_loss_graph(&mut g, xn, yn, 1.0, 1.0, Window::fixed()).unwrap();
        assert!((g.value(pure_l1).data()[0] as f64 - l1_ref).abs() < 1e-5);
        let pure_dssim = frame_loss_graph(&mut g, xn, yn, 1.0, 0.0, Window::fixed()).unwrap();
        assert!((g.value(pure_dssim).data()[0] as f64 - (1.0 - ssim_ref)).abs() < 1e-4);
        let blended = frame_loss_graph(&mut g, xn, yn, 1.0, DEFAULT_ALPHA, Window::fixed()).unwrap();
        let expect = DEFAULT_ALPHA * l1_ref + (1.0 - DEFAULT_ALPHA) * (1.0 - ssim_ref);
        assert!((g.value(blended).data()[0] as f64 - expect).abs() < 1e-4);
    }

    #[test]
    fn total_loss_is_zero_for_perfect_prediction() {
        let frame = rand_tensor(vec![3, 24, 32], 61);
        let stack = crate::wavelet::dwt2_haar(&frame).unwrap().stack();
        let mut g = Graph::<f32>::new();
        let ps = g.constant(stack.clone());
        let ts = g.constant(stack);
        let pf = g.haar_synthesis(ps).unwrap();
        let tf = g.constant(frame);
        let (loss, terms) = total_loss_graph(&mut g, ps, ts, pf, tf, DEFAULT_ALPHA).unwrap();
        let v = g.value(loss).data()[0];
        assert!(v.abs() < 1e-5, "perfect prediction loss = {}", v);
        assert!(terms.frame.abs() < 1e-5);
        assert!(terms.band_mean().abs() < 1e-5);
    }

    #[test]
    fn total_loss_terms_add_up() {
        let target = rand_tensor(vec![3, 16, 16], 71);
        let pred = rand_tensor(vec![3, 16, 16], 72);
        let tstack = crate::wavelet::dwt2_haar(&target).unwrap().stack();
        let pstack = crate::wavelet::dwt2_haar(&pred).unwrap().stack();
        let mut g = Graph::<f32>::new();
        let ps = g.constant(pstack);
        let ts = g.constant(tstack);
        let pf = g.haar_synthesis(ps).unwrap();
        let tf = g.constant(target);
        let (loss, terms) = total_loss_graph(&mut g, ps, ts, pf, tf, DEFAULT_ALPHA).unwrap();
        let v = g.value(loss).data()[0] as f64;
        assert!((terms.total - v).abs() < 1e-7);
        assert!((terms.frame + terms.band_mean() - terms.total).abs() < 1e-5);
        assert!(terms.total > 0.0);
    }
}
