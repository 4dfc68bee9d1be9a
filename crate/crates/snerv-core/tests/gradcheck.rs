//! Finite-difference verification of every differentiable op.
//!
//! Each analytic gradient is compared against a central-difference
//! estimate computed in f64 from two independent forward evaluations.
//! Convolution forwards are additionally checked against a brute-force
//! direct implementation, and conv / transposed-conv are tied together
//! by the adjoint identity `<A x, y> = <x, A^T y>`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snerv_core::autodiff::{Graph, NodeId};
use snerv_core::objectives::{self, Window};
use snerv_core::tensor::Tensor;

fn rand_tensor(shape: Vec<usize>, seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Compare analytic gradients of `build`'s scalar output against
/// central differences for every element of every leaf.
fn fd_check<F>(leaves: &[Tensor<f64>], tol: f64, label: &str, build: F)
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> NodeId,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = leaves.iter().map(|t| g.param(t.clone())).collect();
    let root = build(&mut g, &ids);
    assert_eq!(g.value(root).numel(), 1, "{}: root must be scalar", label);
    g.backward(root).unwrap();
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| {
            g.grad(id)
                .map(|s| s.to_vec())
                .unwrap_or_else(|| vec![0.0; g.value(id).numel()])
        })
        .collect();

    let eval = |ls: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = ls.iter().map(|t| g.constant(t.clone())).collect();
        let root = build(&mut g, &ids);
        g.value(root).data()[0]
    };

    let eps = 1e-5;
    let mut worst = 0.0f64;
    for li in 0..leaves.len() {
        for j in 0..leaves[li].numel() {
            let mut probe = leaves.to_vec();
            probe[li].data_mut()[j] += eps;
            let f_plus = eval(&probe);
            probe[li].data_mut()[j] -= 2.0 * eps;
            let f_minus = eval(&probe);
            let fd = (f_plus - f_minus) / (2.0 * eps);
            let an = analytic[li][j];
            let err = (fd - an).abs() / (1.0 + fd.abs().max(an.abs()));
            worst = worst.max(err);
            assert!(
                err <= tol,
                "{}: leaf {} elem {}: analytic {} vs fd {} (rel err {:.3e} > {:.1e})",
                label,
                li,
                j,
                an,
                fd,
                err,
                tol
            );
        }
    }
    let _ = worst;
}

#[test]
fn gradcheck_conv2d_stride1_padded() {
    let x = rand_tensor(vec![2, 5, 6], 1, -1.0, 1.0);
    let w = rand_tensor(vec![3, 2, 3, 3], 2, -0.5, 0.5);
    let b = rand_tensor(vec![3], 3, -0.5, 0.5);
    fd_check(&[x, w, b], 1e-7, "conv2d s1 p1", |g, ids| {
        let y = g.conv2d(ids[0], ids[1], Some(ids[2]), 1, 1).unwrap();
        g.mean_all(y).unwrap()
    });
}

#[test]
fn gradcheck_conv2d_strided() {
    let x = rand_tensor(vec![2, 7, 7], 4, -1.0, 1.0);
    let w = rand_tensor(vec![2, 2, 3, 3], 5, -0.5, 0.5);
    fd_check(&[x, w], 1e-7, "conv2d s2 p1", |g, ids| {
        let y = g.conv2d(ids[0], ids[1], None, 2, 1).unwrap();
        g.mean_all(y).unwrap()
    });
    let x = rand_tensor(vec![1, 9, 9], 6, -1.0, 1.0);
    let w = rand_tensor(vec![2, 1, 3, 3], 7, -0.5, 0.5);
    fd_check(&[x, w], 1e-7, "conv2d s3 p0", |g, ids| {
        let y = g.conv2d(ids[0], ids[1], None, 3, 0).unwrap();
        g.mean_all(y).unwrap()
    });
}

#[test]
fn gradcheck_conv2d_rectangular_kernel() {
    let x = rand_tensor(vec![1, 8, 6], 8, -1.0, 1.0);
    let w = rand_tensor(vec![2, 1, 5, 1], 9, -0.5, 0.5);
    fd_check(&[x, w], 1e-7, "conv2d 5x1", |g, ids| {
        let y = g.conv2d(ids[0], ids[1], None, 1, 0).unwrap();
        g.mean_all(y).unwrap()
    });
}

#[test]
fn gradcheck_conv_transpose2d() {
    // Kernel = stride, zero padding: the model's upsampling flavor.
    let x = rand_tensor(vec![2, 3, 4], 10, -1.0, 1.0);
    let w = rand_tensor(vec![2, 3, 2, 2], 11, -0.5, 0.5);
    let b = rand_tensor(vec![3], 12, -0.5, 0.5);
    fd_check(&[x, w, b], 1e-7, "convT s2 k2", |g, ids| {
        let y = g.conv_transpose2d(ids[0], ids[1], Some(ids[2]), 2, 0).unwrap();
        g.mean_all(y).unwrap()
    });
    let x = rand_tensor(vec![1, 4, 4], 13, -1.0, 1.0);
    let w = rand_tensor(vec![1, 2, 3, 3], 14, -0.5, 0.5);
    fd_check(&[x, w], 1e-7, "convT s1 k3 p1", |g, ids| {
        let y = g.conv_transpose2d(ids[0], ids[1], None, 1, 1).unwrap();
        g.mean_all(y).unwrap()
    });
    let x = rand_tensor(vec![1, 3, 3], 15, -1.0, 1.0);
    let w = rand_tensor(vec![1, 1, 3, 3], 16, -0.5, 0.5);
    fd_check(&[x, w], 1e-7, "convT s3 k3", |g, ids| {
        let y = g.conv_transpose2d(ids[0], ids[1], None, 3, 0).unwrap();
        g.mean_all(y).unwrap()
    });
}

#[test]
fn gradcheck_pixel_shuffle() {
    let x = rand_tensor(vec![8, 3, 4], 17, -1.0, 1.0);
    fd_check(&[x], 1e-8, "pixel_shuffle f2", |g, ids| {
        let y = g.pixel_shuffle(ids[0], 2).unwrap();
        // Weight the mean with a second op so the permutation matters.
        let z = g.mul(y, y).unwrap();
        g.mean_all(z).unwrap()
    });
}

#[test]
fn gradcheck_leaky_relu_and_abs() {
    // Values bounded away from the kink at zero.
    let base = rand_tensor(vec![2, 4, 4], 18, 0.2, 1.0);
    let mut signed = base.clone();
    for (i, v) in signed.data_mut().iter_mut().enumerate() {
        if i % 3 == 0 {
            *v = -*v;
        }
    }
    fd_check(&[signed.clone()], 1e-8, "leaky_relu", |g, ids| {
        let y = g.leaky_relu(ids[0], 0.1);
        let z = g.mul(y, y).unwrap();
        g.mean_all(z).unwrap()
    });
    fd_check(&[signed], 1e-8, "abs", |g, ids| {
        let y = g.abs(ids[0]);
        let z = g.mul(y, y).unwrap();
        g.mean_all(z).unwrap()
    });
}

#[test]
fn gradcheck_concat_and_slice() {
    let a = rand_tensor(vec![2, 3, 3], 19, -1.0, 1.0);
    let b = rand_tensor(vec![1, 3, 3], 20, -1.0, 1.0);
    fd_check(&[a, b], 1e-8, "concat+slice", |g, ids| {
        let cat = g.concat_channels(&[ids[0], ids[1]]).unwrap();
        let mid = g.slice_channels(cat, 1, 2).unwrap();
        let z = g.mul(mid, mid).unwrap();
        g.mean_all(z).unwrap()
    });
}

#[test]
fn gradcheck_elementwise_arithmetic() {
    let a = rand_tensor(vec![3, 3], 21, 0.5, 1.5);
    let b = rand_tensor(vec![3, 3], 22, 0.5, 1.5);
    fd_check(&[a, b], 1e-7, "(a-b)*(a+b)/b + 2a", |g, ids| {
        let (a, b) = (ids[0], ids[1]);
        let diff = g.sub(a, b).unwrap();
        let sum = g.add(a, b).unwrap();
        let prod = g.mul(diff, sum).unwrap();
        let quot = g.div(prod, b).unwrap();
        let scaled = g.scale(a, 2.0);
        let shifted = g.add_scalar(scaled, 0.3);
        let all = g.add(quot, shifted).unwrap();
        g.mean_all(all).unwrap()
    });
}

#[test]
fn gradcheck_haar_round_trip() {
    let x = rand_tensor(vec![2, 4, 6], 23, -1.0, 1.0);
    fd_check(&[x], 1e-8, "haar analysis", |g, ids| {
        let bands = g.haar_analysis(ids[0]).unwrap();
        let sq = g.mul(bands, bands).unwrap();
        g.mean_all(sq).unwrap()
    });
    let bands = rand_tensor(vec![8, 2, 3], 24, -1.0, 1.0);
    fd_check(&[bands], 1e-8, "haar synthesis", |g, ids| {
        let frame = g.haar_synthesis(ids[0]).unwrap();
        let sq = g.mul(frame, frame).unwrap();
        g.mean_all(sq).unwrap()
    });
}

#[test]
fn gradcheck_ssim_and_frame_loss() {
    let x = rand_tensor(vec![1, 12, 12], 25, 0.1, 0.9);
    let y = rand_tensor(vec![1, 12, 12], 26, 0.1, 0.9);
    fd_check(&[x.clone(), y.clone()], 1e-6, "ssim", |g, ids| {
        objectives::ssim_graph(g, ids[0], ids[1], 1.0, Window::fixed()).unwrap()
    });
    fd_check(&[x, y], 1e-6, "frame_loss", |g, ids| {
        objectives::frame_loss_graph(g, ids[0], ids[1], 1.0, 0.7, Window::fixed()).unwrap()
    });
}

#[test]
fn gradcheck_total_loss_through_synthesis() {
    // Predicted subband stack feeds both the band terms and, through
    // Haar synthesis, the frame term — the full composite objective.
    let pred_stack = rand_tensor(vec![4, 6, 6], 27, -0.4, 0.4);
    let target = rand_tensor(vec![1, 12, 12], 28, 0.1, 0.9);
    let target_stack = {
        let sb = snerv_core::wavelet::dwt2_haar(&target).unwrap();
        sb.stack()
    };
    fd_check(&[pred_stack], 1e-6, "total_loss", |g, ids| {
        let ts = g.constant(target_stack.clone());
        let tf = g.constant(target.clone());
        let pf = g.haar_synthesis(ids[0]).unwrap();
        let (loss, _) = objectives::total_loss_graph(g, ids[0], ts, pf, tf, 0.7).unwrap();
        loss
    });
}

// ── brute-force forward oracles ─────────────────────────────────────────

/// Direct O(everything) convolution, written independently of the
/// library kernel (different loop structure, signed index math).
#[allow(clippy::too_many_arguments)]
fn conv2d_brute(
    x: &[f64],
    (ci, h, w): (usize, usize, usize),
    wgt: &[f64],
    (co, kh, kw): (usize, usize, usize),
    bias: Option<&[f64]>,
    s: usize,
    p: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * p - kh) / s + 1;
    let ow = (w + 2 * p - kw) / s + 1;
    let mut out = vec![0.0; co * oh * ow];
    for o in 0..co {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias.map_or(0.0, |b| b[o]);
                for i in 0..ci {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * s + ky) as isize - p as isize;
                            let ix = (ox * s + kx) as isize - p as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            acc += x[i * h * w + iy as usize * w + ix as usize]
                                * wgt[((o * ci + i) * kh + ky) * kw + kx];
                        }
                    }
                }
                out[o * oh * ow + oy * ow + ox] = acc;
            }
        }
    }
    (out, oh, ow)
}

#[test]
fn conv2d_forward_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for trial in 0..40 {
        let ci = rng.random_range(1..4usize);
        let co = rng.random_range(1..4usize);
        let kh = rng.random_range(1..4usize);
        let kw = rng.random_range(1..4usize);
        let s = rng.random_range(1..4usize);
        let p = rng.random_range(0..3usize);
        let h = rng.random_range(kh.max(2 * p + 1).max(3)..9usize + kh);
        let w = rng.random_range(kw.max(2 * p + 1).max(3)..9usize + kw);
        if h + 2 * p < kh || w + 2 * p < kw {
            continue;
        }
        let x = rand_tensor(vec![ci, h, w], 1000 + trial, -1.0, 1.0);
        let wt = rand_tensor(vec![co, ci, kh, kw], 2000 + trial, -1.0, 1.0);
        let b = rand_tensor(vec![co], 3000 + trial, -1.0, 1.0);
        let (want, oh, ow) = conv2d_brute(
            x.data(),
            (ci, h, w),
            wt.data(),
            (co, kh, kw),
            Some(b.data()),
            s,
            p,
        );
        let mut g = Graph::<f64>::new();
        let xn = g.constant(x);
        let wn = g.constant(wt);
        let bn = g.constant(b);
        let y = g.conv2d(xn, wn, Some(bn), s, p).unwrap();
        assert_eq!(g.value(y).shape(), &[co, oh, ow], "shape trial {}", trial);
        for (got, want) in g.value(y).data().iter().zip(&want) {
            assert!(
                (got - want).abs() < 1e-12,
                "trial {} ci={} co={} k={}x{} s={} p={} h={} w={}",
                trial, ci, co, kh, kw, s, p, h, w
            );
        }
    }
}

#[test]
fn conv_transpose_is_adjoint_of_conv() {
    // <conv(x), y> == <x, convT(y)> with the shared weight tensor.
    // Ties the scatter kernel to the gather kernel exactly.
    let mut rng = ChaCha8Rng::seed_from_u64(777);
    for trial in 0..30 {
        let ci = rng.random_range(1..3usize);
        let co = rng.random_range(1..3usize);
        let k = rng.random_range(1..4usize);
        let s = rng.random_range(1..4usize);
        let p = rng.random_range(0..k.min(2) + 1);
        let mut h = rng.random_range((k + 2).max(2 * p + 2)..12usize);
        let mut w = rng.random_range((k + 2).max(2 * p + 2)..12usize);
        // The identity needs the conv to tile the input exactly
        // (otherwise floor division discards trailing rows/columns and
        // the transposed op maps back to a smaller plane).
        h -= (h + 2 * p - k) % s;
        w -= (w + 2 * p - k) % s;
        if h + 2 * p < k.max(2 * p + 1) || w + 2 * p < k.max(2 * p + 1) {
            continue;
        }
        let x = rand_tensor(vec![ci, h, w], 5000 + trial, -1.0, 1.0);
        let wt = rand_tensor(vec![co, ci, k, k], 6000 + trial, -1.0, 1.0);
        let mut g = Graph::<f64>::new();
        let xn = g.constant(x.clone());
        let wn = g.constant(wt.clone());
        let yn = g.conv2d(xn, wn, None, s, p).unwrap();
        let y_shape = g.value(yn).shape().to_vec();
        let y_rand = rand_tensor(y_shape, 7000 + trial, -1.0, 1.0);

        let lhs: f64 = g
            .value(yn)
            .data()
            .iter()
            .zip(y_rand.data())
            .map(|(a, b)| a * b)
            .sum();

        // The conv weight `[co, ci, k, k]` is byte-identical to the
        // transposed-conv weight `[in=co, out=ci, k, k]`: the layouts
        // are defined complementarily, so the adjoint reuses the tensor.
        let yr = g.constant(y_rand);
        let wsn = g.constant(Tensor::new(vec![co, ci, k, k], wt.data().to_vec()).unwrap());
        let xt = g.conv_transpose2d(yr, wsn, None, s, p).unwrap();
        assert_eq!(g.value(xt).shape(), x.shape(), "adjoint shape trial {}", trial);
        let rhs: f64 = g
            .value(xt)
            .data()
            .iter()
            .zip(x.data())
            .map(|(a, b)| a * b)
            .sum();
        assert!(
            (lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()),
            "trial {}: <Ax,y>={} <x,Aty>={} (k={} s={} p={})",
            trial, lhs, rhs, k, s, p
        );
    }
}

#[test]
fn f32_and_f64_graphs_agree_on_conv() {
    // The same computation instantiated at both precisions should agree
    // to f32 roundoff; guards the Scalar abstraction.
    let x64 = rand_tensor(vec![2, 6, 6], 42, -1.0, 1.0);
    let w64 = rand_tensor(vec![3, 2, 3, 3], 43, -0.5, 0.5);
    let x32 = x64.cast::<f32>();
    let w32 = w64.cast::<f32>();

    let mut g64 = Graph::<f64>::new();
    let (a, b) = (g64.constant(x64), g64.constant(w64));
    let y64 = g64.conv2d(a, b, None, 1, 1).unwrap();

    let mut g32 = Graph::<f32>::new();
    let (a, b) = (g32.constant(x32), g32.constant(w32));
    let y32 = g32.conv2d(a, b, None, 1, 1).unwrap();

    for (v64, v32) in g64.value(y64).data().iter().zip(g32.value(y32).data()) {
        assert!((v64 - *v32 as f64).abs() < 1e-5);
    }
}
