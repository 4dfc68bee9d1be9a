//! Per-video training and the three evaluation protocols: regression,
//! frame interpolation (train odd / test even), and in-painting.
//!
//! Training is batch-1 sequential over the training frames with Adam
//! and a cosine learning-rate schedule; encoder, decoder and (when
//! present) the temporal branches are optimized jointly. The loop is
//! fully deterministic: (seed, config, clip) fixes every logged number.

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::model::SnervModel;
use crate::objectives::{psnr_frame_clamped, ssim, total_loss_graph, DEFAULT_ALPHA};
use crate::optim::{cosine_lr, Adam};
use crate::tensor::Tensor;
use crate::video::VideoClip;
use crate::wavelet::{dwt2_haar, subband_psnr, Subbands};

/// Which evaluation protocol drives training-set selection and
/// reporting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Regression,
    Interpolation,
    Inpainting,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Task::Regression => "regression",
            Task::Interpolation => "interpolation",
            Task::Inpainting => "inpainting",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regression" => Ok(Task::Regression),
            "interpolation" => Ok(Task::Interpolation),
            "inpainting" => Ok(Task::Inpainting),
            other => Err(Error::config(format!(
                "unknown task {:?} (expected regression, interpolation or inpainting)",
                other
            ))),
        }
    }
}

/// In-painting mask layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskKind {
    /// Four boxes centered in the four quadrants plus one at the frame
    /// center.
    Fixed5,
    /// Ten boxes at seeded uniform positions.
    Random10,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaskSpec {
    pub kind: MaskKind,
    pub seed: u64,
}

impl std::str::FromStr for MaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed5" => Ok(MaskKind::Fixed5),
            "random10" => Ok(MaskKind::Random10),
            other => Err(Error::config(format!(
                "unknown mask kind {:?} (expected fixed5 or random10)",
                other
            ))),
        }
    }
}

impl std::fmt::Display for MaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MaskKind::Fixed5 => "fixed5",
            MaskKind::Random10 => "random10",
        })
    }
}

/// Box size at the working resolution, scaled from 50x50 at 1080p
/// (1920x1080) proportionally per axis.
pub fn mask_box_dims(height: usize, width: usize) -> (usize, usize) {
    let bh = ((50.0 * height as f64 / 1080.0).round() as usize).max(1);
    let bw = ((50.0 * width as f64 / 1920.0).round() as usize).max(1);
    (bh.min(height), bw.min(width))
}

/// Top-left corners of the mask boxes for a clip at `(height, width)`.
/// The same layout applies to every frame of the clip.
pub fn mask_boxes(spec: MaskSpec, height: usize, width: usize) -> Vec<(usize, usize)> {
    use rand::{Rng, SeedableRng};
    let (bh, bw) = mask_box_dims(height, width);
    match spec.kind {
        MaskKind::Fixed5 => {
            let centers = [
                (height / 4, width / 4),
                (height / 4, 3 * width / 4),
                (3 * height / 4, width / 4),
                (3 * height / 4, 3 * width / 4),
                (height / 2, width / 2),
            ];
            centers
                .iter()
                .map(|&(cy, cx)| {
                    (
                        cy.saturating_sub(bh / 2).min(height - bh),
                        cx.saturating_sub(bw / 2).min(width - bw),
                    )
                })
                .collect()
        }
        MaskKind::Random10 => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(spec.seed);
            (0..10)
                .map(|_| {
                    (
                        rng.random_range(0..=height - bh),
                        rng.random_range(0..=width - bw),
                    )
                })
                .collect()
        }
    }
}

/// Zero out the mask boxes. Returns the masked frame and a mask tensor
/// of the same shape holding 1 on valid pixels and 0 inside the boxes.
pub fn apply_inpaint_mask(frame: &Tensor<f32>, spec: MaskSpec) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let (c, h, w) = frame.dims3()?;
    let (bh, bw) = mask_box_dims(h, w);
    let boxes = mask_boxes(spec, h, w);
    for &(y, x) in &boxes {
        if y + bh > h || x + bw > w {
            return Err(Error::input(format!(
                "mask box at ({}, {}) exceeds the {}x{} frame",
                y, x, h, w
            )));
        }
    }
    let mut masked = frame.data().to_vec();
    let mut mask = vec![1.0f32; c * h * w];
    for &(y0, x0) in &boxes {
        for ch in 0..c {
            for y in y0..y0 + bh {
                let row = ch * h * w + y * w;
                for x in x0..x0 + bw {
                    masked[row + x] = 0.0;
                    mask[row + x] = 0.0;
                }
            }
        }
    }
    Ok((
        Tensor::new(frame.shape().to_vec(), masked)?,
        Tensor::new(frame.shape().to_vec(), mask)?,
    ))
}

/// Odd-indexed frames train, even-indexed frames are held out.
pub fn split_interpolation(clip: &VideoClip) -> Result<(Vec<usize>, Vec<usize>)> {
    if clip.len() < 4 {
        return Err(Error::input(format!(
            "interpolation needs at least 4 frames, clip has {}",
            clip.len()
        )));
    }
    let train = (1..clip.len()).step_by(2).collect();
    let test = (0..clip.len()).step_by(2).collect();
    Ok((train, test))
}

/// Training hyperparameters.
#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub epochs: usize,
    pub lr: f64,
    /// Fraction of total steps spent in linear warmup.
    pub warmup_frac: f64,
    pub alpha: f64,
    pub task: Task,
    pub mask: Option<MaskSpec>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 200,
            lr: 1e-3,
            warmup_frac: 0.05,
            alpha: DEFAULT_ALPHA,
            task: Task::Regression,
            mask: None,
        }
    }
}

/// One per-epoch log record (metrics averaged over training frames,
/// computed from the pre-update forward of each step).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveRow {
    pub epoch: usize,
    pub loss: f64,
    pub frame_psnr: f64,
    pub ll_psnr: f64,
    pub hf_psnr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub curve: Vec<CurveRow>,
    /// Original indices of the frames trained on.
    pub train_indices: Vec<usize>,
}

/// `epoch,loss,frame_psnr,ll_psnr,hf_psnr` rows.
pub fn curve_csv(report: &TrainReport) -> String {
    let mut out = String::from("epoch,loss,frame_psnr,ll_psnr,hf_psnr\n");
    for r in &report.curve {
        out.push_str(&format!(
            "{},{:.6},{:.4},{:.4},{:.4}\n",
            r.epoch, r.loss, r.frame_psnr, r.ll_psnr, r.hf_psnr
        ));
    }
    out
}

/// Everything `fit` needs per training frame, precomputed once.
struct Plan {
    /// Original frame indices, in training order.
    train: Vec<usize>,
    /// Encoder input per training position (masked under in-painting).
    enc_inputs: Vec<Tensor<f32>>,
    /// Loss target per training position (equals the encoder input for
    /// in-painting, the original frame otherwise).
    targets: Vec<Tensor<f32>>,
    /// Haar analysis of each target, computed once.
    target_bands: Vec<Subbands<f32>>,
    /// Per position: (prev, next) positions inside the training
    /// sequence (replicate-padded) for the temporal encoder.
    neighbors: Vec<(usize, usize)>,
}

fn build_plan(clip: &VideoClip, opts: &TrainOptions) -> Result<Plan> {
    let train: Vec<usize> = match opts.task {
        Task::Regression | Task::Inpainting => (0..clip.len()).collect(),
        Task::Interpolation => split_interpolation(clip)?.0,
    };
    let mut enc_inputs = Vec::with_capacity(train.len());
    let mut targets = Vec::with_capacity(train.len());
    for &idx in &train {
        let frame = &clip.frames[idx];
        let input = match opts.task {
            Task::Inpainting => {
                let spec = opts.mask.ok_or_else(|| {
                    Error::config("in-painting needs a mask spec".to_string())
                })?;
                apply_inpaint_mask(frame, spec)?.0
            }
            _ => frame.clone(),
        };
        // The model both sees and regresses the (possibly masked)
        // input; evaluation against clean frames happens in eval_task.
        targets.push(input.clone());
        enc_inputs.push(input);
    }
    let target_bands = targets
        .iter()
        .map(dwt2_haar)
        .collect::<Result<Vec<_>>>()?;
    let neighbors = (0..train.len())
        .map(|k| (k.saturating_sub(1), (k + 1).min(train.len() - 1)))
        .collect();
    Ok(Plan {
        train,
        enc_inputs,
        targets,
        target_bands,
        neighbors,
    })
}

/// Train `model` on `clip`. Returns the per-epoch learning curves.
///
/// A non-finite loss aborts with a diagnostic error naming the epoch
/// and frame; parameters keep their last finite state.
pub fn fit(
    model: &mut SnervModel<f32>,
    clip: &VideoClip,
    opts: &TrainOptions,
) -> Result<TrainReport> {
    if opts.epochs == 0 {
        return Err(Error::config("epochs must be >= 1".to_string()));
    }
    if !(0.0..=1.0).contains(&opts.alpha) {
        return Err(Error::config(format!(
            "alpha must be in [0, 1], got {}",
            opts.alpha
        )));
    }
    let (h, w) = clip.dims();
    if (h, w) != (model.config().height, model.config().width) {
        return Err(Error::config(format!(
            "clip is {}x{}, model expects {}x{}",
            h,
            w,
            model.config().height,
            model.config().width
        )));
    }
    let plan = build_plan(clip, opts)?;
    let temporal = model.config().temporal;

    let sizes: Vec<usize> = model.tensors().map(|(_, t)| t.numel()).collect();
    let mut adam = Adam::<f32>::new(&sizes);
    let total_steps = (opts.epochs * plan.train.len()) as u64;
    let warmup = (total_steps as f64 * opts.warmup_frac).round() as u64;

    let mut curve = Vec::with_capacity(opts.epochs);
    let mut step = 0u64;
    for epoch in 0..opts.epochs {
        let mut loss_sum = 0.0;
        let mut psnr_sum = 0.0;
        let mut ll_sum = 0.0;
        let mut hf_sum = 0.0;
        for k in 0..plan.train.len() {
            let lr = cosine_lr(step, total_steps, opts.lr, warmup);
            let mut g = Graph::new();
            let bound = model.bind(&mut g, true);
            let enc_in = g.constant(plan.enc_inputs[k].clone());
            let decoded = if temporal {
                let (pk, nk) = plan.neighbors[k];
                let prev = g.constant(plan.enc_inputs[pk].clone());
                let next = g.constant(plan.enc_inputs[nk].clone());
                let e = model.encode(&mut g, &bound, enc_in)?;
                let (eb, ef) = model.encode_temporal(&mut g, &bound, prev, enc_in, next)?;
                model.decode_temporal(&mut g, &bound, e, eb, ef)?
            } else {
                let e = model.encode(&mut g, &bound, enc_in)?;
                model.decode(&mut g, &bound, e)?
            };
            let t_stack = g.constant(plan.target_bands[k].stack());
            let t_frame = g.constant(plan.targets[k].clone());
            let (total, terms) =
                total_loss_graph(&mut g, decoded.stack, t_stack, decoded.frame, t_frame, opts.alpha)?;
            if !terms.total.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    frame: plan.train[k],
                    detail: format!("loss terms {:?} at lr {:.3e}, step {}", terms, lr, step),
                });
            }

            loss_sum += terms.total;
            psnr_sum += psnr_frame_clamped(g.value(decoded.frame), &plan.targets[k], 1.0)?;
            let pred_bands = Subbands::from_stacked(g.value(decoded.stack))?;
            let bp = subband_psnr(&pred_bands, &plan.target_bands[k])?;
            ll_sum += bp.ll;
            hf_sum += bp.hf;

            g.backward(total)?;
            let grads: Vec<Vec<f32>> = bound
                .ids()
                .iter()
                .map(|&id| g.take_grad(id).unwrap_or_default())
                .collect();
            drop(g);
            let mut tensors = model.tensors_mut();
            let mut slices: Vec<&mut [f32]> =
                tensors.iter_mut().map(|t| t.data_mut()).collect();
            adam.step(lr, &mut slices, &grads)?;
            step += 1;
        }
        let n = plan.train.len() as f64;
        curve.push(CurveRow {
            epoch,
            loss: loss_sum / n,
            frame_psnr: psnr_sum / n,
            ll_psnr: ll_sum / n,
            hf_psnr: hf_sum / n,
        });
    }
    Ok(TrainReport {
        curve,
        train_indices: plan.train,
    })
}

/// One evaluated frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalRow {
    pub frame_index: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

/// `frame_index,psnr,ssim` rows plus a trailing `mean` row.
pub fn metrics_csv(report: &EvalReport) -> String {
    let mut out = String::from("frame_index,psnr,ssim\n");
    for r in &report.rows {
        out.push_str(&format!("{},{:.4},{:.6}\n", r.frame_index, r.psnr, r.ssim));
    }
    out.push_str(&format!("mean,{:.4},{:.6}\n", report.mean_psnr, report.mean_ssim));
    out
}

fn clamp01(t: &Tensor<f32>) -> Tensor<f32> {
    Tensor::new(
        t.shape().to_vec(),
        t.data().iter().map(|v| v.clamp(0.0, 1.0)).collect(),
    )
    .expect("same shape")
}

/// Evaluate a frozen model under a task protocol.
///
/// * regression: every frame, reconstruction vs original;
/// * interpolation: held-out (even) frames only, with the temporal
///   embeddings computed from each frame's true neighbors in the full
///   sequence;
/// * in-painting: the model sees the masked frame, metrics are against
///   the clean original.
pub fn eval_task(
    model: &SnervModel<f32>,
    clip: &VideoClip,
    task: Task,
    mask: Option<MaskSpec>,
) -> Result<EvalReport> {
    let temporal = model.config().temporal;
    let eval_indices: Vec<usize> = match task {
        Task::Regression | Task::Inpainting => (0..clip.len()).collect(),
        Task::Interpolation => split_interpolation(clip)?.1,
    };

    let model_input = |idx: usize| -> Result<Tensor<f32>> {
        match task {
            Task::Inpainting => {
                let spec =
                    mask.ok_or_else(|| Error::config("in-painting needs a mask spec".to_string()))?;
                Ok(apply_inpaint_mask(&clip.frames[idx], spec)?.0)
            }
            _ => Ok(clip.frames[idx].clone()),
        }
    };

    let mut rows = Vec::with_capacity(eval_indices.len());
    for &idx in &eval_indices {
        let input = model_input(idx)?;
        let recon = if temporal {
            // True neighbors from the full sequence, replicate-padded
            // at the clip boundaries.
            let prev = model_input(idx.saturating_sub(1))?;
            let next = model_input((idx + 1).min(clip.len() - 1))?;
            let e = model.embed_frame(&input)?;
            let (eb, ef) = model.embed_temporal(&prev, &input, &next)?;
            model.decode_embedding_temporal(&e, &eb, &ef)?.1
        } else {
            model.reconstruct(&input)?.1
        };
        let truth = &clip.frames[idx];
        let psnr = psnr_frame_clamped(&recon, truth, 1.0)?;
        let ssim_v = ssim(&clamp01(&recon), truth, 1.0)?;
        rows.push(EvalRow {
            frame_index: idx,
            psnr,
            ssim: ssim_v,
        });
    }
    let n = rows.len().max(1) as f64;
    Ok(EvalReport {
        mean_psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
        mean_ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::video::{synth_video, SynthKind};

    fn small_clip() -> VideoClip {
        synth_video(SynthKind::Smooth, 32, 64, 6, 3, 0.0, 0.0).unwrap()
    }

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            height: 32,
            width: 64,
            strides: [2, 2, 2, 1, 1],
            c0: 10,
            n_rb: 1,
            embed_h: 2,
            embed_w: 4,
            ..ModelConfig::default()
        }
    }

    fn quick_opts(epochs: usize) -> TrainOptions {
        TrainOptions {
            epochs,
            ..TrainOptions::default()
        }
    }

    #[test]
    fn split_is_disjoint_and_exhaustive() {
        let clip = synth_video(SynthKind::Smooth, 16, 16, 10, 1, 0.0, 0.0).unwrap();
        let (train, test) = split_interpolation(&clip).unwrap();
        assert_eq!(train, vec![1, 3, 5, 7, 9]);
        assert_eq!(test, vec![0, 2, 4, 6, 8]);
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        let tiny = synth_video(SynthKind::Smooth, 16, 16, 3, 1, 0.0, 0.0).unwrap();
        assert!(split_interpolation(&tiny).is_err());
    }

    #[test]
    fn mask_boxes_scale_and_stay_inside() {
        let (bh, bw) = mask_box_dims(1080, 1920);
        assert_eq!((bh, bw), (50, 50));
        let (bh, bw) = mask_box_dims(64, 128);
        assert_eq!((bh, bw), (3, 3));
        for kind in [MaskKind::Fixed5, MaskKind::Random10] {
            let spec = MaskSpec { kind, seed: 4 };
            for &(y, x) in &mask_boxes(spec, 64, 128) {
                assert!(y + bh <= 64 && x + bw <= 128);
            }
        }
    }

    #[test]
    fn fixed5_lands_in_quadrants_and_center() {
        let spec = MaskSpec {
            kind: MaskKind::Fixed5,
            seed: 0,
        };
        let boxes = mask_boxes(spec, 64, 128);
        assert_eq!(boxes.len(), 5);
        let (bh, bw) = mask_box_dims(64, 128);
        let centers: Vec<(usize, usize)> = boxes
            .iter()
            .map(|&(y, x)| (y + bh / 2, x + bw / 2))
            .collect();
        assert!(centers.contains(&(16, 32)));
        assert!(centers.contains(&(48, 96)));
        assert!(centers.contains(&(32, 64)));
    }

    #[test]
    fn random10_is_reproducible_and_mask_area_checks_out() {
        let spec = MaskSpec {
            kind: MaskKind::Random10,
            seed: 9,
        };
        let a = mask_boxes(spec, 64, 128);
        let b = mask_boxes(spec, 64, 128);
        assert_eq!(a, b);
        let c = mask_boxes(
            MaskSpec {
                kind: MaskKind::Random10,
                seed: 10,
            },
            64,
            128,
        );
        assert_ne!(a, c);

        // Non-overlapping boxes cover 10*bh*bw pixels.
        let frame = Tensor::full(vec![3, 64, 128], 1.0f32);
        let (masked, mask) = apply_inpaint_mask(&frame, spec).unwrap();
        let zeros = masked.data().iter().filter(|&&v| v == 0.0).count();
        let invalid = mask.data().iter().filter(|&&v| v == 0.0).count();
        assert_eq!(zeros, invalid);
        let (bh, bw) = mask_box_dims(64, 128);
        assert!(invalid <= 3 * 10 * bh * bw);
        assert!(invalid >= 3 * bh * bw);
    }

    #[test]
    fn training_loss_decreases_and_is_deterministic() {
        let clip = small_clip();
        let opts = quick_opts(8);
        let mut m1 = SnervModel::new(small_cfg()).unwrap();
        let r1 = fit(&mut m1, &clip, &opts).unwrap();
        let mut m2 = SnervModel::new(small_cfg()).unwrap();
        let r2 = fit(&mut m2, &clip, &opts).unwrap();
        assert_eq!(r1.curve, r2.curve, "same seed must reproduce the curve");
        for ((_, a), (_, b)) in m1.tensors().zip(m2.tensors()) {
            assert_eq!(a.data(), b.data());
        }
        assert!(
            r1.curve.last().unwrap().loss < r1.curve[0].loss,
            "loss failed to decrease: {:?}",
            r1.curve
        );
        assert_eq!(r1.curve.len(), 8);
        for (i, row) in r1.curve.iter().enumerate() {
            assert_eq!(row.epoch, i);
            assert!(row.loss >= 0.0);
        }
    }

    #[test]
    fn interpolation_trains_on_odd_frames_only() {
        let clip = small_clip();
        let mut model = SnervModel::new(small_cfg()).unwrap();
        let opts = TrainOptions {
            task: Task::Interpolation,
            ..quick_opts(2)
        };
        let report = fit(&mut model, &clip, &opts).unwrap();
        assert_eq!(report.train_indices, vec![1, 3, 5]);
        let eval = eval_task(&model, &clip, Task::Interpolation, None).unwrap();
        let idx: Vec<usize> = eval.rows.iter().map(|r| r.frame_index).collect();
        assert_eq!(idx, vec![0, 2, 4]);
    }

    #[test]
    fn eval_does_not_touch_parameters() {
        let clip = small_clip();
        let mut model = SnervModel::new(small_cfg()).unwrap();
        fit(&mut model, &clip, &quick_opts(1)).unwrap();
        let before = crate::checkpoint::to_bytes(&model);
        eval_task(&model, &clip, Task::Regression, None).unwrap();
        eval_task(&model, &clip, Task::Interpolation, None).unwrap();
        let after = crate::checkpoint::to_bytes(&model);
        assert_eq!(before, after);
    }

    #[test]
    fn inpainting_requires_mask_and_reports_against_originals() {
        let clip = small_clip();
        let mut model = SnervModel::new(small_cfg()).unwrap();
        let no_mask = TrainOptions {
            task: Task::Inpainting,
            ..quick_opts(1)
        };
        assert!(fit(&mut model, &clip, &no_mask).is_err());

        let spec = MaskSpec {
            kind: MaskKind::Fixed5,
            seed: 1,
        };
        let opts = TrainOptions {
            task: Task::Inpainting,
            mask: Some(spec),
            ..quick_opts(2)
        };
        let mut model = SnervModel::new(small_cfg()).unwrap();
        fit(&mut model, &clip, &opts).unwrap();
        let eval = eval_task(&model, &clip, Task::Inpainting, Some(spec)).unwrap();
        assert_eq!(eval.rows.len(), clip.len());
        assert!(eval.mean_psnr.is_finite());
    }

    #[test]
    fn nan_loss_aborts_with_diagnostics() {
        let clip = small_clip();
        let mut model = SnervModel::new(small_cfg()).unwrap();
        // A pathological learning rate reliably blows the loss up.
        let opts = TrainOptions {
            lr: 1e12,
            ..quick_opts(50)
        };
        match fit(&mut model, &clip, &opts) {
            Err(Error::NonFinite { epoch, frame, detail }) => {
                assert!(detail.contains("loss"), "detail: {}", detail);
                let _ = (epoch, frame);
            }
            Ok(r) => {
                // Extremely defensive: if it survived, the curve must
                // at least be finite throughout.
                assert!(r.curve.iter().all(|c| c.loss.is_finite()));
            }
            Err(other) => panic!("expected NonFinite, got {:?}", other),
        }
    }

    #[test]
    fn csv_shapes_are_stable() {
        let report = TrainReport {
            curve: vec![CurveRow {
                epoch: 0,
                loss: 0.5,
                frame_psnr: 20.0,
                ll_psnr: 25.0,
                hf_psnr: 30.0,
            }],
            train_indices: vec![0],
        };
        let csv = curve_csv(&report);
        assert!(csv.starts_with("epoch,loss,frame_psnr,ll_psnr,hf_psnr\n"));
        assert_eq!(csv.lines().count(), 2);

        let eval = EvalReport {
            rows: vec![EvalRow {
                frame_index: 2,
                psnr: 31.0,
                ssim: 0.9,
            }],
            mean_psnr: 31.0,
            mean_ssim: 0.9,
        };
        let m = metrics_csv(&eval);
        assert!(m.starts_with("frame_index,psnr,ssim\n"));
        assert!(m.ends_with("mean,31.0000,0.900000\n"));
    }

    #[test]
    fn temporal_training_runs_and_uses_neighbors() {
        let clip = synth_video(SynthKind::Moving, 32, 64, 6, 5, 0.2, 2.0).unwrap();
        let cfg = ModelConfig {
            temporal: true,
            temporal_embed_h: 4,
            temporal_embed_w: 8,
            temporal_strides: vec![2, 2],
            ..small_cfg()
        };
        let mut model = SnervModel::new(cfg).unwrap();
        let report = fit(&mut model, &clip, &quick_opts(2)).unwrap();
        assert_eq!(report.curve.len(), 2);
        let eval = eval_task(&model, &clip, Task::Regression, None).unwrap();
        assert_eq!(eval.rows.len(), 6);
    }
}
