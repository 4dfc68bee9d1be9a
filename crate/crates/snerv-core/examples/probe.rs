//! Scratch probe for sizing experiment scales. Not part of the library.

use std::time::Instant;

use snerv_core::model::{ModelConfig, SnervModel};
use snerv_core::trainer::{eval_task, fit, Task, TrainOptions};
use snerv_core::video::{synth_video, SynthKind, VideoClip};

fn odd_clip(clip: &VideoClip) -> VideoClip {
    let frames: Vec<_> = clip
        .frames
        .iter()
        .enumerate()
        .filter(|(i, _)| i % 2 == 1)
        .map(|(_, f)| f.clone())
        .collect();
    VideoClip::new(frames, clip.fps, "odd".to_string()).unwrap()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let phase = args.get(1).map(String::as_str).unwrap_or("a");
    match phase {
        // Timing probe: desk-scale c0=32 smooth, few epochs, extrapolate.
        "a" => {
            let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(10);
            let clip = synth_video(SynthKind::Smooth, 64, 128, 12, 7, 0.0, 0.0).unwrap();
            let cfg = ModelConfig::default().with_derived_embedding().unwrap();
            let mut model = SnervModel::new(cfg).unwrap();
            let t0 = Instant::now();
            let report = fit(
                &mut model,
                &clip,
                &TrainOptions {
                    epochs,
                    ..TrainOptions::default()
                },
            )
            .unwrap();
            let dt = t0.elapsed().as_secs_f64();
            for row in &report.curve {
                println!(
                    "epoch {:3}  loss {:.6}  psnr {:.3}  ll {:.3}  hf {:.3}",
                    row.epoch, row.loss, row.frame_psnr, row.ll_psnr, row.hf_psnr
                );
            }
            println!(
                "{epochs} epochs in {dt:.1}s  ({:.3}s/epoch, 200 epochs ~ {:.1} min)",
                dt / epochs as f64,
                200.0 * dt / epochs as f64 / 60.0
            );
        }
        // Ablation grid probe: textured clip, 4 variants x 3 seeds.
        "b" => {
            let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(60);
            let c0: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(16);
            let clip = synth_video(SynthKind::Textured, 64, 128, 12, 7, 0.3, 0.0).unwrap();
            for seed in [1u64, 2, 3] {
                let mut results = Vec::new();
                for (label, mfu, hfr) in [
                    ("full    ", true, true),
                    ("mfu-only", true, false),
                    ("hfr-only", false, true),
                    ("neither ", false, false),
                ] {
                    let cfg = ModelConfig {
                        c0,
                        use_mfu: mfu,
                        use_hfr: hfr,
                        seed,
                        ..ModelConfig::default()
                    }
                    .with_derived_embedding()
                    .unwrap();
                    let mut model = SnervModel::new(cfg).unwrap();
                    let t0 = Instant::now();
                    let report = fit(
                        &mut model,
                        &clip,
                        &TrainOptions {
                            epochs,
                            ..TrainOptions::default()
                        },
                    )
                    .unwrap();
                    let dt = t0.elapsed().as_secs_f64();
                    let ev = eval_task(&model, &clip, Task::Regression, None).unwrap();
                    let half = epochs / 2;
                    let hf_tail: Vec<f64> =
                        report.curve[half..].iter().map(|r| r.hf_psnr).collect();
                    println!(
                        "seed {seed} {label}  psnr {:7.3}  hf(final) {:7.3}  hf(half) {:7.3}  [{dt:.0}s]",
                        ev.mean_psnr,
                        report.curve.last().unwrap().hf_psnr,
                        hf_tail[0]
                    );
                    results.push((label, ev.mean_psnr, report));
                }
                // ordering gaps
                let p: Vec<f64> = results.iter().map(|r| r.1).collect();
                println!(
                    "seed {seed}: full-mfuonly {:+.3}  mfuonly-neither {:+.3}  full-hfronly {:+.3}  hfronly-neither {:+.3}",
                    p[0] - p[1],
                    p[1] - p[3],
                    p[0] - p[2],
                    p[2] - p[3]
                );
                // hf dominance from half-training
                let half = epochs / 2;
                let full = &results[0].2.curve;
                let abl = &results[1].2.curve;
                let mut min_gap = f64::INFINITY;
                for e in half..epochs {
                    min_gap = min_gap.min(full[e].hf_psnr - abl[e].hf_psnr);
                }
                println!("seed {seed}: min hf gap from half-training: {min_gap:+.3}");
            }
        }
        // Temporal vs backbone interpolation probe on the moving clip.
        "c" => {
            let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(60);
            let clip = synth_video(SynthKind::Moving, 64, 128, 12, 7, 0.3, 2.0).unwrap();
            let odd = odd_clip(&clip);
            for seed in [1u64, 2, 3] {
                let mut out = Vec::new();
                for (label, temporal, c0) in
                    [("backbone", false, 32usize), ("temporal", true, 15)]
                {
                    let cfg = ModelConfig {
                        c0,
                        temporal,
                        seed,
                        ..ModelConfig::default()
                    }
                    .with_derived_embedding()
                    .unwrap();
                    let mut model = SnervModel::new(cfg.clone()).unwrap();
                    let t0 = Instant::now();
                    fit(
                        &mut model,
                        &clip,
                        &TrainOptions {
                            epochs,
                            task: Task::Interpolation,
                            ..TrainOptions::default()
                        },
                    )
                    .unwrap();
                    let dt = t0.elapsed().as_secs_f64();
                    let held = eval_task(&model, &clip, Task::Interpolation, None).unwrap();
                    let train = eval_task(&model, &odd, Task::Regression, None).unwrap();
                    println!(
                        "seed {seed} {label} (decoder {} params)  held-out {:7.3}  train {:7.3}  [{dt:.0}s]",
                        model.param_count().decoder_params,
                        held.mean_psnr,
                        train.mean_psnr
                    );
                    out.push((held.mean_psnr, train.mean_psnr));
                }
                println!(
                    "seed {seed}: temporal-backbone held-out {:+.3}  backbone-temporal train {:+.3}",
                    out[1].0 - out[0].0,
                    out[0].1 - out[1].1
                );
            }
        }
        // Gap trajectory: mfu-only vs neither train-curve PSNR by epoch.
        "d" => {
            let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(150);
            let c0: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(16);
            let clip = synth_video(SynthKind::Textured, 64, 128, 12, 7, 0.3, 0.0).unwrap();
            let checkpoints: Vec<usize> = (1..=epochs / 10).map(|k| k * 10).collect();
            for seed in [1u64, 2, 3] {
                let mut curves = Vec::new();
                for (label, mfu) in [("mfu-only", true), ("neither ", false)] {
                    let cfg = ModelConfig {
                        c0,
                        use_mfu: mfu,
                        use_hfr: false,
                        seed,
                        ..ModelConfig::default()
                    }
                    .with_derived_embedding()
                    .unwrap();
                    let mut model = SnervModel::new(cfg).unwrap();
                    let t0 = Instant::now();
                    let report = fit(
                        &mut model,
                        &clip,
                        &TrainOptions {
                            epochs,
                            ..TrainOptions::default()
                        },
                    )
                    .unwrap();
                    let dt = t0.elapsed().as_secs_f64();
                    let ev = eval_task(&model, &clip, Task::Regression, None).unwrap();
                    let at: Vec<String> = checkpoints
                        .iter()
                        .map(|&e| format!("{:.2}", report.curve[e - 1].frame_psnr))
                        .collect();
                    println!(
                        "seed {seed} {label} eval {:7.3} [{dt:.0}s]  psnr@10.. {}",
                        ev.mean_psnr,
                        at.join(" ")
                    );
                    curves.push(report.curve);
                }
                let gaps: Vec<String> = checkpoints
                    .iter()
                    .map(|&e| {
                        format!(
                            "{:+.3}",
                            curves[0][e - 1].frame_psnr - curves[1][e - 1].frame_psnr
                        )
                    })
                    .collect();
                println!("seed {seed} gap@10..   {}", gaps.join(" "));
            }
        }
        // Reference oracle: desk backbone on the smooth clip, full epochs.
        "e" => {
            let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(200);
            let lr: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
            let warmup_frac: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(0.05);
            let alpha: f64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(0.7);
            let clip = synth_video(SynthKind::Smooth, 64, 128, 12, 7, 0.0, 0.0).unwrap();
            let cfg = ModelConfig::default().with_derived_embedding().unwrap();
            let mut model = SnervModel::new(cfg).unwrap();
            let t0 = Instant::now();
            let report = fit(
                &mut model,
                &clip,
                &TrainOptions {
                    epochs,
                    lr,
                    warmup_frac,
                    alpha,
                    ..TrainOptions::default()
                },
            )
            .unwrap();
            let dt = t0.elapsed().as_secs_f64();
            let ev = eval_task(&model, &clip, Task::Regression, None).unwrap();
            // Trailing window-5 moving average of the loss.
            let loss: Vec<f64> = report.curve.iter().map(|r| r.loss).collect();
            let smoothed: Vec<f64> = (0..loss.len())
                .map(|i| {
                    let lo = i.saturating_sub(4);
                    loss[lo..=i].iter().sum::<f64>() / (i - lo + 1) as f64
                })
                .collect();
            let mut worst = f64::NEG_INFINITY;
            let mut worst_at = 0;
            for i in 1..smoothed.len() {
                let rise = smoothed[i] - smoothed[i - 1];
                if rise > worst {
                    worst = rise;
                    worst_at = i;
                }
            }
            println!("r_ref eval psnr {:.6}  [{dt:.0}s]", ev.mean_psnr);
            println!(
                "worst smoothed-loss rise {:+.3e} at epoch {} (loss there {:.6e})",
                worst, worst_at, smoothed[worst_at]
            );
            let tail: Vec<String> = report.curve[epochs - 5..]
                .iter()
                .map(|r| format!("{:.3}", r.frame_psnr))
                .collect();
            println!("final train psnr tail: {}", tail.join(" "));
            // Raw loss curve for diagnosis (wrapped, 10 per line).
            for chunk in loss.chunks(10) {
                let row: Vec<String> = chunk.iter().map(|l| format!("{l:.4}")).collect();
                println!("  {}", row.join(" "));
            }
            // Every positive smoothed rise, however small.
            for i in 1..smoothed.len() {
                let rise = smoothed[i] - smoothed[i - 1];
                if rise > 0.0 {
                    println!("  rise {:+.3e} at epoch {}", rise, i);
                }
            }
        }
        other => eprintln!("unknown phase {other}"),
    }
}
