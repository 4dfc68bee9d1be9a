//! `snerv`: command-line surface for the spectra-preserving neural video
//! representation toolkit. Generates synthetic clips, trains per-video
//! models, evaluates tasks, compresses trained models, and reports
//! parameter/rate budgets.

mod artifacts;
mod settings;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use artifacts::{clip_content_hash, sha256_hex, write_atomic, Manifest};
use settings::Settings;
use snerv_core::compress::{compress_embedded, roundtrip, ClipEmbeddings, CompressOptions};
use snerv_core::model::{ModelConfig, SnervModel, EMBED_CHANNELS, TEMPORAL_EMBED_CHANNELS};
use snerv_core::tensor::Tensor;
use snerv_core::trainer::{
    curve_csv, eval_task, fit, metrics_csv, MaskSpec, Task, TrainOptions,
};
use snerv_core::video::{load_clip, save_clip_png, save_clip_raw, synth_video, VideoClip};
use snerv_core::{checkpoint, Error, Result};

#[derive(Parser)]
#[command(
    name = "snerv",
    version,
    about = "Wavelet-domain neural video representation: train, evaluate, compress"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; each one overrides the matching
/// config-file key.
#[derive(Args, Debug, Default)]
struct Overrides {
    /// Configuration file (key=value lines under [model]/[video]/[train]/[compress]).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed override (model initialization, or generator seed for `gen`).
    #[arg(long)]
    seed: Option<u64>,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Task: regression | interpolation | inpainting.
    #[arg(long)]
    task: Option<Task>,
    /// Enable the temporal (neighbor-aware) branch.
    #[arg(long)]
    temporal: bool,
    /// Frame size, e.g. 64x128.
    #[arg(long, value_name = "HxW")]
    resolution: Option<String>,
    /// Base decoder width.
    #[arg(long)]
    c0: Option<usize>,
    /// Decoder stage strides.
    #[arg(long, value_name = "a,b,c,d,e")]
    strides: Option<String>,
    /// Frame-loss mix between L1 and SSIM.
    #[arg(long)]
    alpha: Option<f64>,
    /// Decoder prune fraction in [0, 1).
    #[arg(long)]
    prune: Option<f64>,
    /// Decoder weight bit width (2..=16).
    #[arg(long)]
    bits_decoder: Option<u8>,
    /// Embedding bit width (2..=16).
    #[arg(long)]
    bits_embed: Option<u8>,
}

/// Where a bare `--seed` lands.
enum SeedTarget {
    Model,
    Generator,
}

impl Overrides {
    fn apply(&self, seed_target: SeedTarget) -> Result<Settings> {
        let mut s = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    Error::input(format!("cannot read config {}: {e}", path.display()))
                })?;
                Settings::parse(&text)?
            }
            None => Settings::default(),
        };
        if let Some(seed) = self.seed {
            match seed_target {
                SeedTarget::Model => s.model.seed = seed,
                SeedTarget::Generator => s.video.seed = seed,
            }
        }
        if let Some(epochs) = self.epochs {
            s.train.epochs = epochs;
        }
        if let Some(task) = self.task {
            s.train.task = task;
        }
        if self.temporal {
            s.model.temporal = true;
        }
        if let Some(res) = &self.resolution {
            let (h, w) = res
                .split_once(['x', 'X'])
                .ok_or_else(|| Error::config(format!("resolution {res:?} is not HxW")))?;
            s.model.height = h
                .trim()
                .parse()
                .map_err(|e| Error::config(format!("resolution height: {e}")))?;
            s.model.width = w
                .trim()
                .parse()
                .map_err(|e| Error::config(format!("resolution width: {e}")))?;
        }
        if let Some(c0) = self.c0 {
            s.model.c0 = c0;
        }
        if let Some(strides) = &self.strides {
            s.model.set_key_value("strides", strides)?;
        }
        if let Some(alpha) = self.alpha {
            s.train.alpha = alpha;
        }
        if let Some(prune) = self.prune {
            s.compress.prune_fraction = prune;
        }
        if let Some(bits) = self.bits_decoder {
            s.compress.bits_decoder = bits;
        }
        if let Some(bits) = self.bits_embed {
            s.compress.bits_embed = bits;
        }
        // Embedding dims follow from resolution and strides.
        s.model = s.model.with_derived_embedding()?;
        s.model.validate()?;
        Ok(s)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic clip into a directory.
    Gen {
        #[command(flatten)]
        common: Overrides,
        /// Clip kind: smooth | textured | moving (overrides [video] kind).
        #[arg(long)]
        kind: Option<snerv_core::video::SynthKind>,
        /// Number of frames (overrides [video] frames).
        #[arg(long)]
        frames: Option<usize>,
        /// High-frequency grating amplitude (overrides [video] hf_amplitude).
        #[arg(long)]
        hf: Option<f64>,
        /// Horizontal velocity in px/frame for `moving` clips.
        #[arg(long)]
        velocity: Option<f64>,
        /// Frame format: raw (lossless planar RGB) | png.
        #[arg(long, default_value = "raw")]
        format: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a per-video model and write checkpoint + curves + metrics.
    Train {
        #[command(flatten)]
        common: Overrides,
        /// Directory of input frames; omitted = generate per [video].
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a task.
    Eval {
        #[command(flatten)]
        common: Overrides,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory of input frames; omitted = generate per [video].
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Prune + quantize a checkpoint and write the compressed container.
    Compress {
        #[command(flatten)]
        common: Overrides,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory of input frames; omitted = generate per [video].
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge training curves from run directories into one CSV.
    Curves {
        /// Run directories, each containing a curve.csv.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Output CSV path; omitted = stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report parameter counts and the expected compressed rate table.
    Info {
        #[command(flatten)]
        common: Overrides,
    },
    /// Train the fusion/refinement 2x2 ablation grid and print the ordering.
    Ablate {
        #[command(flatten)]
        common: Overrides,
        /// Directory of input frames; omitted = generate per [video].
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Parallel worker processes.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn obtain_clip(s: &Settings, input: Option<&Path>) -> Result<VideoClip> {
    match input {
        Some(dir) => load_clip(dir),
        None => synth_video(
            s.video.kind,
            s.model.height,
            s.model.width,
            s.video.frames,
            s.video.seed,
            s.video.hf_amplitude,
            s.video.velocity,
        ),
    }
}

fn mask_spec(s: &Settings) -> Option<MaskSpec> {
    s.train.mask.map(|kind| MaskSpec {
        kind,
        seed: s.train.mask_seed,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen {
            common,
            kind,
            frames,
            hf,
            velocity,
            format,
            out,
        } => {
            let mut s = common.apply(SeedTarget::Generator)?;
            if let Some(kind) = kind {
                s.video.kind = kind;
            }
            if let Some(frames) = frames {
                s.video.frames = frames;
            }
            if let Some(hf) = hf {
                s.video.hf_amplitude = hf;
            }
            if let Some(velocity) = velocity {
                s.video.velocity = velocity;
            }
            std::fs::create_dir_all(&out)?;
            let clip = obtain_clip(&s, None)?;
            let stem = s.video.kind.to_string();
            let files = match format.as_str() {
                "raw" => save_clip_raw(&clip, &out, &stem)?,
                "png" => save_clip_png(&clip, &out, &stem)?,
                other => {
                    return Err(Error::config(format!(
                        "unknown format {other} (expected raw or png)"
                    )))
                }
            };
            Manifest {
                command: "gen".to_string(),
                config_sha256: sha256_hex(s.to_text().as_bytes()),
                seed: s.video.seed,
                inputs: vec![("output.clip".to_string(), clip_content_hash(&clip))],
            }
            .write(&out)?;
            println!(
                "wrote {} {} frames ({}x{}) to {}",
                files.len(),
                stem,
                s.model.height,
                s.model.width,
                out.display()
            );
            Ok(())
        }

        Command::Train { common, input, out } => {
            let s = common.apply(SeedTarget::Model)?;
            std::fs::create_dir_all(&out)?;
            let clip = obtain_clip(&s, input.as_deref())?;
            let mut model = SnervModel::new(s.model.clone())?;
            let opts = TrainOptions {
                epochs: s.train.epochs,
                lr: s.train.lr,
                warmup_frac: s.train.warmup_frac,
                alpha: s.train.alpha,
                task: s.train.task,
                mask: mask_spec(&s),
            };
            let report = fit(&mut model, &clip, &opts)?;
            checkpoint::save(&model, &out.join("checkpoint.snrv"))?;
            write_atomic(&out.join("curve.csv"), curve_csv(&report).as_bytes())?;
            let eval = eval_task(&model, &clip, s.train.task, mask_spec(&s))?;
            write_atomic(&out.join("metrics.csv"), metrics_csv(&eval).as_bytes())?;
            write_atomic(&out.join("config.cfg"), s.to_text().as_bytes())?;
            Manifest {
                command: "train".to_string(),
                config_sha256: sha256_hex(s.to_text().as_bytes()),
                seed: s.model.seed,
                inputs: vec![("input.clip".to_string(), clip_content_hash(&clip))],
            }
            .write(&out)?;
            println!(
                "task {} final psnr {:.4} ssim {:.6} -> {}",
                s.train.task,
                eval.mean_psnr,
                eval.mean_ssim,
                out.display()
            );
            Ok(())
        }

        Command::Eval {
            common,
            checkpoint: ckpt,
            input,
            out,
        } => {
            let s = common.apply(SeedTarget::Model)?;
            std::fs::create_dir_all(&out)?;
            let ckpt_bytes = std::fs::read(&ckpt)?;
            let model = checkpoint::from_bytes(&ckpt_bytes)?;
            // Frame dims come from the checkpoint, not local settings.
            let mut gen_s = s.clone();
            gen_s.model.height = model.config().height;
            gen_s.model.width = model.config().width;
            let clip = obtain_clip(&gen_s, input.as_deref())?;
            let eval = eval_task(&model, &clip, s.train.task, mask_spec(&s))?;
            write_atomic(&out.join("metrics.csv"), metrics_csv(&eval).as_bytes())?;
            Manifest {
                command: "eval".to_string(),
                config_sha256: sha256_hex(s.to_text().as_bytes()),
                seed: model.config().seed,
                inputs: vec![
                    ("input.checkpoint".to_string(), sha256_hex(&ckpt_bytes)),
                    ("input.clip".to_string(), clip_content_hash(&clip)),
                ],
            }
            .write(&out)?;
            println!(
                "task {} mean psnr {:.4} ssim {:.6} over {} frames",
                s.train.task,
                eval.mean_psnr,
                eval.mean_ssim,
                eval.rows.len()
            );
            Ok(())
        }

        Command::Compress {
            common,
            checkpoint: ckpt,
            input,
            out,
        } => {
            let s = common.apply(SeedTarget::Model)?;
            std::fs::create_dir_all(&out)?;
            let ckpt_bytes = std::fs::read(&ckpt)?;
            let model = checkpoint::from_bytes(&ckpt_bytes)?;
            let mut gen_s = s.clone();
            gen_s.model.height = model.config().height;
            gen_s.model.width = model.config().width;
            let clip = obtain_clip(&gen_s, input.as_deref())?;
            let opts = CompressOptions {
                prune_fraction: s.compress.prune_fraction,
                bits_decoder: s.compress.bits_decoder,
                bits_embed: s.compress.bits_embed,
            };
            let report = roundtrip(&model, &clip, &opts)?;
            let container = out.join("model.snvc");
            report.compressed.save(&container)?;
            let written = std::fs::metadata(&container)?.len();
            if written * 8 != report.accounting.total_bits {
                return Err(Error::Integrity(format!(
                    "accounting mismatch: file {} bytes vs accounted {} bits",
                    written, report.accounting.total_bits
                )));
            }
            let mut csv = String::from("frame_index,psnr_original,psnr_compressed,delta_psnr\n");
            for k in 0..report.delta_psnr.len() {
                csv.push_str(&format!(
                    "{k},{:.4},{:.4},{:.4}\n",
                    report.psnr_original[k], report.psnr_compressed[k], report.delta_psnr[k]
                ));
            }
            csv.push_str(&format!("mean,,,{:.4}\n", report.mean_delta_psnr));
            write_atomic(&out.join("compress.csv"), csv.as_bytes())?;
            Manifest {
                command: "compress".to_string(),
                config_sha256: sha256_hex(s.to_text().as_bytes()),
                seed: model.config().seed,
                inputs: vec![
                    ("input.checkpoint".to_string(), sha256_hex(&ckpt_bytes)),
                    ("input.clip".to_string(), clip_content_hash(&clip)),
                ],
            }
            .write(&out)?;
            let acct = report.accounting;
            println!(
                "pruned {} of {} decoder weights; {} bytes on disk; bpp {:.6}; mean psnr cost {:.4} dB",
                report.compressed.zeroed,
                report.compressed.original_decoder_params,
                report.file_bytes,
                acct.bpp,
                report.mean_delta_psnr
            );
            println!(
                "bits: decoder payload {} + bitmaps {} + embeddings {} + framing {} = {} (entropy estimate {:.0})",
                acct.decoder_payload_bits,
                acct.decoder_bitmap_bits,
                acct.embedding_bits,
                acct.header_bits,
                acct.total_bits,
                report.entropy_bits
            );
            Ok(())
        }

        Command::Curves { runs, out } => {
            let mut merged = String::from("run,epoch,loss,frame_psnr,ll_psnr,hf_psnr\n");
            for dir in &runs {
                let path = dir.join("curve.csv");
                let text = std::fs::read_to_string(&path).map_err(|e| {
                    Error::input(format!("cannot read {}: {e}", path.display()))
                })?;
                let mut lines = text.lines();
                let header = lines.next().unwrap_or_default();
                if header != "epoch,loss,frame_psnr,ll_psnr,hf_psnr" {
                    return Err(Error::input(format!(
                        "{} does not look like a curve file (header {header:?})",
                        path.display()
                    )));
                }
                let run = dir
                    .file_name()
                    .map(|n| n.to_string_lossy().to_string())
                    .unwrap_or_else(|| dir.display().to_string());
                for line in lines {
                    merged.push_str(&format!("{run},{line}\n"));
                }
            }
            match out {
                Some(path) => write_atomic(&path, merged.as_bytes())?,
                None => print!("{merged}"),
            }
            Ok(())
        }

        Command::Info { common } => {
            let s = common.apply(SeedTarget::Model)?;
            info(&s)
        }

        Command::Ablate {
            common,
            input,
            out,
            jobs,
        } => ablate(&common, input.as_deref(), &out, jobs),
    }
}

fn info(s: &Settings) -> Result<()> {
    let model = SnervModel::new(s.model.clone())?;
    let counts = model.param_count();
    let cfg = model.config();
    println!(
        "model {}x{}, strides {:?}, c0 {}, r {}, n_rb {}, temporal {}",
        cfg.height, cfg.width, cfg.strides, cfg.c0, cfg.r, cfg.n_rb, cfg.temporal
    );
    println!("encoder parameters:      {}", counts.encoder_params);
    println!("decoder parameters:      {}", counts.decoder_params);
    println!(
        "embedding floats/frame:  {}",
        counts.embedding_floats_per_frame
    );

    // Exact expected rates: structure determines size, so zero
    // placeholder embeddings forecast a real run to the byte.
    let emb = placeholder_embeddings(cfg, s.video.frames);
    let dims = (cfg.height, cfg.width, s.video.frames);
    println!(
        "expected rate over {} frames at {}x{}:",
        s.video.frames, cfg.height, cfg.width
    );
    println!("  prune   bits(dec/emb)   file_bytes        bpp");
    let mut rows = vec![
        (s.compress.prune_fraction, s.compress.bits_decoder, s.compress.bits_embed),
        (0.0, 8, 6),
        (0.1, 8, 6),
        (0.2, 8, 6),
        (0.1, 16, 16),
    ];
    let mut seen = Vec::new();
    rows.retain(|r| {
        let fresh = !seen.contains(r);
        seen.push(*r);
        fresh
    });
    for (fraction, bits_decoder, bits_embed) in rows {
        let cm = compress_embedded(
            &model,
            &emb,
            &CompressOptions {
                prune_fraction: fraction,
                bits_decoder,
                bits_embed,
            },
        )?;
        let acct = cm.accounting(dims)?;
        println!(
            "  {:<7} {:>2}/{:<12} {:>10}   {:.6}",
            fraction,
            bits_decoder,
            bits_embed,
            acct.total_bits / 8,
            acct.bpp
        );
    }
    Ok(())
}

fn placeholder_embeddings(cfg: &ModelConfig, frames: usize) -> ClipEmbeddings {
    let spatial = vec![
        Tensor::zeros(vec![EMBED_CHANNELS, cfg.embed_h, cfg.embed_w]);
        frames
    ];
    let temporal = if cfg.temporal {
        let t = Tensor::zeros(vec![
            TEMPORAL_EMBED_CHANNELS,
            cfg.temporal_embed_h,
            cfg.temporal_embed_w,
        ]);
        vec![(t.clone(), t); frames]
    } else {
        Vec::new()
    };
    ClipEmbeddings { spatial, temporal }
}

const ABLATION_VARIANTS: [(&str, bool, bool); 4] = [
    ("full", true, true),
    ("mfu_only", true, false),
    ("hfr_only", false, true),
    ("neither", false, false),
];

fn ablate(common: &Overrides, input: Option<&Path>, out: &Path, jobs: usize) -> Result<()> {
    if jobs == 0 {
        return Err(Error::config("--jobs must be >= 1"));
    }
    let s = common.apply(SeedTarget::Model)?;
    std::fs::create_dir_all(out)?;
    let exe = std::env::current_exe()?;

    // One config file per variant; each child is an ordinary `train` run
    // in its own directory.
    let mut pending: Vec<(String, PathBuf)> = Vec::new();
    for (name, use_mfu, use_hfr) in ABLATION_VARIANTS {
        let mut vs = s.clone();
        vs.model.use_mfu = use_mfu;
        vs.model.use_hfr = use_hfr;
        let dir = out.join(name);
        std::fs::create_dir_all(&dir)?;
        write_atomic(&dir.join("ablate.cfg"), vs.to_text().as_bytes())?;
        pending.push((name.to_string(), dir));
    }

    let mut queue = pending.iter();
    let mut running: Vec<(String, std::process::Child)> = Vec::new();
    let mut failures = Vec::new();
    loop {
        while running.len() < jobs {
            let Some((name, dir)) = queue.next() else { break };
            let mut cmd = std::process::Command::new(&exe);
            cmd.arg("train")
                .arg("--config")
                .arg(dir.join("ablate.cfg"))
                .arg("--out")
                .arg(dir);
            if let Some(input) = input {
                cmd.arg("--input").arg(input);
            }
            let child = cmd
                .spawn()
                .map_err(|e| Error::input(format!("cannot spawn worker: {e}")))?;
            running.push((name.clone(), child));
        }
        let Some((name, mut child)) = running.pop() else { break };
        let status = child
            .wait()
            .map_err(|e| Error::input(format!("worker {name}: {e}")))?;
        if !status.success() {
            failures.push(name);
        }
    }
    if !failures.is_empty() {
        return Err(Error::input(format!(
            "ablation workers failed: {}",
            failures.join(", ")
        )));
    }

    let mut rows = Vec::new();
    for (name, dir) in &pending {
        let psnr = read_mean_psnr(&dir.join("metrics.csv"))?;
        rows.push((name.clone(), psnr));
    }
    rows.sort_by(|a, b| b.1.total_cmp(&a.1));
    println!("variant    psnr");
    for (name, psnr) in &rows {
        println!("{name:<10} {psnr:.4}");
    }
    let order: Vec<&str> = rows.iter().map(|(n, _)| n.as_str()).collect();
    println!("ordering: {}", order.join(" > "));
    Ok(())
}

fn read_mean_psnr(path: &Path) -> Result<f64> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::input(format!("cannot read {}: {e}", path.display())))?;
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("mean,") {
            let psnr = rest
                .split(',')
                .next()
                .unwrap_or_default()
                .parse()
                .map_err(|e| Error::input(format!("{}: bad mean row: {e}", path.display())))?;
            return Ok(psnr);
        }
    }
    Err(Error::input(format!(
        "{}: no mean row found",
        path.display()
    )))
}
