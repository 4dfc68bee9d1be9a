//! Video clips: synthetic generation, raw planar RGB and PNG I/O.
//!
//! Three generators cover the content regimes the model cares about:
//! `smooth` is low-frequency dominant (drifting Gaussian blobs),
//! `textured` layers high-frequency gratings on top, and `moving`
//! translates a textured pattern across frames so that temporal
//! neighbors carry real information.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An in-memory clip: `[3, H, W]` frames with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub frames: Vec<Tensor<f32>>,
    /// Informational only; nothing in training depends on it.
    pub fps: f64,
    /// Where the clip came from (path or generator descriptor).
    pub source: String,
}

impl VideoClip {
    pub fn new(frames: Vec<Tensor<f32>>, fps: f64, source: String) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::input("clip has no frames".to_string()));
        }
        let shape = frames[0].shape().to_vec();
        if shape.len() != 3 || shape[0] != 3 {
            return Err(Error::input(format!(
                "frames must be [3, H, W], got {:?}",
                shape
            )));
        }
        for (i, f) in frames.iter().enumerate() {
            if f.shape() != shape.as_slice() {
                return Err(Error::input(format!(
                    "frame {} has shape {:?}, expected {:?}",
                    i,
                    f.shape(),
                    shape
                )));
            }
        }
        Ok(VideoClip { frames, fps, source })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// (height, width) of every frame.
    pub fn dims(&self) -> (usize, usize) {
        let s = self.frames[0].shape();
        (s[1], s[2])
    }
}

/// Which synthetic clip to generate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthKind {
    Smooth,
    Textured,
    Moving,
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SynthKind::Smooth => "smooth",
            SynthKind::Textured => "textured",
            SynthKind::Moving => "moving",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for SynthKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smooth" => Ok(SynthKind::Smooth),
            "textured" => Ok(SynthKind::Textured),
            "moving" => Ok(SynthKind::Moving),
            other => Err(Error::config(format!(
                "unknown clip kind {:?} (expected smooth, textured or moving)",
                other
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Blob {
    // Orbit center (fractions of the frame), radius, phase and angular
    // rate give each blob a smooth closed drift path.
    cx: f64,
    cy: f64,
    orbit: f64,
    phase: f64,
    rate: f64,
    sigma: f64,
    color: [f64; 3],
}

fn draw_blobs(rng: &mut ChaCha8Rng, n: usize) -> Vec<Blob> {
    (0..n)
        .map(|_| Blob {
            cx: rng.random_range(0.2..0.8),
            cy: rng.random_range(0.2..0.8),
            orbit: rng.random_range(0.05..0.2),
            phase: rng.random_range(0.0..std::f64::consts::TAU),
            rate: rng.random_range(0.15..0.45),
            sigma: rng.random_range(0.10..0.25),
            color: [
                rng.random_range(0.25..0.9),
                rng.random_range(0.25..0.9),
                rng.random_range(0.25..0.9),
            ],
        })
        .collect()
}

#[derive(Clone, Copy, Debug)]
struct Grating {
    // Spatial frequency in cycles/pixel per axis, plus phase. Kept
    // near Nyquist so the pattern lands in the wavelet detail bands.
    fx: f64,
    fy: f64,
    phase: f64,
    weight: f64,
}

fn draw_gratings(rng: &mut ChaCha8Rng, n: usize) -> Vec<Grating> {
    (0..n)
        .map(|_| {
            let horizontal = rng.random_range(0u8..2) == 0;
            let hi = rng.random_range(0.35..0.5);
            let lo = rng.random_range(0.0..0.08);
            Grating {
                fx: if horizontal { hi } else { lo },
                fy: if horizontal { lo } else { hi },
                phase: rng.random_range(0.0..std::f64::consts::TAU),
                weight: rng.random_range(0.5..1.0),
            }
        })
        .collect()
}

fn blob_field(blobs: &[Blob], t: f64, h: usize, w: usize) -> Vec<f32> {
    let mut data = vec![0.15f32; 3 * h * w];
    let scale = h.min(w) as f64;
    for b in blobs {
        let angle = b.phase + b.rate * t;
        let bx = (b.cx + b.orbit * angle.cos()) * w as f64;
        let by = (b.cy + b.orbit * angle.sin()) * h as f64;
        let sigma = b.sigma * scale;
        let inv = 1.0 / (2.0 * sigma * sigma);
        for y in 0..h {
            let dy = y as f64 - by;
            for x in 0..w {
                let dx = x as f64 - bx;
                let g = (-(dx * dx + dy * dy) * inv).exp();
                for ch in 0..3 {
                    data[ch * h * w + y * w + x] += (b.color[ch] * g) as f32;
                }
            }
        }
    }
    data
}

fn grating_value(gratings: &[Grating], x: f64, y: f64) -> f64 {
    let mut v = 0.0;
    let mut norm = 0.0;
    for g in gratings {
        v += g.weight * (std::f64::consts::TAU * (g.fx * x + g.fy * y) + g.phase).sin();
        norm += g.weight;
    }
    v / norm
}

/// Generate a deterministic synthetic clip.
///
/// * `smooth`: drifting Gaussian blobs, low-frequency dominant.
/// * `textured`: the same blobs plus high-frequency gratings scaled by
///   `hf_amplitude` (`hf_amplitude == 0` reproduces `smooth` exactly).
/// * `moving`: the textured pattern frozen at `t = 0` and translated
///   by `velocity` pixels/frame horizontally with wraparound.
pub fn synth_video(
    kind: SynthKind,
    height: usize,
    width: usize,
    num_frames: usize,
    seed: u64,
    hf_amplitude: f64,
    velocity: f64,
) -> Result<VideoClip> {
    if height % 2 != 0 || width % 2 != 0 || height == 0 || width == 0 {
        return Err(Error::input(format!(
            "frame size must be positive and even, got {}x{}",
            height, width
        )));
    }
    if num_frames == 0 {
        return Err(Error::input("clip needs at least one frame".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blobs = draw_blobs(&mut rng, 5);
    let gratings = draw_gratings(&mut rng, 4);

    let compose = |t: f64| -> Vec<f32> {
        let mut data = blob_field(&blobs, t, height, width);
        if kind != SynthKind::Smooth && hf_amplitude != 0.0 {
            for y in 0..height {
                for x in 0..width {
                    let g = hf_amplitude * grating_value(&gratings, x as f64, y as f64);
                    for ch in 0..3 {
                        data[ch * height * width + y * width + x] += g as f32;
                    }
                }
            }
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        data
    };

    let frames: Vec<Tensor<f32>> = match kind {
        SynthKind::Smooth | SynthKind::Textured => (0..num_frames)
            .map(|t| Tensor::new(vec![3, height, width], compose(t as f64)))
            .collect::<Result<_>>()?,
        SynthKind::Moving => {
            let base = compose(0.0);
            (0..num_frames)
                .map(|t| {
                    let shift = ((velocity * t as f64).round() as i64).rem_euclid(width as i64)
                        as usize;
                    let mut data = vec![0.0f32; 3 * height * width];
                    for ch in 0..3 {
                        for y in 0..height {
                            let row = ch * height * width + y * width;
                            for x in 0..width {
                                data[row + (x + shift) % width] = base[row + x];
                            }
                        }
                    }
                    Tensor::new(vec![3, height, width], data)
                })
                .collect::<Result<_>>()?
        }
    };
    VideoClip::new(
        frames,
        30.0,
        format!(
            "synth:{}:{}x{}x{}:seed={}:hf={}:v={}",
            kind, height, width, num_frames, seed, hf_amplitude, velocity
        ),
    )
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Save a clip as raw planar RGB files `{stem}_{i:04}.rgb` plus a
/// `{stem}.dims` sidecar holding `height width`.
pub fn save_clip_raw(clip: &VideoClip, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(Error::Io)?;
    let (h, w) = clip.dims();
    std::fs::write(dir.join(format!("{}.dims", stem)), format!("{} {}\n", h, w))
        .map_err(Error::Io)?;
    let mut paths = Vec::with_capacity(clip.len());
    for (i, f) in clip.frames.iter().enumerate() {
        let bytes: Vec<u8> = f.data().iter().map(|&v| to_u8(v)).collect();
        let path = dir.join(format!("{}_{:04}.rgb", stem, i));
        std::fs::write(&path, &bytes).map_err(Error::Io)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Save a clip as 8-bit PNG files `{stem}_{i:04}.png`.
pub fn save_clip_png(clip: &VideoClip, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(Error::Io)?;
    let (h, w) = clip.dims();
    let mut paths = Vec::with_capacity(clip.len());
    for (i, f) in clip.frames.iter().enumerate() {
        // Planar -> interleaved.
        let mut buf = vec![0u8; 3 * h * w];
        for ch in 0..3 {
            for p in 0..h * w {
                buf[p * 3 + ch] = to_u8(f.data()[ch * h * w + p]);
            }
        }
        let path = dir.join(format!("{}_{:04}.png", stem, i));
        let img: image::RgbImage =
            image::ImageBuffer::from_raw(w as u32, h as u32, buf).expect("sized buffer");
        img.save(&path)
            .map_err(|e| Error::input(format!("writing {}: {}", path.display(), e)))?;
        paths.push(path);
    }
    Ok(paths)
}

/// Trailing integer in a file stem, used to order frames.
fn frame_index(path: &Path) -> Option<u64> {
    let stem = path.file_stem()?.to_str()?;
    let digits: String = stem
        .chars()
        .rev()
        .take_while(|c| c.is_ascii_digit())
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    digits.parse().ok()
}

/// Load a clip from a directory of `.png` or `.rgb` frames (raw frames
/// need a `*.dims` sidecar). Frames are ordered by the trailing index
/// in their filenames; pixel values map to `[0, 1]` by `/255`.
pub fn load_clip(dir: &Path) -> Result<VideoClip> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(Error::Io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();

    let mut dims: Option<(usize, usize)> = None;
    for e in &entries {
        if e.extension().and_then(|s| s.to_str()) == Some("dims") {
            let text = std::fs::read_to_string(e).map_err(Error::Io)?;
            let mut it = text.split_whitespace();
            let h = it.next().and_then(|s| s.parse().ok());
            let w = it.next().and_then(|s| s.parse().ok());
            match (h, w) {
                (Some(h), Some(w)) => dims = Some((h, w)),
                _ => {
                    return Err(Error::input(format!(
                        "malformed dims sidecar {}",
                        e.display()
                    )))
                }
            }
        }
    }

    let mut frames: Vec<(u64, Tensor<f32>)> = Vec::new();
    for path in &entries {
        let ext = path.extension().and_then(|s| s.to_str());
        let tensor = match ext {
            Some("rgb") => {
                let (h, w) = dims.ok_or_else(|| {
                    Error::input(format!(
                        "raw frame {} has no dims sidecar in {}",
                        path.display(),
                        dir.display()
                    ))
                })?;
                let bytes = std::fs::read(path).map_err(Error::Io)?;
                if bytes.len() != 3 * h * w {
                    return Err(Error::input(format!(
                        "{}: expected {} bytes for {}x{}, found {}",
                        path.display(),
                        3 * h * w,
                        h,
                        w,
                        bytes.len()
                    )));
                }
                let data = bytes.iter().map(|&b| b as f32 / 255.0).collect();
                Tensor::new(vec![3, h, w], data)?
            }
            Some("png") => {
                let img = image::open(path)
                    .map_err(|e| Error::input(format!("reading {}: {}", path.display(), e)))?
                    .to_rgb8();
                let (w, h) = (img.width() as usize, img.height() as usize);
                let mut data = vec![0.0f32; 3 * h * w];
                for (p, px) in img.pixels().enumerate() {
                    for ch in 0..3 {
                        data[ch * h * w + p] = px.0[ch] as f32 / 255.0;
                    }
                }
                Tensor::new(vec![3, h, w], data)?
            }
            _ => continue,
        };
        let idx = frame_index(path).ok_or_else(|| {
            Error::input(format!("frame {} has no trailing index", path.display()))
        })?;
        frames.push((idx, tensor));
    }
    if frames.is_empty() {
        return Err(Error::input(format!(
            "no .png or .rgb frames in {}",
            dir.display()
        )));
    }
    frames.sort_by_key(|&(i, _)| i);
    let shape = frames[0].1.shape().to_vec();
    for (i, f) in &frames {
        if f.shape() != shape.as_slice() {
            return Err(Error::input(format!(
                "frame {} has shape {:?}, others have {:?} (mixed resolutions)",
                i,
                f.shape(),
                shape
            )));
        }
    }
    VideoClip::new(
        frames.into_iter().map(|(_, f)| f).collect(),
        30.0,
        dir.display().to_string(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavelet::detail_energy_fraction;

    #[test]
    fn generators_are_deterministic() {
        let a = synth_video(SynthKind::Textured, 32, 64, 4, 7, 0.3, 0.0).unwrap();
        let b = synth_video(SynthKind::Textured, 32, 64, 4, 7, 0.3, 0.0).unwrap();
        assert_eq!(a, b);
        let c = synth_video(SynthKind::Textured, 32, 64, 4, 8, 0.3, 0.0).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_hf_amplitude_reduces_textured_to_smooth() {
        let s = synth_video(SynthKind::Smooth, 32, 64, 3, 3, 0.0, 0.0).unwrap();
        let t = synth_video(SynthKind::Textured, 32, 64, 3, 3, 0.0, 0.0).unwrap();
        assert_eq!(s.frames, t.frames);
    }

    #[test]
    fn zero_velocity_moving_clip_is_static() {
        let m = synth_video(SynthKind::Moving, 32, 64, 5, 11, 0.3, 0.0).unwrap();
        for f in &m.frames[1..] {
            assert_eq!(*f, m.frames[0]);
        }
        let mv = synth_video(SynthKind::Moving, 32, 64, 5, 11, 0.3, 2.0).unwrap();
        assert_ne!(mv.frames[1], mv.frames[0]);
    }

    #[test]
    fn moving_clip_translates_with_wraparound() {
        let m = synth_video(SynthKind::Moving, 16, 32, 3, 5, 0.25, 3.0).unwrap();
        let f0 = m.frames[0].data();
        let f1 = m.frames[1].data();
        // Frame 1 is frame 0 shifted right by 3 with wraparound.
        for ch in 0..3 {
            for y in 0..16 {
                for x in 0..32 {
                    let src = ch * 16 * 32 + y * 32 + x;
                    let dst = ch * 16 * 32 + y * 32 + (x + 3) % 32;
                    assert_eq!(f0[src], f1[dst]);
                }
            }
        }
    }

    #[test]
    fn textured_has_much_more_detail_energy_than_smooth() {
        let s = synth_video(SynthKind::Smooth, 64, 128, 2, 9, 0.0, 0.0).unwrap();
        let t = synth_video(SynthKind::Textured, 64, 128, 2, 9, 0.3, 0.0).unwrap();
        let frac = |f: &Tensor<f32>| detail_energy_fraction(f).unwrap();
        let fs = frac(&s.frames[0]);
        let ft = frac(&t.frames[0]);
        assert!(
            ft >= 3.0 * fs,
            "textured detail fraction {:.4} not >= 3x smooth {:.4}",
            ft,
            fs
        );
    }

    #[test]
    fn values_stay_in_unit_range() {
        for kind in [SynthKind::Smooth, SynthKind::Textured, SynthKind::Moving] {
            let c = synth_video(kind, 32, 32, 3, 2, 0.5, 1.5).unwrap();
            for f in &c.frames {
                assert!(f.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }

    #[test]
    fn odd_dims_are_rejected() {
        assert!(synth_video(SynthKind::Smooth, 33, 64, 2, 1, 0.0, 0.0).is_err());
        assert!(synth_video(SynthKind::Smooth, 32, 63, 2, 1, 0.0, 0.0).is_err());
    }

    #[test]
    fn raw_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let clip = synth_video(SynthKind::Textured, 16, 32, 3, 4, 0.2, 0.0).unwrap();
        save_clip_raw(&clip, dir.path(), "clip").unwrap();
        let loaded = load_clip(dir.path()).unwrap();
        assert_eq!(loaded.len(), 3);
        for (a, b) in clip.frames.iter().zip(&loaded.frames) {
            assert!(a.max_abs_diff(b) <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn png_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let clip = synth_video(SynthKind::Smooth, 16, 32, 2, 4, 0.0, 0.0).unwrap();
        save_clip_png(&clip, dir.path(), "clip").unwrap();
        let loaded = load_clip(dir.path()).unwrap();
        assert_eq!(loaded.len(), 2);
        for (a, b) in clip.frames.iter().zip(&loaded.frames) {
            assert!(a.max_abs_diff(b) <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn extreme_pixels_map_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let mut data = vec![0.0f32; 3 * 4 * 4];
        data[0] = 1.0;
        let clip = VideoClip::new(
            vec![Tensor::new(vec![3, 4, 4], data).unwrap()],
            30.0,
            "test".to_string(),
        )
        .unwrap();
        save_clip_raw(&clip, dir.path(), "x").unwrap();
        let loaded = load_clip(dir.path()).unwrap();
        assert_eq!(loaded.frames[0].data()[0], 1.0);
        assert!(loaded.frames[0].data()[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mixed_resolutions_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let a = synth_video(SynthKind::Smooth, 16, 32, 1, 1, 0.0, 0.0).unwrap();
        let b = synth_video(SynthKind::Smooth, 32, 32, 1, 1, 0.0, 0.0).unwrap();
        save_clip_png(&a, dir.path(), "a").unwrap();
        // Rename so both sort into one sequence.
        std::fs::rename(dir.path().join("a_0000.png"), dir.path().join("f_0000.png")).unwrap();
        save_clip_png(&b, dir.path(), "b").unwrap();
        std::fs::rename(dir.path().join("b_0000.png"), dir.path().join("f_0001.png")).unwrap();
        let err = load_clip(dir.path()).unwrap_err();
        assert!(format!("{}", err).contains("mixed"));
    }

    #[test]
    fn truncated_raw_frame_is_an_input_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("clip.dims"), "16 32\n").unwrap();
        std::fs::write(dir.path().join("clip_0000.rgb"), vec![0u8; 10]).unwrap();
        assert!(load_clip(dir.path()).is_err());
    }
}
