//! Line-oriented `key=value` configuration with `[section]` headers.
//!
//! Four sections are recognized: `[model]` (architecture and seed),
//! `[video]` (synthetic clip generation), `[train]` (optimization), and
//! `[compress]` (pruning and bit widths). Command-line flags override
//! file values; the effective configuration is re-serialized verbatim
//! into each run directory so any run can be reproduced from its own
//! artifacts.

use snerv_core::model::ModelConfig;
use snerv_core::trainer::{MaskKind, Task};
use snerv_core::video::SynthKind;
use snerv_core::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct VideoSettings {
    pub kind: SynthKind,
    pub frames: usize,
    pub seed: u64,
    pub hf_amplitude: f64,
    pub velocity: f64,
    pub fps: f64,
}

impl Default for VideoSettings {
    fn default() -> Self {
        VideoSettings {
            kind: SynthKind::Smooth,
            frames: 12,
            seed: 7,
            hf_amplitude: 0.3,
            velocity: 2.0,
            fps: 24.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub epochs: usize,
    pub lr: f64,
    pub warmup_frac: f64,
    pub alpha: f64,
    pub task: Task,
    pub mask: Option<MaskKind>,
    pub mask_seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            epochs: 200,
            lr: 1e-3,
            warmup_frac: 0.05,
            alpha: 0.7,
            task: Task::Regression,
            mask: None,
            mask_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompressSettings {
    pub prune_fraction: f64,
    pub bits_decoder: u8,
    pub bits_embed: u8,
}

impl Default for CompressSettings {
    fn default() -> Self {
        CompressSettings {
            prune_fraction: 0.10,
            bits_decoder: 8,
            bits_embed: 6,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings {
    pub model: ModelConfig,
    pub video: VideoSettings,
    pub train: TrainSettings,
    pub compress: CompressSettings,
}

fn bad(section: &str, key: &str, err: impl std::fmt::Display) -> Error {
    Error::config(format!("[{section}] {key}: {err}"))
}

impl Settings {
    pub fn parse(text: &str) -> Result<Settings> {
        let mut s = Settings::default();
        let mut section: Option<String> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                match name {
                    "model" | "video" | "train" | "compress" => {
                        section = Some(name.to_string());
                    }
                    other => {
                        return Err(Error::config(format!(
                            "line {}: unknown section [{other}]",
                            lineno + 1
                        )))
                    }
                }
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected key=value, got {line:?}", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let section = section.as_deref().ok_or_else(|| {
                Error::config(format!(
                    "line {}: key {key} appears before any [section] header",
                    lineno + 1
                ))
            })?;
            s.set(section, key, value)?;
        }
        Ok(s)
    }

    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        match section {
            "model" => self.model.set_key_value(key, value),
            "video" => match key {
                "kind" => {
                    self.video.kind = value.parse().map_err(|e| bad(section, key, e))?;
                    Ok(())
                }
                "frames" => {
                    self.video.frames = value.parse().map_err(|e| bad(section, key, e))?;
                    Ok(())
                }
                "seed" => {
                    self.video.seed = value.parse().map_err(|e| bad(section, key, e))?;
                    Ok(())
                }
                "hf_amplitude" => {
                    self.video.hf_amplitude = value.parse().map_err(|e| bad(section, key, e))?;
                    Ok(())
                }
                "velocity" => {
                    self.video.velocity = value.parse().map_err(|e| bad(section, key, e))?;
                    Ok(())
                }
                "fps" => {
                    self.video.fps = value.parse().map_err(|e| bad(section, key, e))?;
                    Ok(())
                }
                other => Err(Error::config(format!("[video] unknown key {other}"))),
            },
            "train" => match key {
                "epochs" => {
                    self.train.epochs = value.parse().map_err(|e| bad(section, key, e))?;
                    Ok(())
                }
                "lr" => {
                    self.train.lr = value.parse().map_err(|e| bad(section, key, e))?;
                    Ok(())
                }
                "warmup_frac" => {
                    self.train.warmup_frac = value.parse().map_err(|e| bad(section, key, e))?;
                    Ok(())
                }
                "alpha" => {
                    self.train.alpha = value.parse().map_err(|e| bad(section, key, e))?;
                    Ok(())
                }
                "task" => {
                    self.train.task = value.parse().map_err(|e| bad(section, key, e))?;
                    Ok(())
                }
                "mask" => {
                    self.train.mask = if value == "none" {
                        None
                    } else {
                        Some(value.parse().map_err(|e| bad(section, key, e))?)
                    };
                    Ok(())
                }
                "mask_seed" => {
                    self.train.mask_seed = value.parse().map_err(|e| bad(section, key, e))?;
                    Ok(())
                }
                other => Err(Error::config(format!("[train] unknown key {other}"))),
            },
            "compress" => match key {
                "prune_fraction" => {
                    self.compress.prune_fraction =
                        value.parse().map_err(|e| bad(section, key, e))?;
                    Ok(())
                }
                "bits_decoder" => {
                    self.compress.bits_decoder = value.parse().map_err(|e| bad(section, key, e))?;
                    Ok(())
                }
                "bits_embed" => {
                    self.compress.bits_embed = value.parse().map_err(|e| bad(section, key, e))?;
                    Ok(())
                }
                other => Err(Error::config(format!("[compress] unknown key {other}"))),
            },
            other => Err(Error::config(format!("unknown section [{other}]"))),
        }
    }

    /// Canonical serialization; `parse(to_text(s)) == s`.
    pub fn to_text(&self) -> String {
        let mut out = String::from("[model]\n");
        out.push_str(&self.model.to_key_values());
        out.push_str(&format!(
            "\n[video]\nkind={}\nframes={}\nseed={}\nhf_amplitude={}\nvelocity={}\nfps={}\n",
            self.video.kind,
            self.video.frames,
            self.video.seed,
            self.video.hf_amplitude,
            self.video.velocity,
            self.video.fps
        ));
        out.push_str(&format!(
            "\n[train]\nepochs={}\nlr={}\nwarmup_frac={}\nalpha={}\ntask={}\nmask={}\nmask_seed={}\n",
            self.train.epochs,
            self.train.lr,
            self.train.warmup_frac,
            self.train.alpha,
            self.train.task,
            self.train
                .mask
                .map(|m| m.to_string())
                .unwrap_or_else(|| "none".to_string()),
            self.train.mask_seed
        ));
        out.push_str(&format!(
            "\n[compress]\nprune_fraction={}\nbits_decoder={}\nbits_embed={}\n",
            self.compress.prune_fraction, self.compress.bits_decoder, self.compress.bits_embed
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_canonically() {
        let mut s = Settings::default();
        s.model.c0 = 24;
        s.video.kind = SynthKind::Moving;
        s.train.task = Task::Inpainting;
        s.train.mask = Some(MaskKind::Fixed5);
        s.compress.bits_decoder = 16;
        let text = s.to_text();
        assert_eq!(Settings::parse(&text).unwrap(), s);
    }

    #[test]
    fn rejects_unknown_sections_and_keys() {
        assert!(Settings::parse("[nope]\n").is_err());
        assert!(Settings::parse("[video]\nnope=1\n").is_err());
        let err = Settings::parse("[model]\nnot_a_field=1\n").unwrap_err();
        assert!(err.to_string().contains("not_a_field"), "{err}");
        assert!(Settings::parse("c0=8\n").is_err()); // key before section
        assert!(Settings::parse("[train]\nepochs\n").is_err()); // no '='
    }

    #[test]
    fn comments_and_spacing_are_tolerated() {
        let s = Settings::parse(
            "# a comment\n\n[train]\n  epochs = 17 \n# more\n[model]\nc0=48\n",
        )
        .unwrap();
        assert_eq!(s.train.epochs, 17);
        assert_eq!(s.model.c0, 48);
    }

    #[test]
    fn mask_none_round_trips() {
        let s = Settings::parse("[train]\nmask=none\n").unwrap();
        assert_eq!(s.train.mask, None);
        let s2 = Settings::parse("[train]\nmask=random10\nmask_seed=4\n").unwrap();
        assert_eq!(s2.train.mask, Some(MaskKind::Random10));
    }
}
