//! Run configuration: a flat key=value format with byte-stable canonical
//! echo, profile-derived defaults, and strict unknown-key rejection.
//!
//! Precedence, lowest to highest: profile defaults, the TEXTMATCH_SEED
//! environment variable (seed only), a `--config` file, command-line flags.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::datagen::{GenSpec, NegMode, ProfileKind};
use crate::embed::EncoderConfig;
use crate::error::{Result, TmError};
use crate::eval::Criterion;
use crate::matcher::{ModelConfig, ModelKind, Reduction};
use crate::train::TrainConfig;

/// Structural encoder preset. Pool schedules are fixed per preset so that
/// every extent divides exactly; feature dimensions stay configurable.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderPreset {
    /// 8×16 input, 8 slices. For gradient checks.
    Toy,
    /// 16×64 input, 32 slices. Default for generated datasets.
    Desk,
    /// 32×256 input, 64 slices. For word images.
    Wide,
    /// 32×256 input, 64 slices, full-width features.
    Paper,
}

impl EncoderPreset {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(EncoderPreset::Toy),
            "desk" => Ok(EncoderPreset::Desk),
            "wide" => Ok(EncoderPreset::Wide),
            "paper" => Ok(EncoderPreset::Paper),
            other => Err(TmError::Input(format!(
                "unknown encoder preset {other:?} (expected toy, desk, wide, paper)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EncoderPreset::Toy => "toy",
            EncoderPreset::Desk => "desk",
            EncoderPreset::Wide => "wide",
            EncoderPreset::Paper => "paper",
        }
    }

    /// Default (d_i, d_t, d_att) for the preset.
    pub fn default_dims(&self) -> (usize, usize, usize) {
        match self {
            EncoderPreset::Toy => (16, 16, 8),
            EncoderPreset::Desk => (64, 64, 32),
            EncoderPreset::Wide => (128, 128, 64),
            EncoderPreset::Paper => (512, 512, 512),
        }
    }

    pub fn encoder_config(&self, d_i: usize) -> EncoderConfig {
        match self {
            EncoderPreset::Toy => EncoderConfig {
                d_i,
                ..EncoderConfig::toy()
            },
            EncoderPreset::Desk => EncoderConfig {
                d_i,
                ..EncoderConfig::desk()
            },
            EncoderPreset::Wide => EncoderConfig {
                image_h: 32,
                image_w: 256,
                channels: vec![8, 16, 32],
                pools: vec![(2, 2), (4, 2), (4, 1)],
                d_i,
            },
            EncoderPreset::Paper => EncoderConfig {
                d_i,
                ..EncoderConfig::paper_scale()
            },
        }
    }
}

/// Everything a reproducible run needs. The canonical echo of this struct
/// is written beside every artifact and embedded in checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub profile: ProfileKind,
    pub model: ModelKind,
    pub encoder: EncoderPreset,
    pub s_t: usize,
    pub d_t: usize,
    pub d_att: usize,
    pub d_i: usize,
    pub reduction: Reduction,
    pub margin: f64,
    pub alpha: f64,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub pairs: usize,
    pub neg_mode: NegMode,
    pub criterion: Criterion,
    pub iam_words: Option<PathBuf>,
    pub iam_images: Option<PathBuf>,
}

impl RunConfig {
    /// Profile defaults; the seed may come from TEXTMATCH_SEED.
    pub fn defaults(profile: ProfileKind) -> Self {
        let encoder = match profile {
            ProfileKind::Iam => EncoderPreset::Wide,
            _ => EncoderPreset::Desk,
        };
        let (d_i, d_t, d_att) = encoder.default_dims();
        let seed = std::env::var("TEXTMATCH_SEED")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(0);
        RunConfig {
            profile,
            model: ModelKind::CrossAttention,
            encoder,
            s_t: profile.default_s_t(),
            d_t,
            d_att,
            d_i,
            reduction: Reduction::Mean,
            margin: 1.0,
            alpha: 1.0,
            lr: 0.005,
            momentum: 0.9,
            batch_size: 8,
            max_epochs: 15,
            seed,
            pairs: 1000,
            neg_mode: NegMode::Random,
            criterion: Criterion::F1,
            iam_words: None,
            iam_images: None,
        }
    }

    /// Canonical key=value form; `parse` of this string reproduces the
    /// config byte-identically.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "profile={}", self.profile.name());
        let _ = writeln!(out, "model={}", self.model.name());
        let _ = writeln!(out, "encoder={}", self.encoder.name());
        let _ = writeln!(out, "s_t={}", self.s_t);
        let _ = writeln!(out, "d_t={}", self.d_t);
        let _ = writeln!(out, "d_att={}", self.d_att);
        let _ = writeln!(out, "d_i={}", self.d_i);
        let _ = writeln!(out, "reduction={}", self.reduction.name());
        let _ = writeln!(out, "margin={}", self.margin);
        let _ = writeln!(out, "alpha={}", self.alpha);
        let _ = writeln!(out, "lr={}", self.lr);
        let _ = writeln!(out, "momentum={}", self.momentum);
        let _ = writeln!(out, "batch_size={}", self.batch_size);
        let _ = writeln!(out, "max_epochs={}", self.max_epochs);
        let _ = writeln!(out, "seed={}", self.seed);
        let _ = writeln!(out, "pairs={}", self.pairs);
        let _ = writeln!(out, "neg_mode={}", self.neg_mode.name());
        let _ = writeln!(out, "criterion={}", self.criterion.name());
        if let Some(p) = &self.iam_words {
            let _ = writeln!(out, "iam_words={}", p.display());
        }
        if let Some(p) = &self.iam_images {
            let _ = writeln!(out, "iam_images={}", p.display());
        }
        out
    }

    /// Applies key=value lines ('#' comments allowed) on top of `self`.
    /// Unknown keys are rejected.
    pub fn apply(&mut self, content: &str, origin: &str) -> Result<()> {
        for (i, raw) in content.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| TmError::Input(format!(
                "{origin}: line {}: expected key=value, got {line:?}",
                i + 1
            )))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| TmError::Input(format!("{origin}: line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn parse(content: &str, origin: &str) -> Result<Self> {
        // The profile key steers the defaults, so find it first.
        let mut profile = ProfileKind::Date;
        for line in content.lines() {
            if let Some((k, v)) = line.trim().split_once('=') {
                if k.trim() == "profile" {
                    profile = ProfileKind::parse(v.trim())?;
                }
            }
        }
        let mut config = RunConfig::defaults(profile);
        config.apply(content, origin)?;
        Ok(config)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let int = |v: &str| -> Result<usize> {
            v.parse()
                .map_err(|_| TmError::Input(format!("bad integer {v:?}")))
        };
        let float = |v: &str| -> Result<f64> {
            v.parse()
                .map_err(|_| TmError::Input(format!("bad number {v:?}")))
        };
        match key {
            "profile" => self.profile = ProfileKind::parse(value)?,
            "model" => self.model = ModelKind::parse(value)?,
            "encoder" => self.encoder = EncoderPreset::parse(value)?,
            "s_t" => self.s_t = int(value)?,
            "d_t" => self.d_t = int(value)?,
            "d_att" => self.d_att = int(value)?,
            "d_i" => self.d_i = int(value)?,
            "s_i" => {
                let claimed = int(value)?;
                let actual = self.encoder.encoder_config(self.d_i).s_i();
                if claimed != actual {
                    return Err(TmError::Input(format!(
                        "s_i={claimed} conflicts with encoder preset {} (s_i={actual})",
                        self.encoder.name()
                    )));
                }
            }
            "reduction" => self.reduction = Reduction::parse(value)?,
            "margin" => self.margin = float(value)?,
            "alpha" => self.alpha = float(value)?,
            "lr" => self.lr = float(value)?,
            "momentum" => self.momentum = float(value)?,
            "batch_size" => self.batch_size = int(value)?,
            "max_epochs" => self.max_epochs = int(value)?,
            "seed" => {
                self.seed = value
                    .parse()
                    .map_err(|_| TmError::Input(format!("bad seed {value:?}")))?
            }
            "pairs" => self.pairs = int(value)?,
            "neg_mode" => self.neg_mode = NegMode::parse(value)?,
            "criterion" => self.criterion = Criterion::parse(value)?,
            "iam_words" => self.iam_words = Some(PathBuf::from(value)),
            "iam_images" => self.iam_images = Some(PathBuf::from(value)),
            other => {
                return Err(TmError::Input(format!("unknown configuration key {other:?}")))
            }
        }
        Ok(())
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let config = ModelConfig {
            alphabet: self.profile.alphabet(),
            s_t: self.s_t,
            d_t: self.d_t,
            d_att: self.d_att,
            encoder: self.encoder.encoder_config(self.d_i),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            margin: self.margin,
            alpha: self.alpha,
            learning_rate: self.lr,
            momentum: self.momentum,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            seed: self.seed,
            reduction: self.reduction,
        }
    }

    pub fn gen_spec(&self) -> GenSpec {
        GenSpec {
            profile: self.profile,
            pairs: self.pairs,
            neg_mode: self.neg_mode,
            seed: self.seed,
            iam_words: self.iam_words.clone(),
            iam_images: self.iam_images.clone(),
        }
    }

    /// Writes the canonical echo beside an artifact (`<artifact>.config`).
    pub fn write_echo(&self, artifact: &Path) -> Result<PathBuf> {
        let mut name = artifact.file_name().unwrap_or_default().to_os_string();
        name.push(".config");
        let path = artifact.with_file_name(name);
        std::fs::write(&path, self.canonical())?;
        Ok(path)
    }
}
