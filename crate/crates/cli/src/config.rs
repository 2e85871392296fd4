//! Experiment config: flat `key = value` lines grouped under `[section]`
//! headers. Relative paths are resolved against the config file's directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use spectral_vae_core::classifier::ClassifierConfig;
use spectral_vae_core::features::PatchConfig;
use spectral_vae_core::vae::TrainConfig;
use spectral_vae_core::{StftConfig, VaeConfig, Window};

pub const SEED_ENV: &str = "SPECTRAL_VAE_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataSection,
    pub stft: StftSection,
    pub patch: PatchSection,
    pub vae: VaeSection,
    pub classifier: ClassifierSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Corpus manifest; patches are extracted in-process when `patches` is unset.
    pub manifest: Option<PathBuf>,
    /// Directory holding `train.spat` / `test.spat` from `prepare-patches`.
    pub patches: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftSection {
    pub win_length: usize,
    pub hop_length: usize,
    pub n_fft: usize,
    pub window: Window,
}

impl Default for StftSection {
    fn default() -> Self {
        let s = StftConfig::vae();
        Self {
            win_length: s.win_length,
            hop_length: s.hop_length,
            n_fft: s.n_fft,
            window: s.window,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchSection {
    pub frames: usize,
    pub stride: usize,
    pub percentile: f64,
    pub max_train: Option<usize>,
    pub max_test: Option<usize>,
}

impl Default for PatchSection {
    fn default() -> Self {
        let p = PatchConfig::default();
        Self {
            frames: p.patch_frames,
            stride: p.stride_frames,
            percentile: p.percentile,
            max_train: None,
            max_test: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeSection {
    pub latent_dim: usize,
    pub channels: [usize; 2],
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for VaeSection {
    fn default() -> Self {
        let m = VaeConfig::patch();
        let t = TrainConfig::default();
        Self {
            latent_dim: m.latent_dim,
            channels: m.channels,
            kernel: m.kernel,
            stride: m.stride,
            pad: m.pad,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: usize,
    pub dropout: f64,
    pub standardize: bool,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        let c = ClassifierConfig::default();
        Self {
            epochs: c.epochs,
            batch_size: c.batch_size,
            learning_rate: c.learning_rate,
            hidden: c.hidden,
            dropout: c.dropout,
            standardize: c.standardize,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataSection::default(),
            stft: StftSection::default(),
            patch: PatchSection::default(),
            vae: VaeSection::default(),
            classifier: ClassifierSection::default(),
        }
    }
}

/// One-line description of a parse failure, pointing at the offending line.
fn describe(text: &str, err: &toml::de::Error) -> String {
    let msg = err.message().trim().replace('\n', " ");
    match err.span() {
        Some(span) => {
            let line_no = text[..span.start.min(text.len())].matches('\n').count() + 1;
            let line = text.lines().nth(line_no - 1).unwrap_or("").trim();
            format!("line {line_no} `{line}`: {msg}")
        }
        None => msg,
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| anyhow::anyhow!("{}", describe(text, &e)))
    }

    /// Parse `path`, resolve relative paths, then apply the seed override.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::parse(&text).with_context(|| format!("config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data.manifest, &mut cfg.data.patches, &mut cfg.data.out]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.apply_env()?;
        Ok(cfg)
    }

    /// Defaults plus the seed override, for commands run without `--config`.
    pub fn from_env() -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_env()?;
        Ok(cfg)
    }

    fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .with_context(|| format!("{SEED_ENV}={v:?} is not an unsigned integer"))?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn stft(&self) -> Result<StftConfig> {
        let s = &self.stft;
        StftConfig::new(s.win_length, s.hop_length, s.n_fft, s.window).context("[stft]")
    }

    pub fn patch_config(&self) -> Result<PatchConfig> {
        let p = &self.patch;
        if p.frames == 0 || p.stride == 0 {
            bail!("[patch] frames and stride must be positive");
        }
        Ok(PatchConfig {
            stft: self.stft()?,
            patch_frames: p.frames,
            stride_frames: p.stride,
            percentile: p.percentile,
            max_train: p.max_train,
            max_test: p.max_test,
            seed: self.seed,
        })
    }

    pub fn vae_config(&self) -> Result<VaeConfig> {
        let v = &self.vae;
        let cfg = VaeConfig {
            frames: self.patch.frames,
            bins: self.stft()?.n_fft / 2,
            latent_dim: v.latent_dim,
            channels: v.channels,
            kernel: v.kernel,
            stride: v.stride,
            pad: v.pad,
        };
        cfg.validate().context("[vae]")?;
        Ok(cfg)
    }

    pub fn vae_train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.vae.epochs,
            batch_size: self.vae.batch_size,
            learning_rate: self.vae.learning_rate,
            seed: self.seed,
        }
    }

    pub fn classifier(&self) -> ClassifierConfig {
        let c = &self.classifier;
        ClassifierConfig {
            epochs: c.epochs,
            batch_size: c.batch_size,
            learning_rate: c.learning_rate,
            seed: self.seed,
            hidden: c.hidden,
            dropout: c.dropout,
            standardize: c.standardize,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(ExperimentConfig::parse("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn sections_and_flat_keys() {
        let cfg = ExperimentConfig::parse("seed = 7\n[vae]\nepochs = 3\nlatent_dim = 5\n[stft]\nwindow = \"rectangular\"\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.vae.epochs, 3);
        assert_eq!(cfg.vae_config().unwrap().latent_dim, 5);
        assert_eq!(cfg.stft.window, Window::Rectangular);
        assert_eq!(cfg.vae.batch_size, 32);
    }

    #[test]
    fn errors_name_the_field() {
        let err = ExperimentConfig::parse("[vae]\nepochs = 2\nlaten_dim = 4\n").unwrap_err().to_string();
        assert!(err.contains("laten_dim"), "{err}");
        assert!(!err.contains('\n'));
        let err = ExperimentConfig::parse("[vae]\nepochs = \"many\"\n").unwrap_err().to_string();
        assert!(err.contains("epochs"), "{err}");
    }

    #[test]
    fn effective_config_roundtrips() {
        let mut cfg = ExperimentConfig::default();
        cfg.data.manifest = Some("m.tsv".into());
        cfg.patch.max_train = Some(2000);
        let text = cfg.to_text().unwrap();
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn default_shapes_match_the_patch_model() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.vae_config().unwrap(), VaeConfig::patch());
        assert_eq!(cfg.stft().unwrap(), StftConfig::vae());
    }
}
