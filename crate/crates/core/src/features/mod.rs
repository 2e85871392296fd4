//! Dataset construction: spectrogram normalization and patching for VAE
//! training, fixed-length clip featurization (VAE latents or MFCCs), and the
//! manifest / feature-file formats.

mod format;
mod manifest;

use std::path::{Path, PathBuf};

use ndarray::{s, Array2};
use rayon::prelude::*;
use thiserror::Error;

use crate::audio::{load_wav, AudioBuffer, AudioError, SAMPLE_RATE};
use crate::dsp::{make_mel_filterbank, mfcc, spectrogram, DspError, MelFilterbank, Spectrogram, StftConfig};
use crate::nn::Tensor;
use crate::rng::Rng;
use crate::vae::{VaeError, VaeModel};

pub use format::{
    decode_feature_file, decode_patch_set, encode_feature_file, encode_patch_set, read_feature_file,
    read_patch_set, write_feature_file, write_patch_set, FeatureFile, FeatureRecord, PatchSet,
    FEATURE_MAGIC, FEATURE_VERSION, PATCH_MAGIC, PATCH_VERSION,
};
pub use manifest::{Manifest, ManifestEntry, Split, DEFAULT_CLASSES};

/// Reference power inside the log compression `ln(1 + p / LOG_REF)`.
pub const LOG_REF: f64 = 1e-10;
/// Clips are padded to this many samples (1 s).
pub const CLIP_SAMPLES: usize = 16_000;
/// Step between consecutive VAE windows of a clip, in frames (0.1 s at a 50-sample hop).
pub const VAE_WINDOW_STRIDE: usize = 32;
pub const MFCC_FILTERS: usize = 26;
pub const MFCC_COEFFS: usize = 13;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("normalization constant must be positive and finite, got {0}")]
    InvalidConstant(f64),
    #[error("spectrogram has {frames} frames, need at least {needed}")]
    TooFewFrames { frames: usize, needed: usize },
    #[error("clip has {samples} samples, longer than {max}")]
    ClipTooLong { samples: usize, max: usize },
    #[error("missing audio files: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingFile(Vec<PathBuf>),
    #[error("{}: feature dimension {found}, expected {expected}", path.display())]
    DimensionDrift {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error("invalid patch configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("unsupported file version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated file")]
    Truncated,
    #[error("{}: {source}", path.display())]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<FeatureError>,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Vae(#[from] VaeError),
}

impl FeatureError {
    fn in_file(self, path: &Path) -> Self {
        FeatureError::InFile {
            path: path.to_path_buf(),
            source: Box::new(self),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Vae,
    Mfcc,
}

impl FeatureKind {
    pub fn code(self) -> u8 {
        match self {
            FeatureKind::Vae => 0,
            FeatureKind::Mfcc => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(FeatureKind::Vae),
            1 => Some(FeatureKind::Mfcc),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Vae => "vae",
            FeatureKind::Mfcc => "mfcc",
        }
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vae" => Ok(FeatureKind::Vae),
            "mfcc" => Ok(FeatureKind::Mfcc),
            other => Err(format!("feature kind must be `vae` or `mfcc`, got `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchSource {
    pub file_id: usize,
    pub start_frame: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    /// frames × bins
    pub data: Array2<f64>,
    pub source: PatchSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f32>,
    pub kind: FeatureKind,
    pub label: Option<usize>,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

fn log_compress(power: f64) -> f64 {
    (power / LOG_REF).ln_1p()
}

/// `ln(1 + spec / 1e-10) / c`, clipped to `[0, 1]`.
pub fn normalize_spectrogram(spec: &Spectrogram, c: f64) -> Result<Spectrogram, FeatureError> {
    if !(c.is_finite() && c > 0.0) {
        return Err(FeatureError::InvalidConstant(c));
    }
    Ok(Spectrogram {
        data: spec.data.mapv(|p| (log_compress(p) / c).clamp(0.0, 1.0)),
        ..spec.clone()
    })
}

/// Linearly interpolated `pct`-th percentile of `values` (sorted in place).
pub fn percentile(values: &mut [f64], pct: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=100.0).contains(&pct) {
        return None;
    }
    values.sort_unstable_by(f64::total_cmp);
    let rank = pct / 100.0 * (values.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    Some(values[lo] + (values[hi] - values[lo]) * (rank - lo as f64))
}

/// The `pct`-th percentile of the log-compressed values of all `specs`.
pub fn normalization_constant<'a>(
    specs: impl IntoIterator<Item = &'a Spectrogram>,
    pct: f64,
) -> Result<f64, FeatureError> {
    let mut values: Vec<f64> = specs
        .into_iter()
        .flat_map(|s| s.data.iter().map(|&p| log_compress(p)))
        .collect();
    let c = percentile(&mut values, pct).ok_or(FeatureError::InvalidConstant(f64::NAN))?;
    if !(c.is_finite() && c > 0.0) {
        return Err(FeatureError::InvalidConstant(c));
    }
    Ok(c)
}

/// Patch `k` covers frames `[k * stride, k * stride + patch_frames)`.
pub fn extract_patches(
    spec: &Spectrogram,
    file_id: usize,
    patch_frames: usize,
    stride_frames: usize,
) -> Result<Vec<Patch>, FeatureError> {
    if patch_frames == 0 || stride_frames == 0 {
        return Err(FeatureError::InvalidConfig("patch length and stride must be positive".into()));
    }
    let frames = spec.frames();
    if frames < patch_frames {
        return Err(FeatureError::TooFewFrames {
            frames,
            needed: patch_frames,
        });
    }
    let count = 1 + (frames - patch_frames) / stride_frames;
    Ok((0..count)
        .map(|k| {
            let start = k * stride_frames;
            Patch {
                data: spec.data.slice(s![start..start + patch_frames, ..]).to_owned(),
                source: PatchSource {
                    file_id,
                    start_frame: start,
                },
            }
        })
        .collect())
}

/// Zero-pad to `len` samples; clips longer than one second are rejected.
pub fn pad_clip(clip: &AudioBuffer, len: usize) -> Result<AudioBuffer, FeatureError> {
    if clip.sample_rate != SAMPLE_RATE {
        return Err(AudioError::UnsupportedFormat {
            field: "sample rate",
            found: clip.sample_rate,
            expected: SAMPLE_RATE,
        }
        .into());
    }
    if clip.len() > CLIP_SAMPLES {
        return Err(FeatureError::ClipTooLong {
            samples: clip.len(),
            max: CLIP_SAMPLES,
        });
    }
    let mut samples = clip.samples.clone();
    samples.resize(len.max(samples.len()), 0.0);
    Ok(AudioBuffer::new(samples, clip.sample_rate))
}

/// Frames per one-second clip under `stft` (one per hop).
pub fn clip_frames(stft: &StftConfig) -> usize {
    CLIP_SAMPLES / stft.hop_length
}

/// Number of model windows per clip.
pub fn vae_windows(model: &VaeModel) -> usize {
    let frames = clip_frames(&model.stft);
    let win = model.config().frames;
    if frames < win {
        0
    } else {
        1 + (frames - win) / VAE_WINDOW_STRIDE
    }
}

pub fn vae_feature_dim(model: &VaeModel) -> usize {
    vae_windows(model) * model.latent_dim()
}

/// Normalized spectrogram windows of a one-second clip, as seen by the model.
pub fn clip_windows(clip: &AudioBuffer, model: &VaeModel) -> Result<Vec<Array2<f64>>, FeatureError> {
    let frames = clip_frames(&model.stft);
    let padded = pad_clip(clip, CLIP_SAMPLES)?;
    let padded = pad_clip(&padded, model.stft.samples_for_frames(frames))?;
    let spec = normalize_spectrogram(&spectrogram(&padded, &model.stft)?, model.norm_scale)?;
    if spec.bins() != model.config().bins {
        return Err(FeatureError::InvalidConfig(format!(
            "spectrogram has {} bins, model expects {}",
            spec.bins(),
            model.config().bins
        )));
    }
    Ok(extract_patches(&spec, 0, model.config().frames, VAE_WINDOW_STRIDE)?
        .into_iter()
        .map(|p| p.data)
        .collect())
}

/// Posterior means of the clip's windows, concatenated.
pub fn featurize_vae(clip: &AudioBuffer, model: &VaeModel) -> Result<FeatureVector, FeatureError> {
    let windows = clip_windows(clip, model)?;
    let x = model.batch_tensor(&windows)?;
    let (mean, _) = model.encode_batch(&x)?;
    Ok(FeatureVector {
        values: mean.data().iter().map(|&v| v as f32).collect(),
        kind: FeatureKind::Vae,
        label: None,
    })
}

/// MFCC settings: 25 ms / 10 ms Hann frames, 512-point FFT, 26 mel filters
/// over 0–8 kHz, 13 coefficients.
#[derive(Debug, Clone)]
pub struct MfccPipeline {
    pub stft: StftConfig,
    pub filterbank: MelFilterbank,
    pub n_coeffs: usize,
}

impl MfccPipeline {
    pub fn new() -> Self {
        let stft = StftConfig::mfcc();
        let filterbank = make_mel_filterbank(
            MFCC_FILTERS,
            stft.n_fft,
            SAMPLE_RATE,
            0.0,
            f64::from(SAMPLE_RATE) / 2.0,
        )
        .expect("default filterbank is valid");
        Self {
            stft,
            filterbank,
            n_coeffs: MFCC_COEFFS,
        }
    }

    pub fn dim(&self) -> usize {
        (1 + (CLIP_SAMPLES - self.stft.win_length) / self.stft.hop_length) * self.n_coeffs
    }

    pub fn featurize(&self, clip: &AudioBuffer) -> Result<FeatureVector, FeatureError> {
        let padded = pad_clip(clip, CLIP_SAMPLES)?;
        let coeffs = mfcc(&padded, &self.stft, &self.filterbank, self.n_coeffs)?;
        Ok(FeatureVector {
            values: coeffs.iter().map(|&v| v as f32).collect(),
            kind: FeatureKind::Mfcc,
            label: None,
        })
    }
}

impl Default for MfccPipeline {
    fn default() -> Self {
        Self::new()
    }
}

/// 98 frames × 13 coefficients, flattened frame-major.
pub fn featurize_mfcc(clip: &AudioBuffer) -> Result<FeatureVector, FeatureError> {
    MfccPipeline::new().featurize(clip)
}

/// A clip → fixed-length vector mapping.
#[derive(Debug, Clone)]
pub enum Extractor<'a> {
    Vae(&'a VaeModel),
    Mfcc(MfccPipeline),
}

impl Extractor<'_> {
    pub fn kind(&self) -> FeatureKind {
        match self {
            Extractor::Vae(_) => FeatureKind::Vae,
            Extractor::Mfcc(_) => FeatureKind::Mfcc,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Extractor::Vae(m) => vae_feature_dim(m),
            Extractor::Mfcc(p) => p.dim(),
        }
    }

    pub fn featurize(&self, clip: &AudioBuffer) -> Result<FeatureVector, FeatureError> {
        match self {
            Extractor::Vae(m) => featurize_vae(clip, m),
            Extractor::Mfcc(p) => p.featurize(clip),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildSummary {
    pub records: usize,
    pub train: usize,
    pub test: usize,
    pub dim: usize,
    pub bytes: usize,
}

fn check_files(manifest: &Manifest) -> Result<(), FeatureError> {
    let missing: Vec<PathBuf> = manifest
        .entries
        .iter()
        .map(|e| manifest.resolve(e))
        .filter(|p| !p.is_file())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(FeatureError::MissingFile(missing))
    }
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T, FeatureError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| FeatureError::InvalidConfig(format!("worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Featurize every manifest entry, in manifest order, using `jobs` workers.
pub fn featurize_manifest(
    manifest: &Manifest,
    extractor: &Extractor<'_>,
    jobs: usize,
) -> Result<FeatureFile, FeatureError> {
    check_files(manifest)?;
    let expected = extractor.dim();
    let results: Vec<Result<FeatureRecord, FeatureError>> = with_pool(jobs, || {
        manifest
            .entries
            .par_iter()
            .map(|entry| {
                let path = manifest.resolve(entry);
                let clip = load_wav(&path).map_err(|e| FeatureError::from(e).in_file(&path))?;
                let v = extractor.featurize(&clip).map_err(|e| e.in_file(&path))?;
                if v.dim() != expected {
                    return Err(FeatureError::DimensionDrift {
                        path,
                        expected,
                        found: v.dim(),
                    });
                }
                Ok(FeatureRecord {
                    label: entry.label as u32,
                    values: v.values,
                })
            })
            .collect()
    })?;
    Ok(FeatureFile {
        kind: extractor.kind(),
        dim: expected,
        num_classes: manifest.classes.len(),
        records: results.into_iter().collect::<Result<_, _>>()?,
    })
}

/// [`featurize_manifest`] then write the result to `out`.
pub fn build_feature_file(
    manifest: &Manifest,
    extractor: &Extractor<'_>,
    out: &Path,
    jobs: usize,
) -> Result<BuildSummary, FeatureError> {
    let file = featurize_manifest(manifest, extractor, jobs)?;
    write_feature_file(out, &file)?;
    Ok(BuildSummary {
        records: file.records.len(),
        train: manifest.count(Split::Train),
        test: manifest.count(Split::Test),
        dim: file.dim,
        bytes: file.byte_len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchConfig {
    pub stft: StftConfig,
    pub patch_frames: usize,
    pub stride_frames: usize,
    /// Percentile of training log-power used as the normalization constant.
    pub percentile: f64,
    /// Keep at most this many patches per split (seeded uniform subset, original order).
    pub max_train: Option<usize>,
    pub max_test: Option<usize>,
    pub seed: u64,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            stft: StftConfig::vae(),
            patch_frames: 8,
            stride_frames: 3,
            percentile: 99.9,
            max_train: None,
            max_test: None,
            seed: 0,
        }
    }
}

fn subsample(mut patches: Vec<Patch>, max: Option<usize>, rng: &mut Rng) -> Vec<Patch> {
    let Some(max) = max.filter(|&m| m < patches.len()) else {
        return patches;
    };
    let mut idx: Vec<usize> = (0..patches.len()).collect();
    rng.shuffle(&mut idx);
    idx.truncate(max);
    idx.sort_unstable();
    let mut keep = vec![false; patches.len()];
    idx.iter().for_each(|&i| keep[i] = true);
    let mut k = keep.into_iter();
    patches.retain(|_| k.next().unwrap());
    patches
}

/// Spectrogram patches of every manifest file, normalized with a constant
/// estimated on the training split. `file_id` is the manifest line index.
pub fn prepare_patches(manifest: &Manifest, cfg: &PatchConfig) -> Result<(PatchSet, PatchSet), FeatureError> {
    check_files(manifest)?;
    cfg.stft.validate()?;
    let specs: Vec<(Split, Spectrogram)> = manifest
        .entries
        .iter()
        .map(|e| {
            let path = manifest.resolve(e);
            let audio = load_wav(&path).map_err(|err| FeatureError::from(err).in_file(&path))?;
            let spec = spectrogram(&audio, &cfg.stft).map_err(|err| FeatureError::from(err).in_file(&path))?;
            Ok((e.split, spec))
        })
        .collect::<Result<_, FeatureError>>()?;
    let c = normalization_constant(
        specs.iter().filter(|(s, _)| *s == Split::Train).map(|(_, spec)| spec),
        cfg.percentile,
    )?;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (file_id, (split, spec)) in specs.iter().enumerate() {
        let norm = normalize_spectrogram(spec, c)?;
        let patches = extract_patches(&norm, file_id, cfg.patch_frames, cfg.stride_frames)
            .map_err(|e| e.in_file(&manifest.resolve(&manifest.entries[file_id])))?;
        match split {
            Split::Train => train.extend(patches),
            Split::Test => test.extend(patches),
        }
    }
    let mut rng = Rng::for_stage(cfg.seed, "patch-select");
    let bins = cfg.stft.n_fft / 2;
    let set = |patches| PatchSet {
        frames: cfg.patch_frames,
        bins,
        norm_scale: c,
        patches,
    };
    let train = subsample(train, cfg.max_train, &mut rng);
    let test = subsample(test, cfg.max_test, &mut rng);
    Ok((set(train), set(test)))
}

/// Patch data as a `[B, 1, F, W]` tensor.
pub fn patches_tensor(patches: &[Patch]) -> Option<Tensor> {
    let (f, w) = patches.first()?.data.dim();
    let data = patches.iter().flat_map(|p| p.data.iter().copied()).collect();
    Tensor::from_vec(&[patches.len(), 1, f, w], data).ok()
}
