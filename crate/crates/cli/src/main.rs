//! `spectral-vae`: spectrograms, VAE training and feature comparison from the
//! command line.

mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use ndarray::{concatenate, s, Array2, Axis};
use spectral_vae_core::audio::{encode_csv, encode_pgm};
use spectral_vae_core::classifier::{compare_report, train_mlp, EvalReport};
use spectral_vae_core::dsp::{mfcc, spectrogram};
use spectral_vae_core::features::{
    build_feature_file, extract_patches, normalize_spectrogram, prepare_patches, read_feature_file, read_patch_set,
    write_patch_set, Extractor, FeatureKind, Manifest, MfccPipeline, PatchSet, Split, LOG_REF,
};
use spectral_vae_core::nn::{load_checkpoint, save_checkpoint};
use spectral_vae_core::vae::{train_vae, PatchDataset};
use spectral_vae_core::{load_wav, VaeModel};

use config::ExperimentConfig;
use output::OutputGuard;

#[derive(Debug, Parser)]
#[command(name = "spectral-vae", version, about = "Spectrogram VAE features for spoken-command classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Log-power spectrogram of a WAV file (rows: frequency, highest first).
    Spectrogram {
        wav: PathBuf,
        /// Output file; `.pgm` or `.csv`.
        #[arg(long)]
        out: PathBuf,
        /// Optional config whose [stft] section replaces the VAE defaults.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// MFCC matrix of a WAV file as CSV (one row per frame).
    Mfcc {
        wav: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Normalized training patches from a manifest: `<out>/train.spat`, `<out>/test.spat`.
    PreparePatches {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the VAE; writes `model.ckpt`, `loss.csv`, `config.toml`.
    TrainVae {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `[data] out`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Original and reconstructed patch starting at frame `k`, side by side.
    Reconstruct {
        ckpt: PathBuf,
        wav: PathBuf,
        #[arg(long)]
        frame: usize,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Decode 4 evenly spaced values of one latent component (others zero).
    Sample {
        ckpt: PathBuf,
        /// Zero-based latent index.
        #[arg(long)]
        component: usize,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
        lo: f64,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        hi: f64,
    },
    /// Feature file (SFEA) for the clips of a manifest.
    Featurize {
        manifest: PathBuf,
        #[arg(long, value_enum)]
        kind: KindArg,
        /// VAE checkpoint; required for `--kind vae`.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Which manifest split to featurize.
        #[arg(long, value_enum, default_value = "all")]
        split: SplitArg,
    },
    /// Train the MLP; writes `report.json`, `loss.csv`, `config.toml`.
    TrainClassifier {
        train: PathBuf,
        test: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Side-by-side table of two classifier reports.
    Compare {
        report_vae: PathBuf,
        report_mfcc: PathBuf,
        /// Also write `comparison.txt` and `comparison.csv` here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    Vae,
    Mfcc,
}

impl From<KindArg> for FeatureKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Vae => FeatureKind::Vae,
            KindArg::Mfcc => FeatureKind::Mfcc,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("{}", first.trim());
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Spectrogram { wav, out, config } => cmd_spectrogram(&wav, &out, config.as_deref()),
        Command::Mfcc { wav, out } => cmd_mfcc(&wav, &out),
        Command::PreparePatches { manifest, out, config } => cmd_prepare(&manifest, &out, config.as_deref()),
        Command::TrainVae { config, out } => cmd_train_vae(&config, out),
        Command::Reconstruct { ckpt, wav, frame, out } => cmd_reconstruct(&ckpt, &wav, frame, &out),
        Command::Sample {
            ckpt,
            component,
            out,
            lo,
            hi,
        } => cmd_sample(&ckpt, component, &out, lo, hi),
        Command::Featurize {
            manifest,
            kind,
            ckpt,
            out,
            jobs,
            split,
        } => cmd_featurize(&manifest, kind.into(), ckpt.as_deref(), &out, jobs, split),
        Command::TrainClassifier {
            train,
            test,
            config,
            out,
        } => cmd_train_classifier(&train, &test, config.as_deref(), &out),
        Command::Compare {
            report_vae,
            report_mfcc,
            out,
        } => cmd_compare(&report_vae, &report_mfcc, out.as_deref()),
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => ExperimentConfig::from_env(),
    }
}

fn load_model(path: &Path) -> Result<VaeModel> {
    let tensors = load_checkpoint(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    VaeModel::from_checkpoint(&tensors).with_context(|| format!("checkpoint {}", path.display()))
}

/// `[frames, bins]` → image rows = bins (highest first), columns = frames.
fn as_image(m: &Array2<f64>) -> Array2<f64> {
    m.t().slice(s![..;-1, ..]).to_owned()
}

fn cmd_spectrogram(wav: &Path, out: &Path, config: Option<&Path>) -> Result<()> {
    let stft = load_config(config)?.stft()?;
    let audio = load_wav(wav).with_context(|| wav.display().to_string())?;
    let spec = spectrogram(&audio, &stft)?;
    let logp = spec.data.mapv(|p| (p / LOG_REF).ln_1p());
    let bytes = match out.extension().and_then(|e| e.to_str()) {
        Some("pgm") => encode_pgm(&as_image(&logp))?,
        Some("csv") => encode_csv(&as_image(&logp))?.into_bytes(),
        _ => bail!("--out must end in .pgm or .csv: {}", out.display()),
    };
    let mut guard = OutputGuard::new();
    guard.write(out, bytes)?;
    guard.commit();
    Ok(())
}

fn cmd_mfcc(wav: &Path, out: &Path) -> Result<()> {
    let audio = load_wav(wav).with_context(|| wav.display().to_string())?;
    let p = MfccPipeline::new();
    let m = mfcc(&audio, &p.stft, &p.filterbank, p.n_coeffs)?;
    let mut guard = OutputGuard::new();
    guard.write(out, encode_csv(&m)?)?;
    guard.commit();
    Ok(())
}

fn patch_sets(manifest: &Path, cfg: &ExperimentConfig) -> Result<(PatchSet, PatchSet)> {
    let m = Manifest::load(manifest)?;
    Ok(prepare_patches(&m, &cfg.patch_config()?)?)
}

fn cmd_prepare(manifest: &Path, out: &Path, config: Option<&Path>) -> Result<()> {
    let mut cfg = load_config(config)?;
    cfg.data.manifest = Some(manifest.to_path_buf());
    let (train, test) = patch_sets(manifest, &cfg)?;
    let mut guard = OutputGuard::new();
    let dir = guard.dir(out)?;
    write_patch_set(&guard.track(&dir.join("train.spat")), &train)?;
    write_patch_set(&guard.track(&dir.join("test.spat")), &test)?;
    guard.write(&dir.join("config.toml"), cfg.to_text()?)?;
    guard.commit();
    println!(
        "{} train / {} test patches of {}x{}, normalization constant {:.6}",
        train.patches.len(),
        test.patches.len(),
        train.frames,
        train.bins,
        train.norm_scale
    );
    Ok(())
}

fn cmd_train_vae(config: &Path, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(o) = out {
        cfg.data.out = Some(o);
    }
    let out = cfg.data.out.clone().context("config: missing `out` in [data] (or pass --out)")?;
    let model_cfg = cfg.vae_config()?;
    let (train, test) = match (&cfg.data.patches, &cfg.data.manifest) {
        (Some(dir), _) => {
            let train = read_patch_set(&dir.join("train.spat"))?;
            let test_path = dir.join("test.spat");
            let test = if test_path.exists() {
                read_patch_set(&test_path)?
            } else {
                PatchSet {
                    patches: Vec::new(),
                    ..train.clone()
                }
            };
            (train, test)
        }
        (None, Some(manifest)) => patch_sets(manifest, &cfg)?,
        (None, None) => bail!("config: [data] needs `patches` or `manifest`"),
    };
    if (train.frames, train.bins) != (model_cfg.frames, model_cfg.bins) {
        bail!(
            "patches are {}x{} but [patch] frames / [stft] n_fft give {}x{}",
            train.frames,
            train.bins,
            model_cfg.frames,
            model_cfg.bins
        );
    }
    let dataset = PatchDataset {
        train: train.patches.into_iter().map(|p| p.data).collect(),
        test: test.patches.into_iter().map(|p| p.data).collect(),
    };
    let (mut model, report) = train_vae(&dataset, &model_cfg, &cfg.vae_train(), |e| {
        let test = e.test.map_or(String::new(), |t| format!(" test {:.6}", t.total));
        eprintln!(
            "epoch {:>3}  loss {:.6} (recon {:.6}, kl {:.4}){test}  {:.1}s",
            e.epoch, e.train.total, e.train.recon, e.train.kl, e.seconds
        );
    })?;
    model.norm_scale = train.norm_scale;
    model.stft = cfg.stft()?;

    let mut guard = OutputGuard::new();
    let dir = guard.dir(&out)?;
    save_checkpoint(&guard.track(&dir.join("model.ckpt")), &model.to_checkpoint())?;
    guard.write(&dir.join("loss.csv"), report.to_csv())?;
    guard.write(&dir.join("config.toml"), cfg.to_text()?)?;
    guard.commit();
    if let Some(b) = report.best_epoch {
        println!("kept epoch {b}");
    }
    Ok(())
}

fn cmd_reconstruct(ckpt: &Path, wav: &Path, frame: usize, out: &Path) -> Result<()> {
    let model = load_model(ckpt)?;
    let audio = load_wav(wav).with_context(|| wav.display().to_string())?;
    let spec = normalize_spectrogram(&spectrogram(&audio, &model.stft)?, model.norm_scale)?;
    let (frames, _) = model.input_shape();
    if frame + frames > spec.frames() {
        bail!(
            "--frame {frame}: clip has {} frames and a patch needs {frames}",
            spec.frames()
        );
    }
    let patch = extract_patches(&spec, 0, frames, 1)?.swap_remove(frame).data;
    let recon = model.reconstruct(&patch)?;
    let corr = pearson(patch.as_slice().unwrap(), recon.as_slice().unwrap());

    let (a, b) = (as_image(&patch), as_image(&recon));
    let sep = Array2::from_elem((a.nrows(), 1), 1.0);
    let side = concatenate(Axis(1), &[a.view(), sep.view(), b.view()])?;
    let mut guard = OutputGuard::new();
    let dir = guard.dir(out)?;
    guard.write(&dir.join(format!("reconstruct_f{frame}.pgm")), encode_pgm(&side)?)?;
    guard.write(&dir.join(format!("original_f{frame}.csv")), encode_csv(&patch)?)?;
    guard.write(&dir.join(format!("reconstruction_f{frame}.csv")), encode_csv(&recon)?)?;
    guard.commit();
    println!(
        "{} values -> {} latent -> {} values, correlation {corr:.4}",
        patch.len(),
        model.latent_dim(),
        recon.len()
    );
    Ok(())
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

fn cmd_sample(ckpt: &Path, component: usize, out: &Path, lo: f64, hi: f64) -> Result<()> {
    let model = load_model(ckpt)?;
    let samples = model.latent_traversal(component, 4, lo, hi)?;
    let mut guard = OutputGuard::new();
    let dir = guard.dir(out)?;
    for (i, (v, patch)) in samples.iter().enumerate() {
        let path = dir.join(format!("sample_c{component}_{i}.pgm"));
        guard.write(&path, encode_pgm(&as_image(patch))?)?;
        println!("{} z[{component}] = {v:.6}", path.display());
    }
    guard.commit();
    Ok(())
}

fn cmd_featurize(
    manifest: &Path,
    kind: FeatureKind,
    ckpt: Option<&Path>,
    out: &Path,
    jobs: usize,
    split: SplitArg,
) -> Result<()> {
    let m = Manifest::load(manifest)?;
    let m = match split {
        SplitArg::All => m,
        SplitArg::Train => m.filter_split(Split::Train),
        SplitArg::Test => m.filter_split(Split::Test),
    };
    let model;
    let extractor = match kind {
        FeatureKind::Vae => {
            let ckpt = ckpt.context("--kind vae requires --ckpt <file> (missing ckpt)")?;
            model = load_model(ckpt)?;
            Extractor::Vae(&model)
        }
        FeatureKind::Mfcc => Extractor::Mfcc(MfccPipeline::new()),
    };
    let mut guard = OutputGuard::new();
    if let Some(parent) = out.parent() {
        guard.dir(parent)?;
    }
    let summary = build_feature_file(&m, &extractor, &guard.track(out), jobs)?;
    guard.commit();
    println!(
        "{} records of dim {} ({} bytes) -> {}",
        summary.records,
        summary.dim,
        summary.bytes,
        out.display()
    );
    Ok(())
}

fn cmd_train_classifier(train: &Path, test: &Path, config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let tr = read_feature_file(train).with_context(|| train.display().to_string())?;
    let te = read_feature_file(test).with_context(|| test.display().to_string())?;
    let (_, report) = train_mlp(&tr, &te, &cfg.classifier(), |e| {
        eprintln!(
            "epoch {:>3}  loss {:.4}  train {:.4}  test {:.4}",
            e.epoch, e.train_loss, e.train_acc, e.test_acc
        );
    })?;
    let mut guard = OutputGuard::new();
    let dir = guard.dir(out)?;
    guard.write(&dir.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    guard.write(&dir.join("loss.csv"), report.to_csv())?;
    guard.write(&dir.join("config.toml"), cfg.to_text()?)?;
    guard.commit();
    if let Some(b) = report.best() {
        println!("best epoch {} test accuracy {:.4}", b.epoch, b.test_acc);
    }
    Ok(())
}

fn read_report(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("report {}", path.display()))
}

fn cmd_compare(vae: &Path, mfcc: &Path, out: Option<&Path>) -> Result<()> {
    let c = compare_report(&read_report(vae)?, &read_report(mfcc)?);
    print!("{}", c.text);
    if let Some(out) = out {
        let mut guard = OutputGuard::new();
        let dir = guard.dir(out)?;
        guard.write(&dir.join("comparison.txt"), &c.text)?;
        guard.write(&dir.join("comparison.csv"), &c.csv)?;
        guard.commit();
    }
    Ok(())
}
