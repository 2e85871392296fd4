//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). A criterion that fails exits
//! nonzero, except one whose required dataset is absent from this machine:
//! that is reported as `FAIL (blocked)` and does not abort the run.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use ndarray::Array2;
use num_complex::Complex64;
use spectral_vae_core::audio::{encode_pcm16_wav, encode_wav, parse_wav, write_wav};
use spectral_vae_core::classifier::{train_mlp, ClassifierConfig, EvalReport};
use spectral_vae_core::dsp::fft;
use spectral_vae_core::features::{
    decode_feature_file, encode_feature_file, featurize_manifest, prepare_patches, vae_feature_dim, Extractor,
    FeatureFile, FeatureRecord, Manifest, MfccPipeline, PatchConfig, Split,
};
use spectral_vae_core::nn::{decode_checkpoint, encode_checkpoint, Mode};
use spectral_vae_core::vae::{train_vae, PatchDataset, TrainConfig, TrainReport};
use spectral_vae_core::{AudioBuffer, FeatureKind, MlpModel, Rng, VaeConfig, VaeModel};

const SPEECH_COMMANDS_ENV: &str = "SPEECH_COMMANDS_DIR";
const A7_WORDS: [&str; 5] = ["yes", "no", "up", "down", "left"];
const A7_CLIPS_PER_CLASS: usize = 300;

struct Outcome {
    id: &'static str,
    pass: bool,
    blocked: bool,
    detail: String,
}

impl Outcome {
    fn new(id: &'static str, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            id,
            pass,
            blocked: false,
            detail: detail.into(),
        }
    }

    fn blocked(id: &'static str, detail: impl Into<String>) -> Self {
        Self {
            id,
            pass: false,
            blocked: true,
            detail: detail.into(),
        }
    }

    fn report(&self, seconds: f64) {
        let status = match (self.pass, self.blocked) {
            (true, _) => "PASS",
            (false, true) => "FAIL (blocked)",
            (false, false) => "FAIL",
        };
        println!("{:<9} {status:<15} [{seconds:>6.1}s] {}", self.id, self.detail);
    }
}

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
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

// ---------------------------------------------------------------- A1

fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(t, &v)| v * Complex64::from_polar(1.0, -2.0 * PI * (k * t % n) as f64 / n as f64))
                .sum()
        })
        .collect()
}

fn a1() -> Outcome {
    let mut rng = Rng::new(0xA1);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let x: Vec<Complex64> = (0..256).map(|_| Complex64::new(rng.uniform(-1.0, 1.0), 0.0)).collect();
        let expected = naive_dft(&x);
        let mut got = x.clone();
        fft(&mut got).unwrap();
        for (a, b) in got.iter().zip(&expected) {
            worst = worst.max((a - b).norm());
        }
    }
    Outcome::new("A1", worst < 1e-6, format!("FFT vs naive DFT, 100 signals of 256: max |err| = {worst:.3e} (< 1e-6)"))
}

// ---------------------------------------------------------------- A2

fn a2() -> Outcome {
    const TOL: f64 = 1e-3;
    let started = Instant::now();
    let mut rng = Rng::new(0xA2);
    let mut sampler = Rng::new(0xA2 + 1);
    let mut lines = Vec::new();
    let mut pass = true;

    let mut vae = VaeModel::new(VaeConfig::patch(), &mut rng).unwrap();
    let patches: Vec<Array2<f64>> = (0..3)
        .map(|_| Array2::from_shape_fn((8, 128), |_| rng.uniform(0.0, 1.0)))
        .collect();
    let x = vae.batch_tensor(&patches).unwrap();
    for (mode, name) in [(Mode::Train, "train"), (Mode::Eval, "eval")] {
        let r = vae.gradient_check(&x, mode, 11, 40, &mut sampler).unwrap();
        pass &= r.passes(TOL);
        lines.push(format!(
            "VAE 8x128/13 {name}: {} coords, max rel err {:.2e}",
            r.checked, r.max_relative_error
        ));
    }

    let mut mlp = MlpModel::new(320, 100, 30, 0.2, &mut rng).unwrap();
    let rows: Vec<Vec<f32>> = (0..4)
        .map(|_| (0..320).map(|_| rng.uniform(-1.0, 1.0) as f32).collect())
        .collect();
    let labels = [3, 17, 29, 0];
    let x = mlp.input_tensor(rows.iter().map(Vec::as_slice)).unwrap();
    for (mode, name) in [(Mode::Train, "train"), (Mode::Eval, "eval")] {
        let r = mlp.gradient_check(&x, &labels, mode, 12, 60, &mut sampler).unwrap();
        pass &= r.passes(TOL);
        lines.push(format!(
            "MLP 320-100-100-30 {name}: {} coords, max rel err {:.2e}",
            r.checked, r.max_relative_error
        ));
    }
    let secs = started.elapsed().as_secs_f64();
    pass &= secs < 300.0;
    Outcome::new("A2", pass, format!("{}; {secs:.0}s (< 300s)", lines.join("; ")))
}

// ---------------------------------------------------------------- A3 / A4

struct A3Run {
    model: VaeModel,
    dataset: PatchDataset,
    report: TrainReport,
    files: usize,
}

fn a3_train() -> A3Run {
    let manifest = Manifest::load(&data_dir().join("speech/manifest.tsv")).unwrap();
    let cfg = PatchConfig {
        max_train: Some(2000),
        max_test: Some(300),
        seed: 1,
        ..PatchConfig::default()
    };
    let (train, test) = prepare_patches(&manifest, &cfg).unwrap();
    let files = manifest.count(Split::Train);
    let dataset = PatchDataset {
        train: train.patches.into_iter().map(|p| p.data).collect(),
        test: test.patches.into_iter().map(|p| p.data).collect(),
    };
    let tc = TrainConfig {
        epochs: 20,
        batch_size: 32,
        learning_rate: 1e-3,
        seed: 1,
    };
    let (mut model, report) = train_vae(&dataset, &VaeConfig::patch(), &tc, |_| {}).unwrap();
    model.norm_scale = train.norm_scale;
    A3Run {
        model,
        dataset,
        report,
        files,
    }
}

fn a3(run: &A3Run) -> Outcome {
    let epochs = &run.report.epochs;
    let first = epochs[0].train.total;
    let last = epochs.last().unwrap().train.total;
    let kl_ok = epochs
        .iter()
        .flat_map(|e| [Some(e.train.kl), e.test.map(|t| t.kl)])
        .flatten()
        .all(|kl| kl.is_finite() && kl >= 0.0);
    let pass = run.dataset.train.len() == 2000 && run.files >= 10 && epochs.len() == 20 && last <= 0.5 * first && kl_ok;
    Outcome::new(
        "A3",
        pass,
        format!(
            "{} patches from {} files, 20 epochs: loss {first:.5} -> {last:.5} (ratio {:.3} <= 0.5), KL finite and >= 0: {kl_ok}",
            run.dataset.train.len(),
            run.files,
            last / first
        ),
    )
}

fn a4(run: &A3Run) -> Outcome {
    let model = &run.model;
    let mut rng = Rng::new(0);
    let patch = &run.dataset.train[0];
    let latent = model.encode(patch, Mode::Eval, &mut rng).unwrap();
    let recon = model.decode(&latent.mean).unwrap();
    let sizes = (patch.len(), latent.mean.len(), recon.len());
    let (mut per_patch, mut xs, mut ys, mut nonneg) = (0.0, Vec::new(), Vec::new(), true);
    for p in &run.dataset.train {
        let r = model.reconstruct(p).unwrap();
        nonneg &= r.iter().all(|&v| v >= 0.0);
        let (a, b): (Vec<f64>, Vec<f64>) = (p.iter().copied().collect(), r.iter().copied().collect());
        per_patch += pearson(&a, &b);
        xs.extend(a);
        ys.extend(b);
    }
    let mean_r = per_patch / run.dataset.train.len() as f64;
    let pooled = pearson(&xs, &ys);
    let pass = sizes == (1024, 13, 1024) && nonneg && mean_r > 0.5;
    Outcome::new(
        "A4",
        pass,
        format!(
            "{} -> {} -> {} elements, all outputs >= 0: {nonneg}, mean per-patch correlation {mean_r:.3} (> 0.5), pooled {pooled:.3}",
            sizes.0, sizes.1, sizes.2
        ),
    )
}

// ---------------------------------------------------------------- A5

fn cli() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_spectral-vae"));
    c.env_remove("SPECTRAL_VAE_SEED");
    c
}

fn cli_ok(args: &[&str]) -> Result<String, String> {
    let out = cli().args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn a5(run: &A3Run, work: &Path) -> Outcome {
    let ckpt = work.join("a5.ckpt");
    fs::write(&ckpt, encode_checkpoint(&run.model.to_checkpoint())).unwrap();
    let expected = [-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0];
    let mut problems = Vec::new();
    for c in 0..run.model.latent_dim() {
        let dir = work.join(format!("a5_c{c}"));
        let stdout = match cli_ok(&["sample", ckpt.to_str().unwrap(), "--component", &c.to_string(), "--out", dir.to_str().unwrap()]) {
            Ok(s) => s,
            Err(e) => {
                problems.push(e);
                continue;
            }
        };
        let files: Vec<_> = fs::read_dir(&dir).unwrap().map(|e| e.unwrap().file_name()).collect();
        if files.len() != 4 {
            problems.push(format!("component {c}: {} files", files.len()));
        }
        for i in 0..4 {
            let pgm = fs::read(dir.join(format!("sample_c{c}_{i}.pgm"))).unwrap_or_default();
            // 8 frames wide, 128 bins tall
            const HEADER: &[u8] = b"P5\n8 128\n255\n";
            if !pgm.starts_with(HEADER) || pgm.len() != HEADER.len() + 8 * 128 {
                problems.push(format!("component {c} sample {i}: not an 8x128 patch image"));
            }
        }
        let values: Vec<f64> = stdout
            .lines()
            .filter_map(|l| l.rsplit("= ").next()?.parse().ok())
            .collect();
        if values.len() != 4 || values.iter().zip(expected).any(|(v, e)| (v - e).abs() > 1e-6) {
            problems.push(format!("component {c}: values {values:?}"));
        }
    }
    // the library traversal itself, at full precision
    let trav = run.model.latent_traversal(4, 4, -1.0, 1.0).unwrap();
    let exact = trav.iter().zip(expected).all(|((v, p), e)| (v - e).abs() < 1e-15 && p.dim() == (8, 128));
    if !exact {
        problems.push("library traversal values/shapes".into());
    }
    let pass = problems.is_empty();
    Outcome::new(
        "A5",
        pass,
        if pass {
            format!(
                "{} components x 4 samples at {{-1, -1/3, 1/3, 1}}, each an 8x128 patch",
                run.model.latent_dim()
            )
        } else {
            problems.join("; ")
        },
    )
}

// ---------------------------------------------------------------- A6

fn a6(work: &Path) -> Outcome {
    let window = VaeModel::new(VaeConfig::window(), &mut Rng::new(6)).unwrap();
    let mfcc = MfccPipeline::new();
    let dir = work.join("a6");
    fs::create_dir_all(&dir).unwrap();
    let mut rng = Rng::new(0xA6);
    let mut manifest = String::from("#classes a,b\n");
    for i in 0..6 {
        let secs = [1.0, 0.5, 0.8][i % 3];
        let n = (16000.0 * secs) as usize;
        let clip = AudioBuffer::new((0..n).map(|_| 0.1 * rng.normal()).collect(), 16000);
        write_wav(&clip, dir.join(format!("{i}.wav"))).unwrap();
        manifest.push_str(&format!("{i}.wav\t{}\ttrain\n", ["a", "b"][i % 2]));
    }
    fs::write(dir.join("m.tsv"), manifest).unwrap();
    let m = Manifest::load(&dir.join("m.tsv")).unwrap();
    let v = featurize_manifest(&m, &Extractor::Vae(&window), 1).unwrap();
    let f = featurize_manifest(&m, &Extractor::Mfcc(mfcc), 1).unwrap();
    let dims_ok = v.records.iter().all(|r| r.values.len() == 320)
        && f.records.iter().all(|r| r.values.len() == 1274)
        && vae_feature_dim(&window) == 320;
    let (vb, fb) = (encode_feature_file(&v).unwrap().len(), encode_feature_file(&f).unwrap().len());
    let ratio = fb as f64 / vb as f64;
    Outcome::new(
        "A6",
        dims_ok && (3.0..=4.2).contains(&ratio),
        format!(
            "VAE dim {} / MFCC dim {} on 1.0, 0.8 and 0.5 s clips; SFEA bytes {fb} / {vb} = {ratio:.3} (in [3.0, 4.2])",
            v.dim, f.dim
        ),
    )
}

// ---------------------------------------------------------------- A7

/// The 96x128 / latent-40 window model, trained on the real-speech corpus.
fn window_vae() -> (VaeModel, String) {
    let manifest = Manifest::load(&data_dir().join("speech/manifest.tsv")).unwrap();
    let cfg = PatchConfig {
        patch_frames: 96,
        stride_frames: 32,
        seed: 1,
        ..PatchConfig::default()
    };
    let (train, test) = prepare_patches(&manifest, &cfg).unwrap();
    let dataset = PatchDataset {
        train: train.patches.into_iter().map(|p| p.data).collect(),
        test: test.patches.into_iter().map(|p| p.data).collect(),
    };
    let tc = TrainConfig {
        epochs: 10,
        batch_size: 16,
        learning_rate: 1e-3,
        seed: 1,
    };
    let (mut model, report) = train_vae(&dataset, &VaeConfig::window(), &tc, |_| {}).unwrap();
    model.norm_scale = train.norm_scale;
    let last = report.epochs.last().unwrap();
    let note = format!(
        "window VAE: {} windows, 10 epochs, loss {:.4} -> {:.4}",
        dataset.train.len(),
        report.epochs[0].train.total,
        last.train.total
    );
    (model, note)
}

fn train_twice(train: &FeatureFile, test: &FeatureFile, cfg: &ClassifierConfig) -> (EvalReport, bool) {
    let (_, a) = train_mlp(train, test, cfg, |_| {}).unwrap();
    let (_, b) = train_mlp(train, test, cfg, |_| {}).unwrap();
    let same = a.to_csv() == b.to_csv() && a.confusion == b.confusion && a.best_epoch == b.best_epoch;
    (a, same)
}

fn best_acc(r: &EvalReport) -> f64 {
    r.best().map_or(0.0, |e| e.test_acc)
}

/// Shared protocol: featurize both kinds, 30-epoch MLP with the default
/// settings, twice each for determinism.
fn classification(id: &'static str, clips: &Manifest, model: &VaeModel, vae_note: &str) -> Outcome {
    let (train_m, test_m) = (clips.filter_split(Split::Train), clips.filter_split(Split::Test));
    let cfg = ClassifierConfig::default();
    let mut parts = Vec::new();
    let mut pass = true;
    let mut deterministic = true;
    let mut vae_files = None;
    for kind in [FeatureKind::Mfcc, FeatureKind::Vae] {
        let ex = match kind {
            FeatureKind::Vae => Extractor::Vae(model),
            FeatureKind::Mfcc => Extractor::Mfcc(MfccPipeline::new()),
        };
        let train = featurize_manifest(&train_m, &ex, 1).unwrap();
        let test = featurize_manifest(&test_m, &ex, 1).unwrap();
        // worker count must not change the output
        let probe = Manifest {
            entries: test_m.entries[..10.min(test_m.entries.len())].to_vec(),
            ..test_m.clone()
        };
        let again = featurize_manifest(&probe, &ex, 2).unwrap();
        deterministic &= again.records[..] == test.records[..again.records.len()];
        let (report, same) = train_twice(&train, &test, &cfg);
        deterministic &= same;
        let acc = best_acc(&report);
        pass &= acc >= 0.60;
        parts.push(format!("{} test acc {acc:.3} (epoch {})", kind.name(), report.best_epoch));
        if kind == FeatureKind::Vae {
            vae_files = Some((train, test));
        }
    }
    // not part of the criterion: the same VAE features z-scored per dimension
    let (train, test) = vae_files.unwrap();
    let z = ClassifierConfig {
        standardize: true,
        ..cfg
    };
    let (_, zr) = train_mlp(&train, &test, &z, |_| {}).unwrap();
    Outcome::new(
        id,
        pass && deterministic,
        format!(
            "{} train / {} test clips, 5 classes: {} (>= 0.60 each), seed-deterministic: {deterministic}; {vae_note}; diagnostic only: z-scored vae {:.3}",
            train_m.entries.len(),
            test_m.entries.len(),
            parts.join(", "),
            best_acc(&zr)
        ),
    )
}

/// Speaker id of a GoogleSpeechCommands file name (`<speaker>_nohash_<n>.wav`).
fn gsc_speaker(name: &str) -> &str {
    name.split('_').next().unwrap_or(name)
}

fn gsc_subset(root: &Path, work: &Path) -> Option<Manifest> {
    let mut chosen = Vec::new();
    for w in A7_WORDS {
        let mut names: Vec<String> = fs::read_dir(root.join(w))
            .ok()?
            .filter_map(|e| e.ok()?.file_name().into_string().ok())
            .filter(|n| n.ends_with(".wav"))
            .collect();
        names.sort();
        if names.len() < A7_CLIPS_PER_CLASS {
            return None;
        }
        chosen.extend(names.into_iter().take(A7_CLIPS_PER_CLASS).map(|n| (w, n)));
    }
    // hold out every fifth speaker so no voice is in both splits
    let mut speakers: Vec<&str> = chosen.iter().map(|(_, n)| gsc_speaker(n)).collect();
    speakers.sort_unstable();
    speakers.dedup();
    let mut text = format!("#classes {}\n", A7_WORDS.join(","));
    for (w, n) in &chosen {
        let idx = speakers.binary_search(&gsc_speaker(n)).unwrap();
        let split = if idx % 5 == 0 { "test" } else { "train" };
        text.push_str(&format!("{}\t{w}\t{split}\n", root.join(w).join(n).display()));
    }
    let path = work.join("gsc.tsv");
    fs::write(&path, text).unwrap();
    Some(Manifest::load(&path).unwrap())
}

fn a7(work: &Path, model: &VaeModel, vae_note: &str) -> Outcome {
    let Some(root) = std::env::var_os(SPEECH_COMMANDS_ENV).map(PathBuf::from) else {
        return Outcome::blocked("A7", format!("GoogleSpeechCommands not available (set {SPEECH_COMMANDS_ENV})"));
    };
    match gsc_subset(&root, work) {
        Some(m) => classification("A7", &m, model, vae_note),
        None => Outcome::blocked(
            "A7",
            format!("{} lacks {A7_CLIPS_PER_CLASS} clips for each of {A7_WORDS:?}", root.display()),
        ),
    }
}

/// 60 synthesized utterances per word, each placed 5 times into a 1 s clip
/// with a random offset, gain and white noise. Split by utterance (48 / 12),
/// so no test clip shares its source with a training clip.
fn synth_commands(work: &Path) -> Manifest {
    let dir = work.join("proxy");
    fs::create_dir_all(&dir).unwrap();
    let mut rng = Rng::new(17);
    let mut text = format!("#classes {}\n", A7_WORDS.join(","));
    for w in A7_WORDS {
        for u in 0..60 {
            let base = spectral_vae_core::load_wav(data_dir().join(format!("commands-synth/{w}/{w}_{u:03}.wav"))).unwrap();
            let split = if u < 48 { "train" } else { "test" };
            for v in 0..A7_CLIPS_PER_CLASS / 60 {
                let len = base.len().min(16000);
                let offset = rng.below(16000 - len + 1);
                let gain = rng.uniform(0.3, 1.0);
                let noise = 10f64.powf(rng.uniform(-3.5, -2.0));
                let samples = (0..16000)
                    .map(|i| {
                        let s = if (offset..offset + len).contains(&i) { gain * base.samples[i - offset] } else { 0.0 };
                        (s + noise * rng.normal()).clamp(-1.0, 1.0 - 1.0 / 32768.0)
                    })
                    .collect();
                let name = format!("{w}_{u:03}_{v}.wav");
                write_wav(&AudioBuffer::new(samples, 16000), dir.join(&name)).unwrap();
                text.push_str(&format!("{name}\t{w}\t{split}\n"));
            }
        }
    }
    fs::write(dir.join("manifest.tsv"), text).unwrap();
    Manifest::load(&dir.join("manifest.tsv")).unwrap()
}

fn a7_proxy(work: &Path, model: &VaeModel, vae_note: &str) -> Outcome {
    let mut o = classification("A7-proxy", &synth_commands(work), model, vae_note);
    o.detail = format!("(not a criterion; synthesized commands) {}", o.detail);
    o
}

// ---------------------------------------------------------------- A8

fn a8(work: &Path) -> Outcome {
    let dir = work.join("a8");
    fs::create_dir_all(&dir).unwrap();
    let speech = data_dir().join("speech/manifest.tsv").canonicalize().unwrap();
    let cfg = dir.join("vae.toml");
    fs::write(
        &cfg,
        format!(
            "seed = 8\n[data]\nmanifest = {:?}\n[patch]\nmax_train = 256\nmax_test = 64\n[vae]\nepochs = 3\n[classifier]\nepochs = 8\nbatch_size = 16\n",
            speech.to_str().unwrap()
        ),
    )
    .unwrap();

    let mut manifest = format!("#classes {}\n", A7_WORDS.join(","));
    let synth = data_dir().join("commands-synth").canonicalize().unwrap();
    for w in A7_WORDS {
        for i in 0..10 {
            let split = if i < 8 { "train" } else { "test" };
            manifest.push_str(&format!("{}\t{w}\t{split}\n", synth.join(format!("{w}/{w}_{i:03}.wav")).display()));
        }
    }
    fs::write(dir.join("clips.tsv"), manifest).unwrap();

    let p = |f: &str| dir.join(f).to_str().unwrap().to_string();
    let steps: Vec<Vec<String>> = vec![
        vec!["featurize".into(), p("clips.tsv"), "--kind".into(), "mfcc".into(), "--split".into(), "train".into(), "--out".into(), p("train.sfea")],
        vec!["featurize".into(), p("clips.tsv"), "--kind".into(), "mfcc".into(), "--split".into(), "test".into(), "--out".into(), p("test.sfea")],
        vec!["train-vae".into(), "--config".into(), p("vae.toml"), "--out".into(), p("vae1")],
        vec!["train-vae".into(), "--config".into(), p("vae.toml"), "--out".into(), p("vae2")],
        vec!["train-classifier".into(), p("train.sfea"), p("test.sfea"), "--config".into(), p("vae.toml"), "--out".into(), p("mlp1")],
        vec!["train-classifier".into(), p("train.sfea"), p("test.sfea"), "--config".into(), p("vae.toml"), "--out".into(), p("mlp2")],
    ];
    for s in &steps {
        let args: Vec<&str> = s.iter().map(String::as_str).collect();
        if let Err(e) = cli_ok(&args) {
            return Outcome::new("A8", false, e);
        }
    }
    let read = |f: &str| fs::read(dir.join(f)).unwrap_or_default();
    let vae_same = read("vae1/loss.csv") == read("vae2/loss.csv");
    let mlp_same = read("mlp1/loss.csv") == read("mlp2/loss.csv");
    let rows = |f: &str| String::from_utf8_lossy(&read(f)).lines().count().saturating_sub(1);
    let pass = vae_same && mlp_same && rows("vae1/loss.csv") == 3 && rows("mlp1/loss.csv") == 8;
    Outcome::new(
        "A8",
        pass,
        format!(
            "CLI reruns: train-vae loss.csv identical: {vae_same} ({} epochs), train-classifier loss.csv identical: {mlp_same} ({} epochs)",
            rows("vae1/loss.csv"),
            rows("mlp1/loss.csv")
        ),
    )
}

// ---------------------------------------------------------------- A9

fn wav_data_chunk(bytes: &[u8]) -> &[u8] {
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        if &bytes[pos..pos + 4] == b"data" {
            return &bytes[pos + 8..pos + 8 + size];
        }
        pos += 8 + size + (size & 1);
    }
    &[]
}

fn wav_files(dir: &Path, out: &mut Vec<PathBuf>) {
    for e in fs::read_dir(dir).unwrap() {
        let path = e.unwrap().path();
        if path.is_dir() {
            wav_files(&path, out);
        } else if path.extension().is_some_and(|x| x == "wav") {
            out.push(path);
        }
    }
}

fn a9(run: &A3Run) -> Outcome {
    let mut problems = Vec::new();

    // WAV: every fixture file, plus random PCM covering the full i16 range
    let mut files = Vec::new();
    wav_files(&data_dir(), &mut files);
    for f in &files {
        let bytes = fs::read(f).unwrap();
        let audio = parse_wav(&bytes).unwrap();
        let again = encode_wav(&audio);
        if wav_data_chunk(&again) != wav_data_chunk(&bytes) || parse_wav(&again).unwrap() != audio {
            problems.push(format!("wav {}", f.display()));
        }
    }
    let mut rng = Rng::new(0xA9);
    let mut pcm: Vec<i16> = (0..20_000).map(|_| (rng.below(65536) as i32 - 32768) as i16).collect();
    pcm.extend([i16::MIN, i16::MAX, 0, -1, 1]);
    let wav = encode_pcm16_wav(&pcm, 16000);
    if parse_wav(&wav).unwrap().to_pcm16() != pcm || encode_wav(&parse_wav(&wav).unwrap()) != wav {
        problems.push("wav random pcm".into());
    }

    // SFEA: random values including signed zero, subnormals, extremes and NaN payloads
    let specials = [0.0f32, -0.0, f32::MIN_POSITIVE / 3.0, f32::MAX, f32::MIN, f32::INFINITY, f32::from_bits(0x7fc0_1234)];
    for kind in [FeatureKind::Vae, FeatureKind::Mfcc] {
        let dim = if kind == FeatureKind::Vae { 320 } else { 1274 };
        let records = (0..25)
            .map(|i| FeatureRecord {
                label: (i % 5) as u32,
                values: (0..dim)
                    .map(|j| if j < specials.len() { specials[j] } else { f32::from_bits(rng.below(1 << 31) as u32) })
                    .collect(),
            })
            .collect();
        let file = FeatureFile {
            kind,
            dim,
            num_classes: 5,
            records,
        };
        let bytes = encode_feature_file(&file).unwrap();
        let back = decode_feature_file(&bytes).unwrap();
        let bits_equal = back.records.iter().zip(&file.records).all(|(a, b)| {
            a.label == b.label && a.values.iter().map(|v| v.to_bits()).eq(b.values.iter().map(|v| v.to_bits()))
        });
        if !bits_equal || encode_feature_file(&back).unwrap() != bytes || bytes.len() != file.byte_len() {
            problems.push(format!("sfea {}", kind.name()));
        }
    }

    // checkpoint of the trained model
    let bytes = encode_checkpoint(&run.model.to_checkpoint());
    let model = VaeModel::from_checkpoint(&decode_checkpoint(&bytes).unwrap()).unwrap();
    let p = &run.dataset.train[0];
    if encode_checkpoint(&model.to_checkpoint()) != bytes || model.reconstruct(p).unwrap() != run.model.reconstruct(p).unwrap() {
        problems.push("checkpoint".into());
    }

    let pass = problems.is_empty();
    Outcome::new(
        "A9",
        pass,
        if pass {
            format!(
                "{} WAV fixtures + random PCM16, SFEA (both kinds, NaN/subnormal bits), {}-byte checkpoint: all bit-exact",
                files.len(),
                bytes.len()
            )
        } else {
            format!("mismatch: {}", problems.join(", "))
        },
    )
}

fn main() {
    let work = tempfile::tempdir().unwrap();
    let work = work.path();
    let started = Instant::now();
    let mut outcomes = Vec::new();
    let mut timed = |f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        o.report(t.elapsed().as_secs_f64());
        outcomes.push(o);
    };

    timed(&mut a1);
    timed(&mut a2);
    let t = Instant::now();
    let run = a3_train();
    let train_secs = t.elapsed().as_secs_f64();
    timed(&mut || a3(&run));
    println!("          (A3 training took {train_secs:.0}s)");
    timed(&mut || a4(&run));
    timed(&mut || a5(&run, work));
    timed(&mut || a6(work));
    let t = Instant::now();
    let (window, note) = window_vae();
    println!("          ({note}; took {:.0}s)", t.elapsed().as_secs_f64());
    timed(&mut || a7(work, &window, &note));
    // Not a criterion: the A7 protocol on synthesized commands. Reported, never gating.
    let t = Instant::now();
    let proxy = a7_proxy(work, &window, &note);
    proxy.report(t.elapsed().as_secs_f64());
    timed(&mut || a8(work));
    timed(&mut || a9(&run));

    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.pass && !o.blocked).map(|o| o.id).collect();
    let blocked: Vec<&str> = outcomes.iter().filter(|o| o.blocked).map(|o| o.id).collect();
    println!(
        "acceptance: {} passed, {} failed {failed:?}, {} blocked {blocked:?} in {:.0}s",
        outcomes.iter().filter(|o| o.pass).count(),
        failed.len(),
        blocked.len(),
        started.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
