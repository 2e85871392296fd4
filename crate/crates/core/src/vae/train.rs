use std::fmt::Write as _;
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::model::{kl_divergence, LossTerms, VaeConfig, VaeModel};
use super::VaeError;
use crate::nn::{mse, Adam, AdamConfig, Mode};
use crate::rng::Rng;

/// Normalized patches split into a training and a held-out set.
#[derive(Debug, Clone, Default)]
pub struct PatchDataset {
    pub train: Vec<Array2<f64>>,
    pub test: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    /// Running mean over the epoch's minibatches (training mode, sampled latents).
    pub train: LossTerms,
    /// Held-out loss in eval mode; `None` without a test split.
    pub test: Option<LossTerms>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub epochs: Vec<EpochStats>,
    /// Epoch whose weights were kept (lowest held-out loss), `None` if untrained.
    pub best_epoch: Option<usize>,
}

impl TrainReport {
    /// Loss curve as CSV. Timing is left out so reruns are byte-identical.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_recon,train_kl,test_loss,test_recon,test_kl\n");
        for e in &self.epochs {
            let t = e.train;
            write!(out, "{},{:.12e},{:.12e},{:.12e}", e.epoch, t.total, t.recon, t.kl).unwrap();
            match e.test {
                Some(v) => writeln!(out, ",{:.12e},{:.12e},{:.12e}", v.total, v.recon, v.kl).unwrap(),
                None => out.push_str(",,,\n"),
            }
        }
        out
    }
}

/// Eval-mode loss averaged over `patches` (recon per element, KL per patch).
pub fn evaluate_loss(model: &VaeModel, patches: &[Array2<f64>], batch_size: usize) -> Result<LossTerms, VaeError> {
    let (mut recon, mut kl) = (0.0, 0.0);
    let latent = model.latent_dim();
    for chunk in patches.chunks(batch_size.max(1)) {
        let x = model.batch_tensor(chunk)?;
        let (mean, logvar) = model.encode_batch(&x)?;
        let out = model.decode_batch(&mean)?;
        let (r, _) = mse(&out, &x)?;
        recon += r * chunk.len() as f64;
        kl += mean
            .data()
            .chunks_exact(latent)
            .zip(logvar.data().chunks_exact(latent))
            .map(|(m, lv)| kl_divergence(m, lv))
            .sum::<f64>();
    }
    let n = patches.len() as f64;
    Ok(LossTerms::new(recon / n, kl / n))
}

/// Minibatch Adam training; keeps the weights of the epoch with the lowest
/// held-out loss (training loss when there is no test split).
pub fn train_vae(
    dataset: &PatchDataset,
    config: &VaeConfig,
    train: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(VaeModel, TrainReport), VaeError> {
    if dataset.train.is_empty() {
        return Err(VaeError::EmptyDataset);
    }
    if train.batch_size == 0 || train.batch_size > dataset.train.len() {
        return Err(VaeError::InvalidConfig(format!(
            "batch size {} must be in 1..={} (training patches)",
            train.batch_size,
            dataset.train.len()
        )));
    }
    if !(train.learning_rate.is_finite() && train.learning_rate >= 0.0) {
        return Err(VaeError::InvalidConfig(format!("learning rate {}", train.learning_rate)));
    }
    let mut model = VaeModel::new(*config, &mut Rng::for_stage(train.seed, "vae-init"))?;
    let mut shuffle_rng = Rng::for_stage(train.seed, "vae-shuffle");
    let mut noise_rng = Rng::for_stage(train.seed, "vae-noise");
    let mut adam = Adam::new(AdamConfig {
        learning_rate: train.learning_rate,
        ..AdamConfig::default()
    });
    let mut report = TrainReport {
        seed: train.seed,
        epochs: Vec::new(),
        best_epoch: None,
    };
    let mut best: Option<(f64, VaeModel)> = None;
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();

    for epoch in 1..=train.epochs {
        let started = Instant::now();
        shuffle_rng.shuffle(&mut order);
        let (mut recon, mut kl, mut seen) = (0.0, 0.0, 0usize);
        for (batch_idx, idx) in order.chunks(train.batch_size).enumerate() {
            let x = model.batch_tensor(idx.iter().map(|&i| &dataset.train[i]))?;
            model.zero_grad();
            let terms = model
                .forward(&x, Mode::Train, &mut noise_rng)
                .and_then(|pass| model.backward(&x, &pass))
                .map_err(|e| match e {
                    VaeError::Nn(crate::nn::NnError::NonFinite(_)) => VaeError::DivergedLoss {
                        epoch,
                        batch: batch_idx + 1,
                    },
                    other => other,
                })?;
            if !terms.is_finite() {
                return Err(VaeError::DivergedLoss {
                    epoch,
                    batch: batch_idx + 1,
                });
            }
            let mut layers: Vec<_> = model.params_mut().into_iter().map(|(_, p)| p).collect();
            adam.step(&mut layers);
            recon += terms.recon * idx.len() as f64;
            kl += terms.kl * idx.len() as f64;
            seen += idx.len();
        }
        let train_terms = LossTerms::new(recon / seen as f64, kl / seen as f64);
        let test_terms = if dataset.test.is_empty() {
            None
        } else {
            Some(evaluate_loss(&model, &dataset.test, train.batch_size)?)
        };
        let score = test_terms.map_or(train_terms.total, |t| t.total);
        if !score.is_finite() {
            return Err(VaeError::DivergedLoss { epoch, batch: 0 });
        }
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, model.clone()));
            report.best_epoch = Some(epoch);
        }
        let stats = EpochStats {
            epoch,
            train: train_terms,
            test: test_terms,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&stats);
        report.epochs.push(stats);
    }
    let model = best.map_or(model, |(_, m)| m);
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> VaeConfig {
        VaeConfig {
            frames: 8,
            bins: 16,
            latent_dim: 2,
            channels: [2, 4],
            ..VaeConfig::patch()
        }
    }

    fn dataset(n: usize) -> PatchDataset {
        let mut rng = Rng::new(11);
        let mk = |rng: &mut Rng| {
            let level = rng.uniform(0.2, 0.8);
            Array2::from_shape_fn((8, 16), |(_, b)| if b % 4 == 0 { level } else { 0.1 })
        };
        PatchDataset {
            train: (0..n).map(|_| mk(&mut rng)).collect(),
            test: (0..8).map(|_| mk(&mut rng)).collect(),
        }
    }

    #[test]
    fn zero_epochs_returns_initialized_model() {
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let (model, report) = train_vae(&dataset(40), &tiny(), &cfg, |_| {}).unwrap();
        assert!(report.epochs.is_empty());
        assert_eq!(report.best_epoch, None);
        let init = VaeModel::new(tiny(), &mut Rng::for_stage(0, "vae-init")).unwrap();
        assert_eq!(model.to_checkpoint(), init.to_checkpoint());
        assert_eq!(report.to_csv().lines().count(), 1);
    }

    #[test]
    fn training_is_deterministic_and_decomposes() {
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 8,
            learning_rate: 1e-2,
            seed: 5,
        };
        let data = dataset(40);
        let (_, a) = train_vae(&data, &tiny(), &cfg, |_| {}).unwrap();
        let (_, b) = train_vae(&data, &tiny(), &cfg, |_| {}).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        for e in &a.epochs {
            let t = e.train;
            assert!((t.total - (t.recon + 0.0005 * t.kl)).abs() < 1e-9);
            assert!(t.kl >= 0.0);
        }
        let tests: Vec<f64> = a.epochs.iter().map(|e| e.test.unwrap().total).collect();
        let best = a.best_epoch.unwrap();
        assert!(tests.iter().all(|&t| tests[best - 1] <= t));
    }

    #[test]
    fn input_errors() {
        let cfg = TrainConfig::default();
        assert!(matches!(
            train_vae(&PatchDataset::default(), &tiny(), &cfg, |_| {}),
            Err(VaeError::EmptyDataset)
        ));
        let cfg = TrainConfig { batch_size: 100, ..cfg };
        assert!(matches!(
            train_vae(&dataset(10), &tiny(), &cfg, |_| {}),
            Err(VaeError::InvalidConfig(_))
        ));
    }

    #[test]
    fn huge_learning_rate_reports_divergence_or_trains() {
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            learning_rate: 1e12,
            seed: 1,
        };
        match train_vae(&dataset(16), &tiny(), &cfg, |_| {}) {
            Ok((_, r)) => assert!(r.epochs.iter().all(|e| e.train.is_finite())),
            Err(e) => assert!(matches!(e, VaeError::DivergedLoss { .. }), "{e}"),
        }
    }
}
