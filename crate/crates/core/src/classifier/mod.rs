//! MLP command classifier over fixed-length feature vectors, its training
//! loop, and the side-by-side comparison of the two feature pipelines.

mod report;

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureFile;
use crate::nn::gradcheck::{check_coordinates, sample_indices, GradCheckReport, Probe, FD_STEP};
use crate::nn::{softmax_xent, Adam, AdamConfig, Dense, Dropout, LayerParams, Mode, NnError, Relu, Tensor};
use crate::rng::Rng;

pub use report::{compare_report, compare_summaries, Comparison, ReportSummary};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("feature dimensions differ: train {train}, test {test}")]
    DimMismatch { train: usize, test: usize },
    #[error("class counts differ: train {train}, test {test}")]
    ClassMismatch { train: usize, test: usize },
    #[error("feature kinds differ: train {train}, test {test}")]
    KindMismatch { train: &'static str, test: &'static str },
    #[error("no records to {0}")]
    EmptyDataset(&'static str),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: u32, classes: usize },
    #[error("invalid classifier configuration: {0}")]
    InvalidConfig(String),
    #[error("loss diverged (non-finite) at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub hidden: usize,
    pub dropout: f64,
    /// Per-dimension z-scoring with training-set statistics.
    pub standardize: bool,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
            hidden: 100,
            dropout: 0.2,
            standardize: false,
        }
    }
}

/// Per-dimension affine input map `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(file: &FeatureFile) -> Self {
        let n = file.records.len().max(1) as f64;
        let mut mean = vec![0.0; file.dim];
        for r in &file.records {
            mean.iter_mut().zip(&r.values).for_each(|(m, &v)| *m += f64::from(v) / n);
        }
        let mut var = vec![0.0; file.dim];
        for r in &file.records {
            for ((s, &v), m) in var.iter_mut().zip(&r.values).zip(&mean) {
                *s += (f64::from(v) - m).powi(2) / n;
            }
        }
        let std = var.into_iter().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();
        Self { mean, std }
    }
}

/// dim → hidden → ReLU → dropout → hidden → ReLU → dropout → classes.
#[derive(Debug, Clone)]
pub struct MlpModel {
    input_dim: usize,
    n_classes: usize,
    pub standardizer: Option<Standardizer>,
    fc1: Dense,
    relu1: Relu,
    drop1: Dropout,
    fc2: Dense,
    relu2: Relu,
    drop2: Dropout,
    out: Dense,
}

impl MlpModel {
    pub fn new(
        input_dim: usize,
        hidden: usize,
        n_classes: usize,
        dropout: f64,
        rng: &mut Rng,
    ) -> Result<Self, ClassifierError> {
        if input_dim == 0 || hidden == 0 || n_classes == 0 {
            return Err(ClassifierError::InvalidConfig("layer sizes must be positive".into()));
        }
        Ok(Self {
            input_dim,
            n_classes,
            standardizer: None,
            fc1: Dense::new(input_dim, hidden, rng),
            relu1: Relu::new(),
            drop1: Dropout::new(dropout)?,
            fc2: Dense::new(hidden, hidden, rng),
            relu2: Relu::new(),
            drop2: Dropout::new(dropout)?,
            out: Dense::new(hidden, n_classes, rng),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Records as a `[B, dim]` tensor, standardized if configured.
    pub fn input_tensor<'a>(
        &self,
        rows: impl IntoIterator<Item = &'a [f32]>,
    ) -> Result<Tensor, ClassifierError> {
        let mut data = Vec::new();
        let mut count = 0;
        for row in rows {
            if row.len() != self.input_dim {
                return Err(ClassifierError::DimMismatch {
                    train: self.input_dim,
                    test: row.len(),
                });
            }
            match &self.standardizer {
                Some(s) => data.extend(row.iter().zip(&s.mean).zip(&s.std).map(|((&v, m), sd)| (f64::from(v) - m) / sd)),
                None => data.extend(row.iter().map(|&v| f64::from(v))),
            }
            count += 1;
        }
        Ok(Tensor::from_vec(&[count, self.input_dim], data)?)
    }

    /// Eval-mode logits. Pure.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor, ClassifierError> {
        let h = self.relu1.apply(&self.fc1.apply(x)?);
        let h = self.relu2.apply(&self.fc2.apply(&h)?);
        Ok(self.out.apply(&h)?)
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode, rng: &mut Rng) -> Result<Tensor, ClassifierError> {
        let h = self.fc1.forward(x)?;
        let h = self.relu1.forward(&h);
        let h = self.drop1.forward(&h, mode, rng);
        let h = self.fc2.forward(&h)?;
        let h = self.relu2.forward(&h);
        let h = self.drop2.forward(&h, mode, rng);
        Ok(self.out.forward(&h)?)
    }

    /// Accumulate parameter gradients for `d loss / d logits`.
    pub fn backward(&mut self, grad_logits: &Tensor) -> Result<(), ClassifierError> {
        let g = self.out.backward(grad_logits)?;
        let g = self.drop2.backward(&g)?;
        let g = self.relu2.backward(&g)?;
        let g = self.fc2.backward(&g)?;
        let g = self.drop1.backward(&g)?;
        let g = self.relu1.backward(&g)?;
        self.fc1.backward(&g)?;
        Ok(())
    }

    pub fn activation_pattern(&self) -> Vec<bool> {
        [&self.relu1, &self.relu2]
            .iter()
            .flat_map(|r| r.mask().unwrap_or(&[]).iter().copied())
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut LayerParams)> {
        vec![
            ("fc1", &mut self.fc1.params),
            ("fc2", &mut self.fc2.params),
            ("out", &mut self.out.params),
        ]
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(|(_, p)| p.zero_grad());
    }

    /// Central-difference check of every parameter tensor (up to
    /// `coords_per_tensor` sampled coordinates each) against the analytic
    /// gradient of the batch cross-entropy. Training mode uses the same
    /// dropout masks for every evaluation (`dropout_seed`).
    pub fn gradient_check(
        &mut self,
        x: &Tensor,
        labels: &[usize],
        mode: Mode,
        dropout_seed: u64,
        coords_per_tensor: usize,
        sampler: &mut Rng,
    ) -> Result<GradCheckReport, ClassifierError> {
        self.zero_grad();
        let logits = self.forward(x, mode, &mut Rng::new(dropout_seed))?;
        let (_, grad) = softmax_xent(&logits, labels)?;
        self.backward(&grad)?;
        // `backward` consumed the masks; recompute them.
        self.forward(x, mode, &mut Rng::new(dropout_seed))?;
        let base = self.activation_pattern();
        let analytic: Vec<(&'static str, Vec<f64>, Vec<f64>)> = self
            .params_mut()
            .into_iter()
            .map(|(n, p)| (n, p.grad_weights.data().to_vec(), p.grad_bias.data().to_vec()))
            .collect();
        let mut report = GradCheckReport::default();
        for (layer, (name, gw, gb)) in analytic.iter().enumerate() {
            for (is_bias, grads) in [(false, gw), (true, gb)] {
                let indices = sample_indices(grads.len(), coords_per_tensor, sampler);
                let label = format!("{name}.{}", if is_bias { "b" } else { "w" });
                let r = check_coordinates(&label, grads, &indices, FD_STEP, &base, |i, d| {
                    let original = self.param_slot(layer, is_bias, i);
                    *self.param_slot_mut(layer, is_bias, i) = original + d;
                    let logits = self.forward(x, mode, &mut Rng::new(dropout_seed)).expect("shapes checked");
                    let loss = softmax_xent(&logits, labels).expect("labels checked").0;
                    *self.param_slot_mut(layer, is_bias, i) = original;
                    Probe {
                        loss,
                        pattern: self.activation_pattern(),
                    }
                });
                report.merge(r);
            }
        }
        Ok(report)
    }

    fn param_slot(&mut self, layer: usize, bias: bool, i: usize) -> f64 {
        *self.param_slot_mut(layer, bias, i)
    }

    fn param_slot_mut(&mut self, layer: usize, bias: bool, i: usize) -> &mut f64 {
        let p = self.params_mut().swap_remove(layer).1;
        if bias {
            &mut p.bias.data_mut()[i]
        } else {
            &mut p.weights.data_mut()[i]
        }
    }

    pub fn predict(&self, features: &[f32]) -> Result<usize, ClassifierError> {
        let logits = self.logits(&self.input_tensor([features])?)?;
        Ok(argmax(logits.data()))
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<u64>>,
}

fn check_labels(file: &FeatureFile, classes: usize) -> Result<(), ClassifierError> {
    match file.records.iter().find(|r| r.label as usize >= classes) {
        Some(r) => Err(ClassifierError::LabelOutOfRange { label: r.label, classes }),
        None => Ok(()),
    }
}

/// Eval-mode accuracy, mean cross-entropy and confusion matrix.
pub fn evaluate(model: &MlpModel, file: &FeatureFile) -> Result<Evaluation, ClassifierError> {
    if file.records.is_empty() {
        return Err(ClassifierError::EmptyDataset("evaluate"));
    }
    if file.dim != model.input_dim {
        return Err(ClassifierError::DimMismatch {
            train: model.input_dim,
            test: file.dim,
        });
    }
    check_labels(file, model.n_classes)?;
    let k = model.n_classes;
    let mut confusion = vec![vec![0u64; k]; k];
    let mut loss = 0.0;
    for chunk in file.records.chunks(256) {
        let x = model.input_tensor(chunk.iter().map(|r| r.values.as_slice()))?;
        let logits = model.logits(&x)?;
        let labels: Vec<usize> = chunk.iter().map(|r| r.label as usize).collect();
        let (l, _) = softmax_xent(&logits, &labels)?;
        loss += l * chunk.len() as f64;
        for (row, &label) in logits.data().chunks_exact(k).zip(&labels) {
            confusion[label][argmax(row)] += 1;
        }
    }
    let n = file.records.len() as f64;
    let correct: u64 = (0..k).map(|i| confusion[i][i]).sum();
    Ok(Evaluation {
        accuracy: correct as f64 / n,
        loss: loss / n,
        confusion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    /// Mean minibatch loss with dropout active.
    pub train_loss: f64,
    /// Accuracy of the training-mode (dropout) predictions made during the epoch.
    pub train_acc: f64,
    /// Accuracy on the training set in eval mode after the epoch.
    pub train_acc_eval: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    /// Wall-clock training time of the epoch (machine-dependent).
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub kind: String,
    pub dim: usize,
    pub n_classes: usize,
    pub seed: u64,
    pub epochs: Vec<EpochMetrics>,
    /// 1-based epoch of the first maximum of test accuracy; 0 if untrained.
    pub best_epoch: usize,
    /// `confusion[true][predicted]` on the test set at the best epoch.
    pub confusion: Vec<Vec<u64>>,
    pub train_bytes: usize,
    pub test_bytes: usize,
    /// Wall-clock seconds spent in training steps (machine-dependent).
    pub training_seconds: f64,
}

impl EvalReport {
    pub fn best(&self) -> Option<&EpochMetrics> {
        self.epochs.get(self.best_epoch.checked_sub(1)?)
    }

    /// Per-epoch metrics without timing, so reruns are byte-identical.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,train_acc_eval,test_loss,test_acc\n");
        for e in &self.epochs {
            writeln!(
                out,
                "{},{:.12e},{:.6},{:.6},{:.12e},{:.6}",
                e.epoch, e.train_loss, e.train_acc, e.train_acc_eval, e.test_loss, e.test_acc
            )
            .unwrap();
        }
        out
    }
}

fn validate_pair(train: &FeatureFile, test: &FeatureFile) -> Result<(), ClassifierError> {
    if train.records.is_empty() {
        return Err(ClassifierError::EmptyDataset("train on"));
    }
    if test.records.is_empty() {
        return Err(ClassifierError::EmptyDataset("evaluate"));
    }
    if train.dim != test.dim {
        return Err(ClassifierError::DimMismatch {
            train: train.dim,
            test: test.dim,
        });
    }
    if train.num_classes != test.num_classes {
        return Err(ClassifierError::ClassMismatch {
            train: train.num_classes,
            test: test.num_classes,
        });
    }
    if train.kind != test.kind {
        return Err(ClassifierError::KindMismatch {
            train: train.kind.name(),
            test: test.kind.name(),
        });
    }
    check_labels(train, train.num_classes)?;
    check_labels(test, test.num_classes)
}

/// Minibatch cross-entropy training; returns the model of the best epoch
/// (highest test accuracy, earliest on ties).
pub fn train_mlp(
    train: &FeatureFile,
    test: &FeatureFile,
    cfg: &ClassifierConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<(MlpModel, EvalReport), ClassifierError> {
    validate_pair(train, test)?;
    if cfg.batch_size == 0 {
        return Err(ClassifierError::InvalidConfig("batch size must be positive".into()));
    }
    if !(cfg.learning_rate.is_finite() && cfg.learning_rate >= 0.0) {
        return Err(ClassifierError::InvalidConfig(format!("learning rate {}", cfg.learning_rate)));
    }
    let k = train.num_classes;
    let mut model = MlpModel::new(train.dim, cfg.hidden, k, cfg.dropout, &mut Rng::for_stage(cfg.seed, "mlp-init"))?;
    if cfg.standardize {
        model.standardizer = Some(Standardizer::fit(train));
    }
    let mut shuffle_rng = Rng::for_stage(cfg.seed, "mlp-shuffle");
    let mut dropout_rng = Rng::for_stage(cfg.seed, "mlp-dropout");
    let mut adam = Adam::new(AdamConfig {
        learning_rate: cfg.learning_rate,
        ..AdamConfig::default()
    });
    let mut report = EvalReport {
        kind: train.kind.name().to_string(),
        dim: train.dim,
        n_classes: k,
        seed: cfg.seed,
        epochs: Vec::new(),
        best_epoch: 0,
        confusion: evaluate(&model, test)?.confusion,
        train_bytes: train.byte_len(),
        test_bytes: test.byte_len(),
        training_seconds: 0.0,
    };
    let mut best: Option<(f64, MlpModel)> = None;
    let mut order: Vec<usize> = (0..train.records.len()).collect();
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        shuffle_rng.shuffle(&mut order);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for idx in order.chunks(cfg.batch_size) {
            let x = model.input_tensor(idx.iter().map(|&i| train.records[i].values.as_slice()))?;
            let labels: Vec<usize> = idx.iter().map(|&i| train.records[i].label as usize).collect();
            model.zero_grad();
            let logits = model.forward(&x, Mode::Train, &mut dropout_rng)?;
            let (loss, grad) = softmax_xent(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(ClassifierError::DivergedLoss { epoch });
            }
            model.backward(&grad)?;
            let mut layers: Vec<_> = model.params_mut().into_iter().map(|(_, p)| p).collect();
            adam.step(&mut layers);
            loss_sum += loss * idx.len() as f64;
            correct += logits
                .data()
                .chunks_exact(k)
                .zip(&labels)
                .filter(|(row, &l)| argmax(row) == l)
                .count();
        }
        let seconds = started.elapsed().as_secs_f64();
        report.training_seconds += seconds;
        let n = train.records.len() as f64;
        let train_eval = evaluate(&model, train)?;
        let test_eval = evaluate(&model, test)?;
        let metrics = EpochMetrics {
            epoch,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            train_acc_eval: train_eval.accuracy,
            test_loss: test_eval.loss,
            test_acc: test_eval.accuracy,
            seconds,
        };
        if best.as_ref().is_none_or(|(acc, _)| test_eval.accuracy > *acc) {
            best = Some((test_eval.accuracy, model.clone()));
            report.best_epoch = epoch;
            report.confusion = test_eval.confusion;
        }
        on_epoch(&metrics);
        report.epochs.push(metrics);
    }
    Ok((best.map_or(model, |(_, m)| m), report))
}
