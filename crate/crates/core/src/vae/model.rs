use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::VaeError;
use crate::dsp::{StftConfig, Window};
use crate::nn::gradcheck::{check_coordinates, sample_indices, GradCheckReport, Probe, FD_STEP};
use crate::nn::{
    conv_output_len, conv_transpose_output_len, mse, Conv2d, ConvTranspose2d, Dense, GlobalAvgPool,
    LayerParams, Mode, NamedTensor, NnError, Relu, Tensor,
};
use crate::rng::Rng;

/// Weight of the KL term in the objective `recon + KL_WEIGHT * kl`.
pub const KL_WEIGHT: f64 = 0.0005;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaeConfig {
    pub frames: usize,
    pub bins: usize,
    pub latent_dim: usize,
    pub channels: [usize; 2],
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl VaeConfig {
    /// 8 frames × 128 bins (25 ms) → 13 latent values.
    pub fn patch() -> Self {
        Self {
            frames: 8,
            bins: 128,
            latent_dim: 13,
            channels: [32, 64],
            kernel: 8,
            stride: 2,
            pad: 3,
        }
    }

    /// 96 frames × 128 bins (300 ms) → 40 latent values.
    pub fn window() -> Self {
        Self {
            frames: 96,
            latent_dim: 40,
            ..Self::patch()
        }
    }

    /// Whether this is one of the two reference configurations.
    pub fn is_paper_config(&self) -> bool {
        *self == Self::patch() || *self == Self::window()
    }

    pub fn input_len(&self) -> usize {
        self.frames * self.bins
    }

    /// Spatial size after the two strided convolutions.
    pub fn encoded_hw(&self) -> Result<(usize, usize), VaeError> {
        let down = |n| -> Result<usize, NnError> {
            let once = conv_output_len(n, self.kernel, self.stride, self.pad)?;
            conv_output_len(once, self.kernel, self.stride, self.pad)
        };
        Ok((down(self.frames)?, down(self.bins)?))
    }

    pub fn validate(&self) -> Result<(), VaeError> {
        if self.latent_dim == 0 || self.channels.contains(&0) {
            return Err(VaeError::InvalidConfig("latent size and channel counts must be positive".into()));
        }
        let (h, w) = self.encoded_hw()?;
        let up = |n| -> Result<usize, NnError> {
            let once = conv_transpose_output_len(n, self.kernel, self.stride, self.pad)?;
            conv_transpose_output_len(once, self.kernel, self.stride, self.pad)
        };
        let (dh, dw) = (up(h)?, up(w)?);
        if (dh, dw) != (self.frames, self.bins) {
            return Err(VaeError::InvalidConfig(format!(
                "decoder would produce {dh}x{dw}, input is {}x{}",
                self.frames, self.bins
            )));
        }
        Ok(())
    }
}

/// Loss decomposition `total = recon + KL_WEIGHT * kl`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

impl LossTerms {
    pub fn new(recon: f64, kl: f64) -> Self {
        Self {
            total: recon + KL_WEIGHT * kl,
            recon,
            kl,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.recon.is_finite() && self.kl.is_finite()
    }
}

/// `0.5 * sum(exp(logvar) + mean^2 - 1 - logvar)`: KL from `N(mean, exp(logvar))` to `N(0, I)`.
pub fn kl_divergence(mean: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mean
        .iter()
        .zip(logvar)
        .map(|(m, lv)| lv.exp() + m * m - 1.0 - lv)
        .sum::<f64>()
}

/// Loss of a single reconstruction: mean squared error plus weighted KL.
pub fn vae_loss(
    x: &Array2<f64>,
    x_hat: &Array2<f64>,
    mean: &[f64],
    logvar: &[f64],
) -> Result<LossTerms, VaeError> {
    if x.dim() != x_hat.dim() || mean.len() != logvar.len() {
        return Err(NnError::ShapeMismatch(format!(
            "vae_loss: patches {:?} vs {:?}, latent {} vs {}",
            x.dim(),
            x_hat.dim(),
            mean.len(),
            logvar.len()
        ))
        .into());
    }
    let recon = x.iter().zip(x_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64;
    Ok(LossTerms::new(recon, kl_divergence(mean, logvar)))
}

/// `n` evenly spaced values from `lo` to `hi` inclusive; `n == 1` gives `[lo]`.
pub fn traversal_values(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + i as f64 * (hi - lo) / (n - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentVector {
    pub mean: Vec<f64>,
    pub logvar: Vec<f64>,
    pub sample: Vec<f64>,
}

/// Activations kept from a training forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub mean: Tensor,
    pub logvar: Tensor,
    pub eps: Tensor,
    pub z: Tensor,
    pub output: Tensor,
}

#[derive(Debug, Clone)]
pub struct VaeModel {
    config: VaeConfig,
    /// Compression constant of the input normalization (see `features`).
    pub norm_scale: f64,
    /// Analysis settings the model was trained on.
    pub stft: StftConfig,
    conv1: Conv2d,
    relu1: Relu,
    conv2: Conv2d,
    relu2: Relu,
    pool: GlobalAvgPool,
    mean_head: Dense,
    logvar_head: Dense,
    dec_dense: Dense,
    deconv1: ConvTranspose2d,
    relu3: Relu,
    deconv2: ConvTranspose2d,
    relu4: Relu,
}

const LAYER_NAMES: [&str; 7] = [
    "enc.conv1",
    "enc.conv2",
    "enc.mean",
    "enc.logvar",
    "dec.dense",
    "dec.deconv1",
    "dec.deconv2",
];

fn tensor_from_patch(patch: &Array2<f64>) -> Tensor {
    let (f, b) = patch.dim();
    Tensor::from_vec(&[1, 1, f, b], patch.iter().copied().collect()).expect("sized from patch")
}

fn patch_from_slice(data: &[f64], frames: usize, bins: usize) -> Array2<f64> {
    Array2::from_shape_vec((frames, bins), data.to_vec()).expect("sized by caller")
}

impl VaeModel {
    pub fn new(config: VaeConfig, rng: &mut Rng) -> Result<Self, VaeError> {
        config.validate()?;
        let VaeConfig {
            kernel: k,
            stride: s,
            pad: p,
            latent_dim,
            ..
        } = config;
        let [c1, c2] = config.channels;
        let (h, w) = config.encoded_hw()?;
        Ok(Self {
            config,
            norm_scale: 1.0,
            stft: StftConfig::vae(),
            conv1: Conv2d::new(1, c1, k, s, p, rng),
            relu1: Relu::new(),
            conv2: Conv2d::new(c1, c2, k, s, p, rng),
            relu2: Relu::new(),
            pool: GlobalAvgPool::new(),
            mean_head: Dense::new(c2, latent_dim, rng),
            logvar_head: Dense::new(c2, latent_dim, rng),
            dec_dense: Dense::new(latent_dim, c2 * h * w, rng),
            deconv1: ConvTranspose2d::new(c2, c1, k, s, p, rng),
            relu3: Relu::new(),
            deconv2: ConvTranspose2d::new(c1, 1, k, s, p, rng),
            relu4: Relu::new(),
        })
    }

    pub fn config(&self) -> &VaeConfig {
        &self.config
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn input_shape(&self) -> (usize, usize) {
        (self.config.frames, self.config.bins)
    }

    fn check_input(&self, x: &Tensor) -> Result<usize, VaeError> {
        let [b, c, f, w] = x.dims4()?;
        if c != 1 || (f, w) != self.input_shape() {
            return Err(NnError::ShapeMismatch(format!(
                "model expects [B, 1, {}, {}], got {:?}",
                self.config.frames,
                self.config.bins,
                x.shape()
            ))
            .into());
        }
        Ok(b)
    }

    fn check_latent(&self, z: &Tensor) -> Result<usize, VaeError> {
        let [b, d] = z.dims2()?;
        if d != self.config.latent_dim {
            return Err(NnError::ShapeMismatch(format!(
                "latent has {d} values, model expects {}",
                self.config.latent_dim
            ))
            .into());
        }
        Ok(b)
    }

    fn reshape_dense(&self, t: Tensor, batch: usize) -> Result<Tensor, VaeError> {
        let (h, w) = self.config.encoded_hw()?;
        Ok(t.reshape(&[batch, self.config.channels[1], h, w])?)
    }

    /// Posterior mean and log-variance for a `[B, 1, F, W]` batch. Pure.
    pub fn encode_batch(&self, x: &Tensor) -> Result<(Tensor, Tensor), VaeError> {
        self.check_input(x)?;
        let h = self.relu1.apply(&self.conv1.apply(x)?);
        let h = self.relu2.apply(&self.conv2.apply(&h)?);
        let pooled = self.pool.apply(&h)?;
        Ok((self.mean_head.apply(&pooled)?, self.logvar_head.apply(&pooled)?))
    }

    /// Decode a `[B, latent]` batch to `[B, 1, F, W]`. Pure.
    pub fn decode_batch(&self, z: &Tensor) -> Result<Tensor, VaeError> {
        let batch = self.check_latent(z)?;
        let d = self.reshape_dense(self.dec_dense.apply(z)?, batch)?;
        let d = self.relu3.apply(&self.deconv1.apply(&d)?);
        Ok(self.relu4.apply(&self.deconv2.apply(&d)?))
    }

    /// Eval mode: `sample == mean` and `rng` is untouched. Train mode draws
    /// `eps ~ N(0, I)` and returns `mean + exp(logvar / 2) * eps`.
    pub fn encode(&self, patch: &Array2<f64>, mode: Mode, rng: &mut Rng) -> Result<LatentVector, VaeError> {
        let (mean, logvar) = self.encode_batch(&tensor_from_patch(patch))?;
        let (mean, logvar) = (mean.into_data(), logvar.into_data());
        let sample = match mode {
            Mode::Eval => mean.clone(),
            Mode::Train => mean
                .iter()
                .zip(&logvar)
                .map(|(m, lv)| m + (0.5 * lv).exp() * rng.normal())
                .collect(),
        };
        Ok(LatentVector { mean, logvar, sample })
    }

    pub fn decode(&self, z: &[f64]) -> Result<Array2<f64>, VaeError> {
        let out = self.decode_batch(&Tensor::from_vec(&[1, z.len()], z.to_vec())?)?;
        Ok(patch_from_slice(out.data(), self.config.frames, self.config.bins))
    }

    /// Encode in eval mode, then decode.
    pub fn reconstruct(&self, patch: &Array2<f64>) -> Result<Array2<f64>, VaeError> {
        let (mean, _) = self.encode_batch(&tensor_from_patch(patch))?;
        let out = self.decode_batch(&mean)?;
        Ok(patch_from_slice(out.data(), self.config.frames, self.config.bins))
    }

    /// Decode the zero vector with `component` swept over
    /// [`traversal_values`]`(n_points, lo, hi)`.
    pub fn latent_traversal(
        &self,
        component: usize,
        n_points: usize,
        lo: f64,
        hi: f64,
    ) -> Result<Vec<(f64, Array2<f64>)>, VaeError> {
        let dim = self.config.latent_dim;
        if component >= dim {
            return Err(VaeError::IndexOutOfRange { index: component, len: dim });
        }
        traversal_values(n_points, lo, hi)
            .into_iter()
            .map(|v| {
                let mut z = vec![0.0; dim];
                z[component] = v;
                Ok((v, self.decode(&z)?))
            })
            .collect()
    }

    /// Batch of patches as a `[B, 1, F, W]` tensor.
    pub fn batch_tensor<'a>(
        &self,
        patches: impl IntoIterator<Item = &'a Array2<f64>>,
    ) -> Result<Tensor, VaeError> {
        let mut data = Vec::new();
        let mut count = 0;
        for p in patches {
            if p.dim() != self.input_shape() {
                return Err(NnError::ShapeMismatch(format!(
                    "patch {:?}, model expects {:?}",
                    p.dim(),
                    self.input_shape()
                ))
                .into());
            }
            data.extend(p.iter().copied());
            count += 1;
        }
        Ok(Tensor::from_vec(&[count, 1, self.config.frames, self.config.bins], data)?)
    }

    /// Forward pass that keeps activations for [`VaeModel::backward`].
    pub fn forward(&mut self, x: &Tensor, mode: Mode, rng: &mut Rng) -> Result<ForwardPass, VaeError> {
        self.check_input(x)?;
        let h = self.conv1.forward(x)?;
        let h = self.relu1.forward(&h);
        let h = self.conv2.forward(&h)?;
        let h = self.relu2.forward(&h);
        let pooled = self.pool.forward(&h)?;
        let mean = self.mean_head.forward(&pooled)?;
        let logvar = self.logvar_head.forward(&pooled)?;
        let eps = match mode {
            Mode::Eval => Tensor::zeros(mean.shape()),
            Mode::Train => Tensor::from_fn(mean.shape(), || rng.normal()),
        };
        let mut z = mean.clone();
        for ((zv, lv), e) in z.data_mut().iter_mut().zip(logvar.data()).zip(eps.data()) {
            *zv += (0.5 * lv).exp() * e;
        }
        let batch = mean.shape()[0];
        let d = self.dec_dense.forward(&z)?;
        let d = self.reshape_dense(d, batch)?;
        let d = self.deconv1.forward(&d)?;
        let d = self.relu3.forward(&d);
        let d = self.deconv2.forward(&d)?;
        let output = self.relu4.forward(&d);
        Ok(ForwardPass {
            mean,
            logvar,
            eps,
            z,
            output,
        })
    }

    /// Batch loss of `pass` against targets `x`, with gradients accumulated
    /// into every layer. Recon is the mean over all elements and KL the mean
    /// over the batch.
    pub fn backward(&mut self, x: &Tensor, pass: &ForwardPass) -> Result<LossTerms, VaeError> {
        let terms = self.loss_of(x, pass)?;
        let batch = pass.mean.shape()[0] as f64;
        let (_, grad_out) = mse(&pass.output, x)?;

        let g = self.relu4.backward(&grad_out)?;
        let g = self.deconv2.backward(&g)?;
        let g = self.relu3.backward(&g)?;
        let g = self.deconv1.backward(&g)?;
        let flat = g.shape()[1..].iter().product();
        let g = g.reshape(&[batch as usize, flat])?;
        let grad_z = self.dec_dense.backward(&g)?;

        let mut grad_mean = grad_z.clone();
        let mut grad_logvar = grad_z;
        let kl_scale = KL_WEIGHT / batch;
        for (i, (gm, gl)) in grad_mean
            .data_mut()
            .iter_mut()
            .zip(grad_logvar.data_mut())
            .enumerate()
        {
            let (m, lv, e) = (pass.mean.data()[i], pass.logvar.data()[i], pass.eps.data()[i]);
            *gm += kl_scale * m;
            *gl = *gl * e * 0.5 * (0.5 * lv).exp() + kl_scale * 0.5 * (lv.exp() - 1.0);
        }
        let mut grad_pool = self.mean_head.backward(&grad_mean)?;
        let from_logvar = self.logvar_head.backward(&grad_logvar)?;
        grad_pool
            .data_mut()
            .iter_mut()
            .zip(from_logvar.data())
            .for_each(|(a, b)| *a += b);
        let g = self.pool.backward(&grad_pool)?;
        let g = self.relu2.backward(&g)?;
        let g = self.conv2.backward(&g)?;
        let g = self.relu1.backward(&g)?;
        self.conv1.backward(&g)?;
        Ok(terms)
    }

    /// Loss terms of a forward pass against targets `x`, without gradients.
    pub fn loss_of(&self, x: &Tensor, pass: &ForwardPass) -> Result<LossTerms, VaeError> {
        let batch = self.check_input(x)? as f64;
        let (recon, _) = mse(&pass.output, x)?;
        let kl = pass
            .mean
            .data()
            .chunks_exact(self.config.latent_dim)
            .zip(pass.logvar.data().chunks_exact(self.config.latent_dim))
            .map(|(m, lv)| kl_divergence(m, lv))
            .sum::<f64>()
            / batch;
        Ok(LossTerms::new(recon, kl))
    }

    /// Central-difference check of the total loss against the analytic
    /// gradient, for up to `coords_per_tensor` sampled coordinates of every
    /// parameter tensor. Train mode reuses the noise of `noise_seed` for every
    /// evaluation.
    pub fn gradient_check(
        &mut self,
        x: &Tensor,
        mode: Mode,
        noise_seed: u64,
        coords_per_tensor: usize,
        sampler: &mut Rng,
    ) -> Result<GradCheckReport, VaeError> {
        self.zero_grad();
        let pass = self.forward(x, mode, &mut Rng::new(noise_seed))?;
        self.backward(x, &pass)?;
        // `backward` consumed the masks; recompute them.
        self.forward(x, mode, &mut Rng::new(noise_seed))?;
        let base = self.activation_pattern();
        let analytic: Vec<(&'static str, Vec<f64>, Vec<f64>)> = self
            .params()
            .into_iter()
            .map(|(n, p)| (n, p.grad_weights.data().to_vec(), p.grad_bias.data().to_vec()))
            .collect();
        let mut report = GradCheckReport::default();
        for (layer, (name, gw, gb)) in analytic.iter().enumerate() {
            for (is_bias, grads) in [(false, gw), (true, gb)] {
                let indices = sample_indices(grads.len(), coords_per_tensor, sampler);
                let label = format!("{name}.{}", if is_bias { "b" } else { "w" });
                let r = check_coordinates(&label, grads, &indices, FD_STEP, &base, |i, d| {
                    let original = *self.param_slot(layer, is_bias, i);
                    *self.param_slot(layer, is_bias, i) = original + d;
                    let pass = self.forward(x, mode, &mut Rng::new(noise_seed)).expect("shapes checked");
                    let loss = self.loss_of(x, &pass).expect("shapes checked").total;
                    *self.param_slot(layer, is_bias, i) = original;
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

    fn param_slot(&mut self, layer: usize, bias: bool, i: usize) -> &mut f64 {
        let p = self.params_mut().swap_remove(layer).1;
        if bias {
            &mut p.bias.data_mut()[i]
        } else {
            &mut p.weights.data_mut()[i]
        }
    }

    /// ReLU activation masks of the last [`VaeModel::forward`], concatenated.
    pub fn activation_pattern(&self) -> Vec<bool> {
        [&self.relu1, &self.relu2, &self.relu3, &self.relu4]
            .iter()
            .flat_map(|r| r.mask().unwrap_or(&[]).iter().copied())
            .collect()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(|(_, p)| p.zero_grad());
    }

    /// Trainable layers in a fixed order.
    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut LayerParams)> {
        let layers = [
            &mut self.conv1.params,
            &mut self.conv2.params,
            &mut self.mean_head.params,
            &mut self.logvar_head.params,
            &mut self.dec_dense.params,
            &mut self.deconv1.params,
            &mut self.deconv2.params,
        ];
        LAYER_NAMES.into_iter().zip(layers).collect()
    }

    pub fn params(&self) -> Vec<(&'static str, &LayerParams)> {
        let layers = [
            &self.conv1.params,
            &self.conv2.params,
            &self.mean_head.params,
            &self.logvar_head.params,
            &self.dec_dense.params,
            &self.deconv1.params,
            &self.deconv2.params,
        ];
        LAYER_NAMES.into_iter().zip(layers).collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|(_, p)| p.num_params()).sum()
    }

    /// Parameters plus the metadata needed to rebuild the model.
    pub fn to_checkpoint(&self) -> Vec<NamedTensor> {
        let c = &self.config;
        let meta = |v: Vec<f64>| Tensor::from_vec(&[v.len()], v).expect("1-d");
        let mut out = vec![
            NamedTensor::new(
                "meta.config",
                meta(
                    [c.frames, c.bins, c.latent_dim, c.channels[0], c.channels[1], c.kernel, c.stride, c.pad]
                        .map(|v| v as f64)
                        .to_vec(),
                ),
            ),
            NamedTensor::new("meta.norm_scale", meta(vec![self.norm_scale])),
            NamedTensor::new(
                "meta.stft",
                meta(vec![
                    self.stft.win_length as f64,
                    self.stft.hop_length as f64,
                    self.stft.n_fft as f64,
                    self.stft.window.code() as f64,
                ]),
            ),
        ];
        for (name, p) in self.params() {
            out.push(NamedTensor::new(format!("{name}.w"), p.weights.clone()));
            out.push(NamedTensor::new(format!("{name}.b"), p.bias.clone()));
        }
        out
    }

    pub fn from_checkpoint(tensors: &[NamedTensor]) -> Result<Self, VaeError> {
        let find = |name: &str| -> Result<&Tensor, VaeError> {
            tensors
                .iter()
                .find(|t| t.name == name)
                .map(|t| &t.tensor)
                .ok_or_else(|| NnError::MissingTensor(name.to_string()).into())
        };
        let ints = |name: &str, n: usize| -> Result<Vec<usize>, VaeError> {
            let t = find(name)?;
            if t.len() != n || t.data().iter().any(|v| v.fract() != 0.0 || *v < 0.0) {
                return Err(VaeError::InvalidConfig(format!("malformed `{name}`")));
            }
            Ok(t.data().iter().map(|&v| v as usize).collect())
        };
        let c = ints("meta.config", 8)?;
        let config = VaeConfig {
            frames: c[0],
            bins: c[1],
            latent_dim: c[2],
            channels: [c[3], c[4]],
            kernel: c[5],
            stride: c[6],
            pad: c[7],
        };
        let s = ints("meta.stft", 4)?;
        let window = Window::from_code(s[3] as u32)
            .ok_or_else(|| VaeError::InvalidConfig(format!("unknown window code {}", s[3])))?;
        let stft = StftConfig::new(s[0], s[1], s[2], window)?;
        let norm = find("meta.norm_scale")?;
        if norm.len() != 1 || !(norm.data()[0] > 0.0) {
            return Err(VaeError::InvalidConfig("malformed `meta.norm_scale`".into()));
        }
        let mut model = Self::new(config, &mut Rng::new(0))?;
        model.norm_scale = norm.data()[0];
        model.stft = stft;
        for (name, params) in model.params_mut() {
            let w = find(&format!("{name}.w"))?;
            let b = find(&format!("{name}.b"))?;
            if w.shape() != params.weights.shape() || b.shape() != params.bias.shape() {
                return Err(NnError::ShapeMismatch(format!(
                    "`{name}`: checkpoint {:?}/{:?}, model {:?}/{:?}",
                    w.shape(),
                    b.shape(),
                    params.weights.shape(),
                    params.bias.shape()
                ))
                .into());
            }
            *params = LayerParams::new(w.clone(), b.clone());
        }
        Ok(model)
    }
}
