use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

use super::{NnError, Tensor};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Weights, bias and their accumulated gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Tensor,
    pub bias: Tensor,
    pub grad_weights: Tensor,
    pub grad_bias: Tensor,
}

impl LayerParams {
    pub fn new(weights: Tensor, bias: Tensor) -> Self {
        Self {
            grad_weights: Tensor::zeros(weights.shape()),
            grad_bias: Tensor::zeros(bias.shape()),
            weights,
            bias,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad_weights.fill(0.0);
        self.grad_bias.fill(0.0);
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub(crate) fn accumulate_weights(&mut self, grad: &Tensor) {
        for (g, d) in self.grad_weights.data_mut().iter_mut().zip(grad.data()) {
            *g += d;
        }
    }
}

/// Glorot/Xavier uniform: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, || rng.uniform(-limit, limit))
}

/// Fully connected: `out = in * W^T + b`, `W` is `[out, in]`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub params: LayerParams,
    input: Option<Tensor>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let weights = glorot_uniform(&[outputs, inputs], inputs, outputs, rng);
        Self::from_params(LayerParams::new(weights, Tensor::zeros(&[outputs])))
    }

    pub fn from_params(params: LayerParams) -> Self {
        Self { params, input: None }
    }

    pub fn inputs(&self) -> usize {
        self.params.weights.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.params.weights.shape()[0]
    }

    pub fn apply(&self, input: &Tensor) -> Result<Tensor, NnError> {
        let [batch, features] = input.dims2()?;
        let (outs, ins) = (self.outputs(), self.inputs());
        if features != ins {
            return Err(NnError::ShapeMismatch(format!("dense: {features} inputs, layer expects {ins}")));
        }
        let mut out = Tensor::zeros(&[batch, outs]);
        for row in out.data_mut().chunks_exact_mut(outs) {
            row.copy_from_slice(self.params.bias.data());
        }
        let x = ArrayView2::from_shape((batch, ins), input.data()).expect("checked");
        let w = ArrayView2::from_shape((outs, ins), self.params.weights.data()).expect("checked");
        let mut y = ArrayViewMut2::from_shape((batch, outs), out.data_mut()).expect("checked");
        general_mat_mul(1.0, &x, &w.t(), 1.0, &mut y);
        out.check_finite("dense output")?;
        Ok(out)
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor, NnError> {
        let out = self.apply(input)?;
        self.input = Some(input.clone());
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor, NnError> {
        let input = self.input.take().ok_or(NnError::GraphNotEvaluated("dense"))?;
        let [batch, outs] = grad_out.dims2()?;
        let ins = self.inputs();
        if outs != self.outputs() || input.shape()[0] != batch {
            return Err(NnError::ShapeMismatch(format!(
                "dense backward: grad {:?} vs input {:?}",
                grad_out.shape(),
                input.shape()
            )));
        }
        let gy = ArrayView2::from_shape((batch, outs), grad_out.data()).expect("checked");
        let x = ArrayView2::from_shape((batch, ins), input.data()).expect("checked");
        {
            let mut gw = ArrayViewMut2::from_shape((outs, ins), self.params.grad_weights.data_mut())
                .expect("checked");
            general_mat_mul(1.0, &gy.t(), &x, 1.0, &mut gw);
        }
        for row in grad_out.data().chunks_exact(outs) {
            for (g, v) in self.params.grad_bias.data_mut().iter_mut().zip(row) {
                *g += v;
            }
        }
        let mut grad_in = Tensor::zeros(&[batch, ins]);
        let w = ArrayView2::from_shape((outs, ins), self.params.weights.data()).expect("checked");
        let mut gx = ArrayViewMut2::from_shape((batch, ins), grad_in.data_mut()).expect("checked");
        general_mat_mul(1.0, &gy, &w, 0.0, &mut gx);
        grad_in.check_finite("dense input gradient")?;
        Ok(grad_in)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn apply(&self, input: &Tensor) -> Tensor {
        let mut out = input.clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        out
    }

    pub fn forward(&mut self, input: &Tensor) -> Tensor {
        self.mask = Some(input.data().iter().map(|&v| v > 0.0).collect());
        self.apply(input)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor, NnError> {
        let mask = self.mask.take().ok_or(NnError::GraphNotEvaluated("relu"))?;
        if mask.len() != grad_out.len() {
            return Err(NnError::ShapeMismatch("relu backward: gradient size differs".into()));
        }
        let mut grad = grad_out.clone();
        for (g, &keep) in grad.data_mut().iter_mut().zip(&mask) {
            if !keep {
                *g = 0.0;
            }
        }
        Ok(grad)
    }

    /// Activation pattern of the last `forward`, if any.
    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }
}

/// Mean over the spatial axes: `[B, C, H, W] -> [B, C]`.
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    input_shape: Option<[usize; 4]>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn apply(&self, input: &Tensor) -> Result<Tensor, NnError> {
        let [b, c, h, w] = input.dims4()?;
        let area = (h * w) as f64;
        let data = input
            .data()
            .chunks_exact(h * w)
            .map(|plane| plane.iter().sum::<f64>() / area)
            .collect();
        Tensor::from_vec(&[b, c], data)
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor, NnError> {
        self.input_shape = Some(input.dims4()?);
        self.apply(input)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor, NnError> {
        let [b, c, h, w] = self.input_shape.take().ok_or(NnError::GraphNotEvaluated("global_avg_pool"))?;
        if grad_out.shape() != [b, c] {
            return Err(NnError::ShapeMismatch(format!(
                "global_avg_pool backward: expected [{b}, {c}], got {:?}",
                grad_out.shape()
            )));
        }
        let area = (h * w) as f64;
        let mut grad = Tensor::zeros(&[b, c, h, w]);
        for (plane, &g) in grad.data_mut().chunks_exact_mut(h * w).zip(grad_out.data()) {
            plane.fill(g / area);
        }
        Ok(grad)
    }
}

/// Inverted dropout: in training, zero with probability `rate` and scale
/// survivors by `1 / (1 - rate)`; identity in evaluation.
#[derive(Debug, Clone)]
pub struct Dropout {
    rate: f64,
    scale_mask: Option<Vec<f64>>,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self, NnError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NnError::InvalidRate(rate));
        }
        Ok(Self {
            rate,
            scale_mask: None,
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn forward(&mut self, input: &Tensor, mode: Mode, rng: &mut Rng) -> Tensor {
        if mode == Mode::Eval || self.rate == 0.0 {
            self.scale_mask = Some(vec![1.0; input.len()]);
            return input.clone();
        }
        let keep_scale = 1.0 / (1.0 - self.rate);
        let mask: Vec<f64> = (0..input.len())
            .map(|_| if rng.bernoulli(self.rate) { 0.0 } else { keep_scale })
            .collect();
        let mut out = input.clone();
        out.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        self.scale_mask = Some(mask);
        out
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor, NnError> {
        let mask = self.scale_mask.take().ok_or(NnError::GraphNotEvaluated("dropout"))?;
        let mut grad = grad_out.clone();
        grad.data_mut().iter_mut().zip(&mask).for_each(|(g, m)| *g *= m);
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gap_channel_means() {
        let x = Tensor::from_vec(&[1, 2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 2.0, 2.0]).unwrap();
        let out = GlobalAvgPool::new().apply(&x).unwrap();
        assert_eq!(out.shape(), &[1, 2]);
        assert_eq!(out.data(), &[2.5, 1.0]);
    }

    #[test]
    fn dropout_zero_rate_is_identity() {
        let mut rng = Rng::new(0);
        let x = Tensor::from_vec(&[1, 3], vec![1.0, -2.0, 3.0]).unwrap();
        let mut d = Dropout::new(0.0).unwrap();
        assert_eq!(d.forward(&x, Mode::Train, &mut rng), x);
        assert_eq!(d.forward(&x, Mode::Eval, &mut rng), x);
        let mut d = Dropout::new(0.5).unwrap();
        assert_eq!(d.forward(&x, Mode::Eval, &mut rng), x);
    }

    #[test]
    fn dropout_rate_validation() {
        assert!(matches!(Dropout::new(1.0), Err(NnError::InvalidRate(_))));
        assert!(matches!(Dropout::new(-0.1), Err(NnError::InvalidRate(_))));
    }

    #[test]
    fn inverted_dropout_preserves_expectation() {
        let mut rng = Rng::new(42);
        let mut d = Dropout::new(0.2).unwrap();
        let one = Tensor::from_vec(&[1, 1], vec![1.0]).unwrap();
        let trials = 10_000;
        let mean: f64 = (0..trials)
            .map(|_| d.forward(&one, Mode::Train, &mut rng).data()[0])
            .sum::<f64>()
            / trials as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn dense_forward_values() {
        let params = LayerParams::new(
            Tensor::from_vec(&[2, 3], vec![1.0, 0.0, -1.0, 2.0, 1.0, 0.0]).unwrap(),
            Tensor::from_vec(&[2], vec![0.5, -0.5]).unwrap(),
        );
        let dense = Dense::from_params(params);
        let out = dense.apply(&Tensor::from_vec(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
        assert_eq!(out.data(), &[-1.5, 3.5]);
        assert!(dense.apply(&Tensor::zeros(&[1, 4])).is_err());
    }

    #[test]
    fn relu_backward_masks() {
        let mut relu = Relu::new();
        let x = Tensor::from_vec(&[1, 4], vec![-1.0, 0.0, 2.0, 3.0]).unwrap();
        assert_eq!(relu.forward(&x).data(), &[0.0, 0.0, 2.0, 3.0]);
        let g = relu.backward(&Tensor::from_vec(&[1, 4], vec![1.0; 4]).unwrap()).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0, 1.0]);
        assert!(relu.backward(&x).is_err());
    }
}
