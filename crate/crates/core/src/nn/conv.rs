//! 2-D convolution and its transpose via im2col + GEMM.
//!
//! Weight layouts follow the usual convention: a convolution mapping `C`
//! channels to `O` channels stores `[O, C, K, K]`; a transposed convolution
//! mapping `Cin` to `Cout` stores `[Cin, Cout, K, K]`, so that it is exactly
//! the input-gradient pass of the convolution sharing its weights.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

use super::layers::{glorot_uniform, LayerParams};
use super::{NnError, Tensor};
use crate::rng::Rng;

pub fn conv_output_len(len: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize, NnError> {
    if stride == 0 || kernel == 0 || len + 2 * pad < kernel {
        return Err(NnError::ShapeMismatch(format!(
            "kernel {kernel} (stride {stride}, pad {pad}) does not fit length {len}"
        )));
    }
    Ok((len + 2 * pad - kernel) / stride + 1)
}

pub fn conv_transpose_output_len(
    len: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Result<usize, NnError> {
    let full = len.saturating_sub(1) * stride + kernel;
    if len == 0 || stride == 0 || full <= 2 * pad {
        return Err(NnError::ShapeMismatch(format!(
            "transposed kernel {kernel} (stride {stride}, pad {pad}) gives empty output for length {len}"
        )));
    }
    Ok(full - 2 * pad)
}

/// Geometry of a convolution over a `channels x height x width` input.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn new(
        channels: usize,
        height: usize,
        width: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self, NnError> {
        Ok(Self {
            channels,
            height,
            width,
            kernel,
            stride,
            pad,
            out_h: conv_output_len(height, kernel, stride, pad)?,
            out_w: conv_output_len(width, kernel, stride, pad)?,
        })
    }

    fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    fn plane(&self) -> usize {
        self.height * self.width
    }

    /// Input column feeding output column `j` through kernel tap `v`.
    fn source(&self, out: usize, tap: usize, len: usize) -> Option<usize> {
        let idx = (out * self.stride + tap) as isize - self.pad as isize;
        (0..len as isize).contains(&idx).then_some(idx as usize)
    }
}

fn im2col(x: &[f64], g: &Geometry, cols: &mut [f64]) {
    let k = g.kernel;
    let positions = g.positions();
    for c in 0..g.channels {
        let plane = &x[c * g.plane()..(c + 1) * g.plane()];
        for u in 0..k {
            for v in 0..k {
                let row = &mut cols[((c * k + u) * k + v) * positions..][..positions];
                for i in 0..g.out_h {
                    let dst = &mut row[i * g.out_w..(i + 1) * g.out_w];
                    let Some(hi) = g.source(i, u, g.height) else {
                        dst.fill(0.0);
                        continue;
                    };
                    let src = &plane[hi * g.width..(hi + 1) * g.width];
                    for (j, d) in dst.iter_mut().enumerate() {
                        *d = g.source(j, v, g.width).map_or(0.0, |wi| src[wi]);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back onto the input grid.
fn col2im(cols: &[f64], g: &Geometry, x: &mut [f64]) {
    let k = g.kernel;
    let positions = g.positions();
    for c in 0..g.channels {
        let plane = &mut x[c * g.plane()..(c + 1) * g.plane()];
        for u in 0..k {
            for v in 0..k {
                let row = &cols[((c * k + u) * k + v) * positions..][..positions];
                for i in 0..g.out_h {
                    let Some(hi) = g.source(i, u, g.height) else {
                        continue;
                    };
                    let dst = &mut plane[hi * g.width..(hi + 1) * g.width];
                    for (j, &val) in row[i * g.out_w..(i + 1) * g.out_w].iter().enumerate() {
                        if let Some(wi) = g.source(j, v, g.width) {
                            dst[wi] += val;
                        }
                    }
                }
            }
        }
    }
}

fn view(data: &[f64], rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((rows, cols), data).expect("gemm operand sized by caller")
}

fn view_mut(data: &mut [f64], rows: usize, cols: usize) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((rows, cols), data).expect("gemm output sized by caller")
}

fn expect_weight(weight: &Tensor, what: &str) -> Result<[usize; 4], NnError> {
    let dims = weight.dims4()?;
    if dims[2] != dims[3] {
        return Err(NnError::ShapeMismatch(format!("{what}: square kernels only, got {dims:?}")));
    }
    Ok(dims)
}

fn add_channel_bias(out: &mut [f64], bias: &[f64], positions: usize) {
    for (chunk, &b) in out.chunks_exact_mut(positions).zip(bias.iter().cycle()) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

/// `out[b,o,i,j] = bias[o] + sum_{c,u,v} in[b,c,i*s+u-pad,j*s+v-pad] * w[o,c,u,v]`,
/// zero outside the input.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Result<Tensor, NnError> {
    let [batch, channels, height, width] = input.dims4()?;
    let [out_ch, in_ch, k, _] = expect_weight(weight, "conv2d")?;
    if in_ch != channels {
        return Err(NnError::ShapeMismatch(format!(
            "conv2d: input has {channels} channels, kernel expects {in_ch}"
        )));
    }
    if let Some(b) = bias {
        if b.len() != out_ch {
            return Err(NnError::ShapeMismatch(format!("conv2d: bias length {} != {out_ch}", b.len())));
        }
    }
    let g = Geometry::new(channels, height, width, k, stride, pad)?;
    let (patch, positions) = (g.patch_len(), g.positions());
    let mut out = Tensor::zeros(&[batch, out_ch, g.out_h, g.out_w]);
    let mut cols = vec![0.0; patch * positions];
    let w = view(weight.data(), out_ch, patch);
    let per_in = channels * g.plane();
    let per_out = out_ch * positions;
    for b in 0..batch {
        im2col(&input.data()[b * per_in..(b + 1) * per_in], &g, &mut cols);
        let dst = &mut out.data_mut()[b * per_out..(b + 1) * per_out];
        general_mat_mul(1.0, &w, &view(&cols, patch, positions), 0.0, &mut view_mut(dst, out_ch, positions));
        if let Some(bias) = bias {
            add_channel_bias(dst, bias.data(), positions);
        }
    }
    Ok(out)
}

/// Gradient of [`conv2d`] with respect to its input, for an input of spatial
/// size `input_hw`.
pub fn conv2d_input_grad(
    grad_out: &Tensor,
    weight: &Tensor,
    input_hw: (usize, usize),
    stride: usize,
    pad: usize,
) -> Result<Tensor, NnError> {
    let [batch, out_ch, out_h, out_w] = grad_out.dims4()?;
    let [w_out, channels, k, _] = expect_weight(weight, "conv2d input grad")?;
    let g = Geometry::new(channels, input_hw.0, input_hw.1, k, stride, pad)?;
    if w_out != out_ch || g.out_h != out_h || g.out_w != out_w {
        return Err(NnError::ShapeMismatch(format!(
            "conv2d input grad: grad {:?} inconsistent with kernel {:?} on {}x{}",
            grad_out.shape(),
            weight.shape(),
            input_hw.0,
            input_hw.1
        )));
    }
    let (patch, positions) = (g.patch_len(), g.positions());
    let mut grad_in = Tensor::zeros(&[batch, channels, g.height, g.width]);
    let mut cols = vec![0.0; patch * positions];
    let w = view(weight.data(), out_ch, patch);
    let per_in = channels * g.plane();
    let per_out = out_ch * positions;
    for b in 0..batch {
        let gy = view(&grad_out.data()[b * per_out..(b + 1) * per_out], out_ch, positions);
        general_mat_mul(1.0, &w.t(), &gy, 0.0, &mut view_mut(&mut cols, patch, positions));
        col2im(&cols, &g, &mut grad_in.data_mut()[b * per_in..(b + 1) * per_in]);
    }
    Ok(grad_in)
}

/// Gradient of [`conv2d`] with respect to a square `kernel x kernel` weight.
pub fn conv2d_weight_grad(
    input: &Tensor,
    grad_out: &Tensor,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Result<Tensor, NnError> {
    let [batch, channels, height, width] = input.dims4()?;
    let [g_batch, out_ch, out_h, out_w] = grad_out.dims4()?;
    let g = Geometry::new(channels, height, width, kernel, stride, pad)?;
    if g_batch != batch || g.out_h != out_h || g.out_w != out_w {
        return Err(NnError::ShapeMismatch(format!(
            "conv2d weight grad: input {:?} and grad {:?} disagree",
            input.shape(),
            grad_out.shape()
        )));
    }
    let (patch, positions) = (g.patch_len(), g.positions());
    let mut grad_w = Tensor::zeros(&[out_ch, channels, kernel, kernel]);
    let mut cols = vec![0.0; patch * positions];
    let per_in = channels * g.plane();
    let per_out = out_ch * positions;
    for b in 0..batch {
        im2col(&input.data()[b * per_in..(b + 1) * per_in], &g, &mut cols);
        let gy = view(&grad_out.data()[b * per_out..(b + 1) * per_out], out_ch, positions);
        general_mat_mul(
            1.0,
            &gy,
            &view(&cols, patch, positions).t(),
            1.0,
            &mut view_mut(grad_w.data_mut(), out_ch, patch),
        );
    }
    Ok(grad_w)
}

/// Output spatial size `(H - 1) * stride - 2 * pad + K`.
pub fn conv_transpose2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Result<Tensor, NnError> {
    let [_, _, height, width] = input.dims4()?;
    let [_, out_ch, k, _] = expect_weight(weight, "conv_transpose2d")?;
    let out_hw = (
        conv_transpose_output_len(height, k, stride, pad)?,
        conv_transpose_output_len(width, k, stride, pad)?,
    );
    let mut out = conv2d_input_grad(input, weight, out_hw, stride, pad)?;
    if let Some(bias) = bias {
        if bias.len() != out_ch {
            return Err(NnError::ShapeMismatch(format!(
                "conv_transpose2d: bias length {} != {out_ch}",
                bias.len()
            )));
        }
        add_channel_bias(out.data_mut(), bias.data(), out_hw.0 * out_hw.1);
    }
    Ok(out)
}

fn sum_per_channel(grad: &Tensor, acc: &mut [f64]) -> Result<(), NnError> {
    let [_, channels, h, w] = grad.dims4()?;
    for (i, chunk) in grad.data().chunks_exact(h * w).enumerate() {
        acc[i % channels] += chunk.iter().sum::<f64>();
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub params: LayerParams,
    pub stride: usize,
    pub pad: usize,
    input: Option<Tensor>,
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut Rng,
    ) -> Self {
        let area = kernel * kernel;
        let weights = glorot_uniform(
            &[out_channels, in_channels, kernel, kernel],
            in_channels * area,
            out_channels * area,
            rng,
        );
        Self::from_params(LayerParams::new(weights, Tensor::zeros(&[out_channels])), stride, pad)
    }

    pub fn from_params(params: LayerParams, stride: usize, pad: usize) -> Self {
        Self {
            params,
            stride,
            pad,
            input: None,
        }
    }

    pub fn kernel(&self) -> usize {
        self.params.weights.shape()[2]
    }

    pub fn apply(&self, input: &Tensor) -> Result<Tensor, NnError> {
        let out = conv2d(input, &self.params.weights, Some(&self.params.bias), self.stride, self.pad)?;
        out.check_finite("conv2d output")?;
        Ok(out)
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor, NnError> {
        let out = self.apply(input)?;
        self.input = Some(input.clone());
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor, NnError> {
        let input = self.input.take().ok_or(NnError::GraphNotEvaluated("conv2d"))?;
        let [_, _, h, w] = input.dims4()?;
        let gw = conv2d_weight_grad(&input, grad_out, self.kernel(), self.stride, self.pad)?;
        self.params.accumulate_weights(&gw);
        sum_per_channel(grad_out, self.params.grad_bias.data_mut())?;
        let grad_in = conv2d_input_grad(grad_out, &self.params.weights, (h, w), self.stride, self.pad)?;
        grad_in.check_finite("conv2d input gradient")?;
        Ok(grad_in)
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub params: LayerParams,
    pub stride: usize,
    pub pad: usize,
    input: Option<Tensor>,
}

impl ConvTranspose2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut Rng,
    ) -> Self {
        let area = kernel * kernel;
        let weights = glorot_uniform(
            &[in_channels, out_channels, kernel, kernel],
            in_channels * area,
            out_channels * area,
            rng,
        );
        Self::from_params(LayerParams::new(weights, Tensor::zeros(&[out_channels])), stride, pad)
    }

    pub fn from_params(params: LayerParams, stride: usize, pad: usize) -> Self {
        Self {
            params,
            stride,
            pad,
            input: None,
        }
    }

    pub fn kernel(&self) -> usize {
        self.params.weights.shape()[2]
    }

    pub fn apply(&self, input: &Tensor) -> Result<Tensor, NnError> {
        let out = conv_transpose2d(input, &self.params.weights, Some(&self.params.bias), self.stride, self.pad)?;
        out.check_finite("conv_transpose2d output")?;
        Ok(out)
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor, NnError> {
        let out = self.apply(input)?;
        self.input = Some(input.clone());
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor, NnError> {
        let input = self.input.take().ok_or(NnError::GraphNotEvaluated("conv_transpose2d"))?;
        let gw = conv2d_weight_grad(grad_out, &input, self.kernel(), self.stride, self.pad)?;
        self.params.accumulate_weights(&gw);
        sum_per_channel(grad_out, self.params.grad_bias.data_mut())?;
        let grad_in = conv2d(grad_out, &self.params.weights, None, self.stride, self.pad)?;
        grad_in.check_finite("conv_transpose2d input gradient")?;
        Ok(grad_in)
    }
}
