//! Minimal CNN building blocks: same-padded 2-D convolution with exact
//! analytic gradients, ReLU, mean-squared-error loss, and plain SGD.
//!
//! Convolution sums are accumulated in f64 to reduce order dependence;
//! stored values are f32 throughout.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};

/// A 3-axis tensor in (channel, row, column) row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(CoreError::InvalidArgument(format!(
                "tensor dims must be positive, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(CoreError::InvalidArgument(format!(
                "data length {} does not match shape {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Tensor { channels, height, width, data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// One channel plane as a contiguous row-major slice.
    pub fn plane(&self, channel: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[channel * n..(channel + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise difference `self - other`.
    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        check_same_shape(self, other, "sub")?;
        Ok(Tensor {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| a - b)
                .collect(),
        })
    }

    pub fn clamp01(&self) -> Tensor {
        self.map(|v| v.clamp(0.0, 1.0))
    }
}

fn check_same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(CoreError::InvalidArgument(format!(
            "{op}: shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// One same-padded stride-1 convolution layer shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || kernel == 0 {
            return Err(CoreError::InvalidArgument(format!(
                "conv spec fields must be positive: in={in_channels} out={out_channels} kernel={kernel}"
            )));
        }
        if kernel % 2 == 0 {
            return Err(CoreError::InvalidArgument(format!("kernel must be odd, got {kernel}")));
        }
        Ok(ConvSpec { in_channels, out_channels, kernel })
    }

    pub fn padding(&self) -> usize {
        self.kernel / 2
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }

    /// Weights plus biases.
    pub fn param_count(&self) -> usize {
        self.weight_len() + self.out_channels
    }
}

/// Gradients of one convolution layer.
#[derive(Debug, Clone)]
pub struct LayerGradients {
    /// Shaped out_channels x in_channels x kernel x kernel, flattened.
    pub weight_grad: Vec<f32>,
    pub bias_grad: Vec<f32>,
    pub input_grad: Tensor,
}

fn check_conv_args(
    input: &Tensor,
    spec: &ConvSpec,
    weights: &[f32],
    bias: &[f32],
) -> Result<()> {
    if input.channels() != spec.in_channels {
        return Err(CoreError::InvalidArgument(format!(
            "input channel axis is {}, spec expects {}",
            input.channels(),
            spec.in_channels
        )));
    }
    if weights.len() != spec.weight_len() {
        return Err(CoreError::InvalidArgument(format!(
            "weight length {} does not match spec axis product {}",
            weights.len(),
            spec.weight_len()
        )));
    }
    if bias.len() != spec.out_channels {
        return Err(CoreError::InvalidArgument(format!(
            "bias axis is {}, spec expects {}",
            bias.len(),
            spec.out_channels
        )));
    }
    Ok(())
}

/// Same-padded stride-1 convolution.
///
/// `out[c,y,x] = bias[c] + sum_i,dy,dx w[c,i,dy,dx] * padded_in[i, y+dy, x+dx]`
/// with zero padding of kernel/2 on each side.
pub fn conv2d_forward(
    input: &Tensor,
    spec: &ConvSpec,
    weights: &[f32],
    bias: &[f32],
) -> Result<Tensor> {
    check_conv_args(input, spec, weights, bias)?;
    let (h, w) = (input.height(), input.width());
    let k = spec.kernel;
    let pad = spec.padding();
    let mut out = vec![0.0f32; spec.out_channels * h * w];
    let mut row = vec![0.0f64; w];

    for oc in 0..spec.out_channels {
        for y in 0..h {
            row.iter_mut().for_each(|r| *r = bias[oc] as f64);
            for ic in 0..spec.in_channels {
                let plane = input.plane(ic);
                for ky in 0..k {
                    let iy = y + ky;
                    if iy < pad || iy >= h + pad {
                        continue;
                    }
                    let iy = iy - pad;
                    let in_row = &plane[iy * w..iy * w + w];
                    let w_row = &weights[((oc * spec.in_channels + ic) * k + ky) * k..][..k];
                    for (kx, &wv) in w_row.iter().enumerate() {
                        let wv = wv as f64;
                        // valid x range where ix = x + kx - pad lands inside the row
                        let (x0, ix0) = if kx >= pad { (0, kx - pad) } else { (pad - kx, 0) };
                        let count = w.saturating_sub(x0 + ix0);
                        if count == 0 {
                            continue;
                        }
                        for (r, &v) in row[x0..x0 + count]
                            .iter_mut()
                            .zip(&in_row[ix0..ix0 + count])
                        {
                            *r += wv * v as f64;
                        }
                    }
                }
            }
            for (o, &r) in out[(oc * h + y) * w..][..w].iter_mut().zip(row.iter()) {
                *o = r as f32;
            }
        }
    }
    Tensor::new(spec.out_channels, h, w, out)
}

/// Exact analytic gradients of [`conv2d_forward`] w.r.t. weights, bias,
/// and input, given the upstream gradient of the output.
pub fn conv2d_backward(
    input: &Tensor,
    spec: &ConvSpec,
    weights: &[f32],
    upstream: &Tensor,
) -> Result<LayerGradients> {
    check_conv_args(input, spec, weights, &vec![0.0; spec.out_channels])?;
    if upstream.shape() != (spec.out_channels, input.height(), input.width()) {
        return Err(CoreError::InvalidArgument(format!(
            "upstream shape {:?} does not match forward output {:?}",
            upstream.shape(),
            (spec.out_channels, input.height(), input.width())
        )));
    }
    let (h, w) = (input.height(), input.width());
    let k = spec.kernel;
    let pad = spec.padding();

    let mut weight_acc = vec![0.0f64; spec.weight_len()];
    let mut bias_acc = vec![0.0f64; spec.out_channels];
    let mut input_acc = vec![0.0f64; spec.in_channels * h * w];

    for oc in 0..spec.out_channels {
        let up_plane = upstream.plane(oc);
        bias_acc[oc] = up_plane.iter().map(|&g| g as f64).sum();
        for ic in 0..spec.in_channels {
            let in_plane = input.plane(ic);
            let ig_plane = &mut input_acc[ic * h * w..(ic + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let widx = ((oc * spec.in_channels + ic) * k + ky) * k + kx;
                    let wv = weights[widx] as f64;
                    let (x0, ix0) = if kx >= pad { (0, kx - pad) } else { (pad - kx, 0) };
                    let count = w.saturating_sub(x0 + ix0);
                    if count == 0 {
                        continue;
                    }
                    let mut wg = 0.0f64;
                    for y in 0..h {
                        let iy = y + ky;
                        if iy < pad || iy >= h + pad {
                            continue;
                        }
                        let iy = iy - pad;
                        let up_row = &up_plane[y * w + x0..y * w + x0 + count];
                        let in_row = &in_plane[iy * w + ix0..iy * w + ix0 + count];
                        let ig_row = &mut ig_plane[iy * w + ix0..iy * w + ix0 + count];
                        for ((&g, &v), ig) in up_row.iter().zip(in_row).zip(ig_row.iter_mut()) {
                            let g = g as f64;
                            wg += g * v as f64;
                            *ig += g * wv;
                        }
                    }
                    weight_acc[widx] += wg;
                }
            }
        }
    }

    Ok(LayerGradients {
        weight_grad: weight_acc.iter().map(|&v| v as f32).collect(),
        bias_grad: bias_acc.iter().map(|&v| v as f32).collect(),
        input_grad: Tensor::new(
            spec.in_channels,
            h,
            w,
            input_acc.iter().map(|&v| v as f32).collect(),
        )?,
    })
}

/// Elementwise max(0, v).
pub fn relu_forward(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Passes the upstream gradient where the forward input was strictly
/// positive; the subgradient at exactly 0 is taken as 0.
pub fn relu_backward(input: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    check_same_shape(input, upstream, "relu_backward")?;
    let data = input
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.channels(), input.height(), input.width(), data)
}

/// Mean squared error and its gradient w.r.t. the prediction.
pub fn mse_loss(prediction: &Tensor, target: &Tensor) -> Result<(f32, Tensor)> {
    check_same_shape(prediction, target, "mse_loss")?;
    let n = prediction.len() as f64;
    let mut acc = 0.0f64;
    let grad: Vec<f32> = prediction
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p as f64 - t as f64;
            acc += d * d;
            (2.0 * d / n) as f32
        })
        .collect();
    let grad = Tensor::new(prediction.channels(), prediction.height(), prediction.width(), grad)?;
    Ok(((acc / n) as f32, grad))
}

/// Plain gradient-descent update `p' = p - lr * g`, elementwise.
pub fn sgd_step(parameters: &[f32], gradients: &[f32], learning_rate: f32) -> Result<Vec<f32>> {
    if parameters.len() != gradients.len() {
        return Err(CoreError::InvalidArgument(format!(
            "parameter length {} does not match gradient length {}",
            parameters.len(),
            gradients.len()
        )));
    }
    if !(learning_rate > 0.0) {
        return Err(CoreError::InvalidArgument(format!(
            "learning rate must be positive, got {learning_rate}"
        )));
    }
    Ok(parameters
        .iter()
        .zip(gradients)
        .map(|(&p, &g)| p - learning_rate * g)
        .collect())
}
