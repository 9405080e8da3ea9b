use crate::error::{Error, Result};

/// Side length of every backbone convolution kernel.
pub const KERNEL_SIZE: usize = 3;

/// 3×3 convolution with zero padding.
///
/// Weights are laid out `(out_channels, in_channels, 3, 3)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    in_channels: usize,
    out_channels: usize,
    stride: usize,
    padding: usize,
    weights: Vec<f32>,
    bias: Vec<f32>,
}

impl ConvLayer {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        padding: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::Shape(format!(
                "conv channels must be positive (in {in_channels}, out {out_channels})"
            )));
        }
        if stride == 0 {
            return Err(Error::Domain("conv stride must be positive".into()));
        }
        let expected = out_channels * in_channels * KERNEL_SIZE * KERNEL_SIZE;
        if weights.len() != expected {
            return Err(Error::Shape(format!(
                "conv weights ({out_channels}, {in_channels}, 3, 3) need {expected} values, got {}",
                weights.len()
            )));
        }
        if bias.len() != out_channels {
            return Err(Error::Shape(format!(
                "conv bias needs {out_channels} values, got {}",
                bias.len()
            )));
        }
        check_finite("conv weights", &weights)?;
        check_finite("conv bias", &bias)?;
        Ok(Self {
            in_channels,
            out_channels,
            stride,
            padding,
            weights,
            bias,
        })
    }

    /// Stride 1, padding 1: the "same" convolution used by the backbone.
    pub fn same(
        in_channels: usize,
        out_channels: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self> {
        Self::new(in_channels, out_channels, 1, 1, weights, bias)
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn padding(&self) -> usize {
        self.padding
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn weight(&self, out_c: usize, in_c: usize, ky: usize, kx: usize) -> f32 {
        self.weights[((out_c * self.in_channels + in_c) * KERNEL_SIZE + ky) * KERNEL_SIZE + kx]
    }

    /// Output spatial size for an input of `height` × `width`, if non-degenerate.
    pub fn output_dims(&self, height: usize, width: usize) -> Option<(usize, usize)> {
        let axis = |n: usize| {
            let padded = n + 2 * self.padding;
            (padded >= KERNEL_SIZE).then(|| (padded - KERNEL_SIZE) / self.stride + 1)
        };
        Some((axis(height)?, axis(width)?))
    }
}

/// Inference-time batch normalization statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams {
    gamma: Vec<f32>,
    beta: Vec<f32>,
    running_mean: Vec<f32>,
    running_var: Vec<f32>,
    epsilon: f32,
}

impl BatchNormParams {
    pub const DEFAULT_EPSILON: f32 = 1e-5;

    pub fn new(
        gamma: Vec<f32>,
        beta: Vec<f32>,
        running_mean: Vec<f32>,
        running_var: Vec<f32>,
        epsilon: f32,
    ) -> Result<Self> {
        let n = gamma.len();
        if beta.len() != n || running_mean.len() != n || running_var.len() != n {
            return Err(Error::Shape(format!(
                "batch norm arrays differ in length (gamma {n}, beta {}, mean {}, var {})",
                beta.len(),
                running_mean.len(),
                running_var.len()
            )));
        }
        for (what, values) in [
            ("gamma", &gamma),
            ("beta", &beta),
            ("running_mean", &running_mean),
            ("running_var", &running_var),
        ] {
            check_finite(what, values)?;
        }
        if running_var.iter().any(|&v| v < 0.0) {
            return Err(Error::Domain("running_var must be non-negative".into()));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Domain(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        Ok(Self {
            gamma,
            beta,
            running_mean,
            running_var,
            epsilon,
        })
    }

    /// gamma 1, beta 0, mean 0, var 1.
    pub fn identity(channels: usize, epsilon: f32) -> Result<Self> {
        Self::new(
            vec![1.0; channels],
            vec![0.0; channels],
            vec![0.0; channels],
            vec![1.0; channels],
            epsilon,
        )
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn gamma(&self) -> &[f32] {
        &self.gamma
    }

    pub fn beta(&self) -> &[f32] {
        &self.beta
    }

    pub fn running_mean(&self) -> &[f32] {
        &self.running_mean
    }

    pub fn running_var(&self) -> &[f32] {
        &self.running_var
    }

    pub fn epsilon(&self) -> f32 {
        self.epsilon
    }

    /// Per-channel `(scale, shift)` such that `y = scale·x + shift`.
    pub fn affine(&self, c: usize) -> (f64, f64) {
        let scale =
            self.gamma[c] as f64 / (self.running_var[c] as f64 + self.epsilon as f64).sqrt();
        let shift = self.beta[c] as f64 - scale * self.running_mean[c] as f64;
        (scale, shift)
    }
}

/// 2×2 max pooling with stride 2.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MaxPool2;

impl MaxPool2 {
    pub const WINDOW: usize = 2;
    pub const STRIDE: usize = 2;
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv(ConvLayer),
    BatchNorm(BatchNormParams),
    Relu,
    MaxPool(MaxPool2),
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::BatchNorm(_) => "bn",
            Layer::Relu => "relu",
            Layer::MaxPool(_) => "pool",
        }
    }
}

pub(crate) fn check_finite(what: &str, values: &[f32]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(pos) => Err(Error::Domain(format!(
            "{what}: non-finite value at index {pos}"
        ))),
        None => Ok(()),
    }
}
