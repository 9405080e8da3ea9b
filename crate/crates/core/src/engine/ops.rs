//! Forward kernels. Every output element is accumulated in `f64` in a fixed
//! order and rounded to `f32` once, so results do not depend on how work is
//! split across threads.

use rayon::prelude::*;

use super::layers::{BatchNormParams, ConvLayer, MaxPool2, KERNEL_SIZE};
use super::tensor::{Shape, Tensor};
use crate::error::{Error, Result};

pub fn conv2d(input: &Tensor, layer: &ConvLayer) -> Result<Tensor> {
    let shape = input.shape();
    if shape.channels != layer.in_channels() {
        return Err(Error::Shape(format!(
            "conv expects {} input channels, input has {}",
            layer.in_channels(),
            shape.channels
        )));
    }
    let (out_h, out_w) = layer
        .output_dims(shape.height, shape.width)
        .filter(|&(h, w)| h >= 1 && w >= 1)
        .ok_or_else(|| {
            Error::Degenerate(format!(
                "{}x{} input with padding {} is smaller than the 3x3 kernel",
                shape.height,
                shape.width,
                layer.padding()
            ))
        })?;

    let planes: Vec<Vec<f32>> = (0..layer.out_channels())
        .into_par_iter()
        .map(|oc| conv_plane(input, layer, oc, out_h, out_w))
        .collect();

    finish(
        Shape::new(layer.out_channels(), out_h, out_w),
        planes.concat(),
        "conv2d",
    )
}

/// One output channel. Per element the sum runs over (in_channel, ky, kx)
/// ascending, then the bias is added.
fn conv_plane(
    input: &Tensor,
    layer: &ConvLayer,
    oc: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<f32> {
    let shape = input.shape();
    let (in_h, in_w) = (shape.height as isize, shape.width as isize);
    let stride = layer.stride() as isize;
    let pad = layer.padding() as isize;
    let mut acc = vec![0f64; out_h * out_w];

    for ic in 0..shape.channels {
        let plane = input.channel(ic);
        for ky in 0..KERNEL_SIZE {
            for kx in 0..KERNEL_SIZE {
                let w = layer.weight(oc, ic, ky, kx) as f64;
                let dx = kx as isize - pad;
                let (ox_lo, ox_hi) = valid_range(dx, stride, in_w, out_w);
                if ox_lo >= ox_hi {
                    continue;
                }
                for oy in 0..out_h {
                    let iy = oy as isize * stride + ky as isize - pad;
                    if iy < 0 || iy >= in_h {
                        continue;
                    }
                    let row = &plane[iy as usize * shape.width..(iy as usize + 1) * shape.width];
                    let out_row = &mut acc[oy * out_w..(oy + 1) * out_w];
                    for (ox, out) in out_row.iter_mut().enumerate().take(ox_hi).skip(ox_lo) {
                        let ix = (ox as isize * stride + dx) as usize;
                        *out += w * row[ix] as f64;
                    }
                }
            }
        }
    }

    let bias = layer.bias()[oc] as f64;
    acc.into_iter().map(|v| (v + bias) as f32).collect()
}

/// Output columns `ox` for which `ox·stride + offset` falls inside `[0, len)`.
fn valid_range(offset: isize, stride: isize, len: isize, out_len: usize) -> (usize, usize) {
    let lo = if offset >= 0 {
        0
    } else {
        (-offset + stride - 1) / stride
    };
    let hi = if len - offset <= 0 {
        0
    } else {
        ((len - offset + stride - 1) / stride).min(out_len as isize)
    };
    (lo as usize, hi.max(lo) as usize)
}

/// Per channel `c`: `y = gamma[c]·(x − mean[c]) / sqrt(var[c] + eps) + beta[c]`.
pub fn batch_norm(input: &Tensor, params: &BatchNormParams) -> Result<Tensor> {
    let shape = input.shape();
    if params.channels() != shape.channels {
        return Err(Error::Shape(format!(
            "batch norm has {} channels, input has {}",
            params.channels(),
            shape.channels
        )));
    }
    let eps = params.epsilon() as f64;
    let mut out = Vec::with_capacity(shape.len());
    for c in 0..shape.channels {
        let gamma = params.gamma()[c] as f64;
        let beta = params.beta()[c] as f64;
        let mean = params.running_mean()[c] as f64;
        let denom = (params.running_var()[c] as f64 + eps).sqrt();
        out.extend(
            input
                .channel(c)
                .iter()
                .map(|&x| (gamma * (x as f64 - mean) / denom + beta) as f32),
        );
    }
    finish(shape, out, "batch_norm")
}

pub fn relu(input: &Tensor) -> Tensor {
    Tensor::from_parts(
        input.shape(),
        input.data().iter().map(|&v| v.max(0.0)).collect(),
    )
}

/// 2×2/2 max pooling; a trailing odd row or column is dropped.
pub fn max_pool2(input: &Tensor) -> Result<Tensor> {
    let shape = input.shape();
    if shape.height < MaxPool2::WINDOW || shape.width < MaxPool2::WINDOW {
        return Err(Error::Degenerate(format!(
            "max pool needs at least 2x2, input is {}x{}",
            shape.height, shape.width
        )));
    }
    let out_shape = Shape::new(
        shape.channels,
        shape.height / MaxPool2::STRIDE,
        shape.width / MaxPool2::STRIDE,
    );
    let mut out = Vec::with_capacity(out_shape.len());
    for c in 0..shape.channels {
        let plane = input.channel(c);
        for oy in 0..out_shape.height {
            let r0 = 2 * oy * shape.width;
            let r1 = r0 + shape.width;
            for ox in 0..out_shape.width {
                let x = 2 * ox;
                let m = plane[r0 + x]
                    .max(plane[r0 + x + 1])
                    .max(plane[r1 + x])
                    .max(plane[r1 + x + 1]);
                out.push(m);
            }
        }
    }
    Ok(Tensor::from_parts(out_shape, out))
}

/// Folds inference batch norm into the preceding convolution.
pub fn fold_batchnorm(conv: &ConvLayer, bn: &BatchNormParams) -> Result<ConvLayer> {
    if bn.channels() != conv.out_channels() {
        return Err(Error::Shape(format!(
            "batch norm has {} channels, conv produces {}",
            bn.channels(),
            conv.out_channels()
        )));
    }
    let per_filter = conv.in_channels() * KERNEL_SIZE * KERNEL_SIZE;
    let mut weights = Vec::with_capacity(conv.weights().len());
    let mut bias = Vec::with_capacity(conv.out_channels());
    for oc in 0..conv.out_channels() {
        let (scale, shift) = bn.affine(oc);
        weights.extend(
            conv.weights()[oc * per_filter..(oc + 1) * per_filter]
                .iter()
                .map(|&w| (w as f64 * scale) as f32),
        );
        bias.push((conv.bias()[oc] as f64 * scale + shift) as f32);
    }
    ConvLayer::new(
        conv.in_channels(),
        conv.out_channels(),
        conv.stride(),
        conv.padding(),
        weights,
        bias,
    )
}

fn finish(shape: Shape, data: Vec<f32>, op: &str) -> Result<Tensor> {
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("{op} overflowed f32 range")));
    }
    Ok(Tensor::from_parts(shape, data))
}
