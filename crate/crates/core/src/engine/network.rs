use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{BatchNormParams, ConvLayer, Layer, MaxPool2, KERNEL_SIZE};
use super::ops;
use super::tensor::{Shape, Tensor};
use crate::error::{Error, Result};

/// Name under which the network input is recorded.
pub const INPUT_NAME: &str = "input";

pub const DEFAULT_FEATURE_LAYER: &str = "ReLU_5";

/// Default input: a 224×224 three-channel image.
pub const DEFAULT_INPUT_SHAPE: Shape = Shape::new(3, 224, 224);

/// Filter counts of the five conv stages in the reference backbone.
pub const REFERENCE_WIDTHS: [usize; 5] = [16, 32, 64, 128, 256];

#[derive(Clone, Debug, PartialEq)]
pub struct NamedLayer {
    pub name: String,
    pub layer: Layer,
}

impl NamedLayer {
    pub fn new(name: impl Into<String>, layer: Layer) -> Self {
        Self {
            name: name.into(),
            layer,
        }
    }
}

/// An ordered, validated stack of named layers.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    input_shape: Shape,
    layers: Vec<NamedLayer>,
    feature_layer: String,
}

/// Every named activation of a forward pass plus the selected feature map.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub activations: Vec<(String, Tensor)>,
    pub feature: Tensor,
}

impl ForwardOutput {
    pub fn activation(&self, name: &str) -> Option<&Tensor> {
        self.activations
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }
}

impl NetworkSpec {
    pub fn new(
        input_shape: Shape,
        layers: Vec<NamedLayer>,
        feature_layer: impl Into<String>,
    ) -> Result<Self> {
        let net = Self {
            input_shape,
            layers,
            feature_layer: feature_layer.into(),
        };
        net.validate()?;
        Ok(net)
    }

    /// A network with no layers whose feature is the input itself.
    pub fn passthrough(input_shape: Shape) -> Self {
        Self {
            input_shape,
            layers: Vec::new(),
            feature_layer: INPUT_NAME.to_string(),
        }
    }

    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn layers(&self) -> &[NamedLayer] {
        &self.layers
    }

    pub fn feature_layer(&self) -> &str {
        &self.feature_layer
    }

    /// Output shape of every layer, from the closed-form shape recurrence.
    pub fn shape_trace(&self) -> Result<Vec<(String, Shape)>> {
        let mut shape = self.input_shape;
        let mut trace = Vec::with_capacity(self.layers.len());
        for named in &self.layers {
            shape = layer_output_shape(&named.layer, shape).map_err(|e| e.in_layer(&named.name))?;
            trace.push((named.name.clone(), shape));
        }
        Ok(trace)
    }

    pub fn feature_shape(&self) -> Result<Shape> {
        if self.feature_layer == INPUT_NAME {
            return Ok(self.input_shape);
        }
        self.shape_trace()?
            .into_iter()
            .find(|(n, _)| *n == self.feature_layer)
            .map(|(_, s)| s)
            .ok_or_else(|| {
                Error::Network(format!("unknown feature layer `{}`", self.feature_layer))
            })
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for named in &self.layers {
            if named.name.is_empty() || named.name.chars().any(char::is_whitespace) {
                return Err(Error::Network(format!(
                    "invalid layer name {:?}",
                    named.name
                )));
            }
            if named.name == INPUT_NAME {
                return Err(Error::Network(format!("`{INPUT_NAME}` is reserved")));
            }
            if !seen.insert(named.name.as_str()) {
                return Err(Error::Network(format!(
                    "duplicate layer name `{}`",
                    named.name
                )));
            }
        }
        if self.feature_layer != INPUT_NAME && !seen.contains(self.feature_layer.as_str()) {
            return Err(Error::Network(format!(
                "feature layer `{}` is not in the network",
                self.feature_layer
            )));
        }
        self.shape_trace().map(|_| ())
    }

    /// Reference backbone: four Conv-BN-ReLU-Pool stages and a final
    /// Conv-BN-ReLU named `ReLU_5`, stride 16. Weights are He-scaled draws
    /// from a seeded generator.
    pub fn reference(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut in_c = DEFAULT_INPUT_SHAPE.channels;
        for (stage, &out_c) in REFERENCE_WIDTHS.iter().enumerate() {
            let n = stage + 1;
            let fan_in = (in_c * KERNEL_SIZE * KERNEL_SIZE) as f32;
            let bound = (6.0 / fan_in).sqrt();
            let weights = (0..out_c * in_c * KERNEL_SIZE * KERNEL_SIZE)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            let bias = (0..out_c).map(|_| rng.gen_range(-0.05..0.05)).collect();
            let conv = ConvLayer::same(in_c, out_c, weights, bias).expect("reference conv");
            let bn = BatchNormParams::new(
                (0..out_c).map(|_| rng.gen_range(0.8..1.2)).collect(),
                (0..out_c).map(|_| rng.gen_range(-0.1..0.1)).collect(),
                (0..out_c).map(|_| rng.gen_range(-0.1..0.1)).collect(),
                (0..out_c).map(|_| rng.gen_range(0.5..1.5)).collect(),
                BatchNormParams::DEFAULT_EPSILON,
            )
            .expect("reference bn");
            layers.push(named(format!("conv_{n}"), Layer::Conv(conv)));
            layers.push(named(format!("batchnorm_{n}"), Layer::BatchNorm(bn)));
            layers.push(named(format!("ReLU_{n}"), Layer::Relu));
            if n < REFERENCE_WIDTHS.len() {
                layers.push(named(format!("maxpool_{n}"), Layer::MaxPool(MaxPool2)));
            }
            in_c = out_c;
        }
        Self::new(DEFAULT_INPUT_SHAPE, layers, DEFAULT_FEATURE_LAYER)
            .expect("reference backbone is valid")
    }

    /// Returns a network in which every Conv immediately followed by a
    /// BatchNorm is replaced by the folded conv. The BN layer is dropped, so
    /// its name no longer appears in the activations.
    pub fn fold_batchnorms(&self) -> Result<Self> {
        let mut layers: Vec<NamedLayer> = Vec::with_capacity(self.layers.len());
        for named in &self.layers {
            if let (Layer::BatchNorm(bn), Some(prev)) = (&named.layer, layers.last_mut()) {
                if let Layer::Conv(conv) = &prev.layer {
                    if named.name == self.feature_layer {
                        prev.name = named.name.clone();
                    }
                    prev.layer = Layer::Conv(
                        ops::fold_batchnorm(conv, bn).map_err(|e| e.in_layer(&named.name))?,
                    );
                    continue;
                }
            }
            layers.push(named.clone());
        }
        Self::new(self.input_shape, layers, self.feature_layer.clone())
    }
}

fn named(name: String, layer: Layer) -> NamedLayer {
    NamedLayer { name, layer }
}

fn layer_output_shape(layer: &Layer, input: Shape) -> Result<Shape> {
    match layer {
        Layer::Conv(conv) => {
            if conv.in_channels() != input.channels {
                return Err(Error::Shape(format!(
                    "conv expects {} input channels, previous layer yields {}",
                    conv.in_channels(),
                    input.channels
                )));
            }
            let (h, w) = conv.output_dims(input.height, input.width).ok_or_else(|| {
                Error::Degenerate(format!("conv on {}x{} input", input.height, input.width))
            })?;
            Ok(Shape::new(conv.out_channels(), h, w))
        }
        Layer::BatchNorm(bn) => {
            if bn.channels() != input.channels {
                return Err(Error::Shape(format!(
                    "batch norm has {} channels, previous layer yields {}",
                    bn.channels(),
                    input.channels
                )));
            }
            Ok(input)
        }
        Layer::Relu => Ok(input),
        Layer::MaxPool(_) => {
            if input.height < MaxPool2::WINDOW || input.width < MaxPool2::WINDOW {
                return Err(Error::Degenerate(format!(
                    "max pool on {}x{} input",
                    input.height, input.width
                )));
            }
            Ok(Shape::new(
                input.channels,
                input.height / 2,
                input.width / 2,
            ))
        }
    }
}

pub fn apply_layer(layer: &Layer, input: &Tensor) -> Result<Tensor> {
    match layer {
        Layer::Conv(conv) => ops::conv2d(input, conv),
        Layer::BatchNorm(bn) => ops::batch_norm(input, bn),
        Layer::Relu => Ok(ops::relu(input)),
        Layer::MaxPool(_) => ops::max_pool2(input),
    }
}

/// Runs every layer in order, recording each activation by name.
pub fn forward(net: &NetworkSpec, input: &Tensor) -> Result<ForwardOutput> {
    if input.shape() != net.input_shape {
        return Err(Error::Shape(format!(
            "network expects input {}, got {}",
            net.input_shape,
            input.shape()
        )));
    }
    let mut activations: Vec<(String, Tensor)> = Vec::with_capacity(net.layers.len());
    for named in &net.layers {
        let prev = activations.last().map_or(input, |(_, t)| t);
        let out = apply_layer(&named.layer, prev).map_err(|e| e.in_layer(&named.name))?;
        log::trace!("{} -> {}", named.name, out.shape());
        activations.push((named.name.clone(), out));
    }
    let feature = if net.feature_layer == INPUT_NAME {
        input.clone()
    } else {
        activations
            .iter()
            .find(|(n, _)| *n == net.feature_layer)
            .map(|(_, t)| t.clone())
            .expect("validated feature layer")
    };
    Ok(ForwardOutput {
        activations,
        feature,
    })
}
