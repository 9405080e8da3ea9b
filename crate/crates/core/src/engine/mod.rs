//! Forward-pass engine: convolution, batch normalization, ReLU and max
//! pooling over a named layer stack.

mod layers;
mod network;
mod ops;
mod tensor;

pub use layers::{BatchNormParams, ConvLayer, Layer, MaxPool2, KERNEL_SIZE};
pub use network::{
    apply_layer, forward, ForwardOutput, NamedLayer, NetworkSpec, DEFAULT_FEATURE_LAYER,
    DEFAULT_INPUT_SHAPE, INPUT_NAME, REFERENCE_WIDTHS,
};
pub use ops::{batch_norm, conv2d, fold_batchnorm, max_pool2, relu};
pub use tensor::{Shape, Tensor};

pub(crate) use layers::check_finite;
