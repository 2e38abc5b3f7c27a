//! Deterministic N×C×H×W tensors with reverse-mode differentiation, the
//! convolutional layer set used by the codec networks, Adam, and the
//! parameter checkpoint format.

mod array;
pub mod checkpoint;
pub mod conv;
pub mod gradcheck;
mod graph;
pub mod layers;
pub mod optim;

pub use array::{Array, DType, Real, Shape};
pub use conv::ConvGeom;
pub use graph::{Graph, Var, MASS_FLOOR};
#[allow(unused_imports)]
pub(crate) use graph::{laplace_mass, softplus};
pub use layers::{Activation, Bound, Conv2d, ConvTranspose2d, Gdn, MaskKind, Param, ParamId, ParamStore};
pub use optim::{Adam, LrSchedule};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape {shape} needs {} elements, got {len}", shape.numel())]
    ElementCount { shape: Shape, len: usize },
    #[error("{op}: incompatible shapes {left} and {right}")]
    ShapeMismatch { op: &'static str, left: Shape, right: Shape },
    #[error("{op}: weight {weight} does not match {input_channels} input channels with kernel {kernel}")]
    WeightLayout { op: &'static str, weight: Shape, input_channels: usize, kernel: usize },
    #[error("{op}: input {input} with {geom:?} gives an empty output")]
    NonPositiveOutput { op: &'static str, input: Shape, geom: ConvGeom },
    #[error("invalid convolution geometry: {0}")]
    InvalidGeometry(String),
    #[error("masked convolution needs an odd kernel, got {0}")]
    EvenMaskedKernel(usize),
    #[error("channel range {start}+{len} exceeds {channels} channels")]
    ChannelRange { start: usize, len: usize, channels: usize },
    #[error("window {h}×{w} at ({y0}, {x0}) exceeds {shape}")]
    CropOutOfBounds { shape: Shape, y0: usize, x0: usize, h: usize, w: usize },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("backward needs a scalar loss, got {0}")]
    NotScalar(Shape),
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("non-finite gradient for parameter {param}")]
    NonFiniteGradient { param: String },
    #[error("gdn beta is not positive in channel {channel}")]
    NonPositiveBeta { channel: usize },
    #[error("{0}")]
    InvalidArgument(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
