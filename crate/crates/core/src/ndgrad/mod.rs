//! Minimal dense-tensor kernel with reverse-mode automatic differentiation
//! and first-order optimizers. Just enough to express the convolutional
//! vector-field networks and their training losses; no broadcasting, no
//! graph compiler, no GPU.

mod checkpoint;
mod net;
mod optim;
mod tape;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use net::{ConvBlock, ConvMode, GradBatch, NetConfig, NetVars, VectorFieldNet};
pub use optim::{Optimizer, OptimizerKind, TrainConfig};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NdGradError {
    #[error("{op}: size mismatch on {axis}: expected {expected}, found {found}")]
    ShapeMismatch {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{op}: expected rank {expected}, found shape {found:?}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        found: Vec<usize>,
    },
    #[error("conv kernel size {0} must be odd")]
    EvenKernel(usize),
    #[error("conv padding {padding} must equal (kernel_size - 1) / 2 = {expected}")]
    BadPadding { padding: usize, expected: usize },
    #[error("backward requires a scalar loss, found {numel} elements")]
    NonScalarLoss { numel: usize },
    #[error("tensor data length {len} does not match shape {shape:?}")]
    BadTensorData { shape: Vec<usize>, len: usize },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
}
