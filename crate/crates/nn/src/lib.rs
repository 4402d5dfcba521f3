//! Minimal reverse-mode differentiation for the encoder networks: dense
//! tensors, a recording [`Graph`], convolution/pooling/normalisation
//! kernels, an adaptive-moment optimizer and a checkpoint container.
//!
//! Everything is generic over [`Scalar`]; models train in `f32` and are
//! gradient-checked in `f64`.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod ops;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use error::{NnError, Result};
pub use graph::{Gradients, Graph, Mode, Var};
pub use layers::{BatchNorm, Conv1d, Conv2d, Linear, RunningUpdate};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamKind, ParamStore, Parameter};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;
