//! Minimal dense-network substrate: tensors, a reverse-mode gradient tape,
//! feed-forward nets, Adam and a text checkpoint container.

mod activation;
mod adam;
mod checkpoint;
mod dense;
mod tape;
mod tensor;

pub use activation::{sigmoid, smooth_relu, softplus, Activation, SMOOTH_RELU_WIDTH};
pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use dense::{DenseLayer, DenseNet, Parameterized};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
