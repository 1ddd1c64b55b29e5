//! Convolutional front-end and classification-head primitives.

mod activation;
mod batchnorm;
pub(crate) mod fft;
mod head;
mod spatial;
mod temporal;

pub use activation::{elu, Activation};
pub use batchnorm::BatchNorm;
pub use head::{gap, predict, softmax_cross_entropy, CrossEntropy, Linear};
pub use spatial::SpatialConv;
pub use temporal::TemporalConv;

/// Batch-norm behavior: batch statistics (`Train`) or running statistics (`Infer`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}
