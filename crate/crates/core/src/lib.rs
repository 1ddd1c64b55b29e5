//! ESNNet: a temporal/spatial convolutional front-end feeding a fixed echo
//! state reservoir, pooled over time and classified by a linear head, plus
//! the preprocessing, training and evaluation pipeline around it.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod optim;
pub mod reservoir;
pub mod rng;
pub mod tensor;

pub use error::{Error, ErrorCategory, Result};
pub use rng::RngStream;
pub use tensor::{Distribution, Parameter, Tensor};
pub use model::{build, EsnNet, ModelConfig, Variant};
pub use optim::{AdamState, EarlyStopper};
