//! Tensors, small trainable networks, adversarial attacks, noise-augmented
//! perturbation averaging, and the evaluations and renderings built on top.

pub mod analysis;
pub mod attack;
pub mod classifier;
pub mod codec;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod graph;
pub mod loss;
pub mod model;
pub mod render;
pub mod seed;
pub mod tensor;

pub use classifier::Classifier;
pub use error::{Error, Result};
pub use tensor::Tensor;
