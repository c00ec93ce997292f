//! Classifier architectures, seeded training of model populations, and
//! checkpoints.

mod arch;
mod checkpoint;
mod network;
mod train;

pub use arch::{catalog, ArchitectureDescriptor, LayerSpec};
pub use checkpoint::{load_model, save_model, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use network::Network;
pub use train::{evaluate_accuracy, train_model, TrainConfig};

use serde::{Deserialize, Serialize};

use crate::classifier::{Classifier, SeedFn};
use crate::error::Result;
use crate::tensor::Tensor;

/// Whether a model generates perturbations or evaluates them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Source,
    Testing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainMetadata {
    pub config: TrainConfig,
    pub epochs_run: usize,
    pub final_train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// A trained network with its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub id: String,
    pub role: Role,
    pub seed: u64,
    pub network: Network,
    pub metadata: TrainMetadata,
}

impl Model {
    pub fn architecture(&self) -> &ArchitectureDescriptor {
        self.network.architecture()
    }
}

impl Classifier for Model {
    fn input_shape(&self) -> &[usize] {
        self.network.input_shape()
    }
    fn num_classes(&self) -> usize {
        self.network.num_classes()
    }
    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.network.forward(x)
    }
    fn pullback(&self, x: &Tensor, seeds: &mut SeedFn<'_>) -> Result<(Tensor, Vec<Tensor>)> {
        self.network.pullback(x, seeds)
    }
}

/// Squared L2 distance between the parameters of two same-architecture models.
pub fn parameter_distance_sq(a: &Network, b: &Network) -> Option<f64> {
    if a.architecture() != b.architecture() {
        return None;
    }
    Some(
        a.params()
            .iter()
            .zip(b.params())
            .map(|(p, q)| {
                p.data()
                    .iter()
                    .zip(q.data())
                    .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
                    .sum::<f64>()
            })
            .sum(),
    )
}
