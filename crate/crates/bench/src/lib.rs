//! Shared fixtures for the benchmarks in `benches/`.

use perturblab_core::model::{catalog, Network};
use perturblab_core::seed::Gaussian;
use perturblab_core::Tensor;

/// A freshly initialised catalog network for `[channels, size, size]` inputs.
pub fn network(name: &str, channels: usize, size: usize, classes: usize, seed: u64) -> Network {
    let arch = catalog(channels, size, classes)
        .into_iter()
        .find(|a| a.name == name)
        .unwrap_or_else(|| panic!("no architecture named {name}"));
    Network::init(arch, seed).expect("catalog architectures are valid")
}

/// Pixel values around mid-grey.
pub fn image(shape: &[usize], seed: u64) -> Tensor {
    let mut g = Gaussian::new(seed);
    Tensor::from_fn(shape, |_| (0.5 + 0.2 * g.next_standard()).clamp(0.0, 1.0) as f32)
}
