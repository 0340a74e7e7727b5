//! Shared fixtures for the criterion benches.

use aprnet_core::{AprnetModel, KanLayer, KanOptions, ModelConfig, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard-normal tensor of the given shape.
pub fn input(shape: &[usize], seed: u64) -> Tensor<f32> {
    Tensor::normal(shape, 1.0, &mut rng(seed))
}

pub fn model(lookback: usize, horizon: usize, channels: usize, latent: usize) -> AprnetModel<f32> {
    AprnetModel::new(ModelConfig::new(lookback, horizon, channels, latent), 0).expect("valid config")
}

pub fn kan_layer(inputs: usize, outputs: usize) -> (ParamStore<f32>, KanLayer) {
    let mut store = ParamStore::new();
    let layer = KanLayer::new(&mut store, "kan", inputs, outputs, &KanOptions::default(), &mut rng(1)).expect("valid layer");
    (store, layer)
}
