//! Fixed-seed inputs shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use siamtcn_core::data::{sample_pairs, synth_generate};
use siamtcn_core::{
    Network, NetworkConfig, PairItem, SynthConfig, Task, Tensor, TrainMode, Window,
};

pub fn random_tensor(shape: Vec<usize>, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    Tensor::new(shape, data).unwrap()
}

pub fn random_points(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

/// The network used for the synthetic experiments: three blocks of 32 maps
/// and 32-dimensional heads.
pub fn network(input_channels: usize) -> Network<f32> {
    let base = NetworkConfig {
        input_channels,
        block_channels: vec![32; 3],
        ..NetworkConfig::default()
    };
    Network::build(TrainMode::Multi.network_config(base, 32), 0).unwrap()
}

pub fn synth_windows() -> Vec<Window> {
    synth_generate(&SynthConfig::default()).unwrap()
}

pub fn pairs(windows: &[Window], count: usize) -> Vec<PairItem> {
    sample_pairs(windows, count, 0, &[Task::Activity, Task::Person]).unwrap()
}
