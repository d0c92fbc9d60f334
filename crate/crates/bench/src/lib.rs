//! Seeded fixtures shared by the benchmarks.

use filterprune_core::select::{build_candidate, FpMethod};
use filterprune_core::sparse::{flatten_filters, Direction, FilterMatrix};
use filterprune_core::{Activation, ConvLayer, Dataset, Network, SelectionConfig, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn normal_vec(rng: &mut impl Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Filters of a layer with `n` outputs and `rows = K^2 m` weights each.
pub fn filter_matrix(rows: usize, n: usize, seed: u64) -> FilterMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layer = ConvLayer::new(rows, n, 1, normal_vec(&mut rng, rows * n, 1.0), Activation::Identity).unwrap();
    flatten_filters(&layer, Direction::Output).unwrap()
}

/// A ReLU chain of `depth` layers with `channels` filters each.
pub fn network(depth: usize, channels: usize, seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / ((channels * 9) as f64).sqrt();
    let layers = (0..depth)
        .map(|_| {
            ConvLayer::new(channels, channels, 3, normal_vec(&mut rng, channels * channels * 9, scale), Activation::Relu)
                .unwrap()
        })
        .collect();
    Network::new(layers).unwrap()
}

pub fn dataset(channels: usize, spatial: usize, count: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let examples = (0..count)
        .map(|_| {
            Tensor::new(vec![channels, spatial, spatial], normal_vec(&mut rng, channels * spatial * spatial, 1.0)).unwrap()
        })
        .collect();
    Dataset::new(examples).unwrap()
}

/// One backward-selected candidate per layer, each removing `remove` filters.
pub fn candidates(net: &Network, remove: usize) -> Vec<Option<ConvLayer>> {
    net.layers()
        .iter()
        .map(|l| build_candidate(l, remove, FpMethod::Backward, SelectionConfig::default()).ok().map(|c| c.layer))
        .collect()
}
