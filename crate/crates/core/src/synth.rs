//! Synthetic networks with planted linearly dependent filters.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Activation, ConvLayer, Dataset, Network, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub layers: usize,
    pub channels: usize,
    pub kernel: usize,
    /// Fraction of planted filters, per layer.
    pub redundancy: Vec<f64>,
    pub examples: usize,
    pub seed: u64,
    pub activation: Activation,
    /// Height and width of every example.
    pub spatial: usize,
}

impl GeneratorConfig {
    /// Same redundancy in every layer, identity activation, 8x8 examples.
    pub fn uniform(layers: usize, channels: usize, kernel: usize, redundancy: f64, examples: usize, seed: u64) -> Self {
        Self {
            layers,
            channels,
            kernel,
            redundancy: vec![redundancy; layers],
            examples,
            seed,
            activation: Activation::Identity,
            spatial: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.channels == 0 || self.examples == 0 || self.spatial == 0 {
            return Err(Error::Config("layers, channels, examples and spatial size must be positive".into()));
        }
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("kernel size must be odd, got {}", self.kernel)));
        }
        if self.redundancy.len() != self.layers {
            return Err(Error::Config(format!(
                "{} redundancy values for {} layers",
                self.redundancy.len(),
                self.layers
            )));
        }
        if let Some(r) = self.redundancy.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(Error::Config(format!("redundancy must lie in [0, 1), got {r}")));
        }
        Ok(())
    }

    /// Planted filters in a layer with `redundancy` r: `floor(r n)`, leaving at least one free filter.
    pub fn planted_count(&self, layer: usize) -> usize {
        let n = self.channels;
        ((self.redundancy[layer] * n as f64).floor() as usize).min(n - 1)
    }
}

/// One filter built as `sum_i coefficients[i] * filter[basis[i]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedFilter {
    pub index: usize,
    pub basis: Vec<usize>,
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerManifest {
    pub redundancy: f64,
    pub planted: Vec<PlantedFilter>,
}

/// Record of every planted combination, for checking recovery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub layers: Vec<LayerManifest>,
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub network: Network,
    pub dataset: Dataset,
    pub manifest: Manifest,
}

fn normal_vec(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Builds a network whose layers each contain `floor(r n)` filters that are
/// exact linear combinations of the layer's independent filters.
pub fn generate(cfg: &GeneratorConfig) -> Result<Generated> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (m, n, k) = (cfg.channels, cfg.channels, cfg.kernel);
    let flen = m * k * k;
    let scale = 1.0 / (flen as f64).sqrt();

    let mut layers = Vec::with_capacity(cfg.layers);
    let mut manifests = Vec::with_capacity(cfg.layers);
    for c in 0..cfg.layers {
        let planted = cfg.planted_count(c);
        let mut positions: Vec<usize> = (0..n).collect();
        positions.shuffle(&mut rng);
        let (planted_at, free_at) = positions.split_at(planted);
        let mut free_at = free_at.to_vec();
        free_at.sort_unstable();
        let mut planted_at = planted_at.to_vec();
        planted_at.sort_unstable();

        let mut filters = vec![Vec::new(); n];
        for &j in &free_at {
            filters[j] = normal_vec(&mut rng, flen, scale);
        }
        let mut records = Vec::with_capacity(planted);
        for &j in &planted_at {
            let coefficients = normal_vec(&mut rng, free_at.len(), 1.0 / (free_at.len() as f64).sqrt());
            let mut f = vec![0.0; flen];
            for (&b, &w) in free_at.iter().zip(&coefficients) {
                for (acc, v) in f.iter_mut().zip(&filters[b]) {
                    *acc += w * v;
                }
            }
            filters[j] = f;
            records.push(PlantedFilter { index: j, basis: free_at.clone(), coefficients });
        }
        let weights: Vec<f64> = filters.concat();
        layers.push(ConvLayer::new(m, n, k, weights, cfg.activation)?);
        manifests.push(LayerManifest { redundancy: cfg.redundancy[c], planted: records });
    }

    let shape = vec![m, cfg.spatial, cfg.spatial];
    let len = m * cfg.spatial * cfg.spatial;
    let examples = (0..cfg.examples)
        .map(|_| Tensor::new(shape.clone(), normal_vec(&mut rng, len, 1.0)))
        .collect::<Result<Vec<_>>>()?;

    Ok(Generated {
        network: Network::new(layers)?,
        dataset: Dataset::new(examples)?,
        manifest: Manifest { seed: cfg.seed, layers: manifests },
    })
}
