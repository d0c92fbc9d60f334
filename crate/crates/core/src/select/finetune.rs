//! Post-commit refinement hooks.
//!
//! Compensation already absorbs the linear part of each pruning step, so the
//! default hook does nothing.

use nalgebra::DMatrix;

use crate::compensation::mixing_map_or_identity;
use crate::error::{Error, Result};
use crate::sparse::least_squares_lambda;
use crate::tensor::{conv_filters, conv_forward, conv_linear, Dataset, Network};

pub trait FinetuneHook {
    fn refine(&mut self, net: Network, data: &Dataset) -> Result<Network>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityHook;

impl FinetuneHook for IdentityHook {
    fn refine(&mut self, net: Network, _data: &Dataset) -> Result<Network> {
        Ok(net)
    }
}

impl<F> FinetuneHook for F
where
    F: FnMut(Network, &Dataset) -> Result<Network>,
{
    fn refine(&mut self, net: Network, data: &Dataset) -> Result<Network> {
        self(net, data)
    }
}

/// The default refinement step: returns the network unchanged.
pub fn finetune_hook(net: Network, _data: &Dataset) -> Network {
    net
}

/// Refits the last layer's 1x1 map by least squares so that its pre-activation
/// output tracks the reference network's on the given data.
///
/// A last layer without a map gets one, starting from the identity.
#[derive(Debug, Clone)]
pub struct LeastSquaresRecalibration {
    reference: Network,
    ridge: f64,
}

impl LeastSquaresRecalibration {
    pub fn new(reference: Network) -> Self {
        Self { reference, ridge: 0.0 }
    }

    pub fn with_ridge(mut self, ridge: f64) -> Self {
        self.ridge = ridge;
        self
    }
}

impl FinetuneHook for LeastSquaresRecalibration {
    fn refine(&mut self, net: Network, data: &Dataset) -> Result<Network> {
        let last = net.len() - 1;
        let layer = net.layer(last);
        let width = mixing_map_or_identity(layer).ncols();
        if self.reference.layer(self.reference.len() - 1).output_width() != width {
            return Err(Error::Dimension("reference and pruned outputs differ in width".into()));
        }

        // Stack every pixel of every example as one regression row.
        let mut inputs: Vec<f64> = Vec::new();
        let mut targets: Vec<f64> = Vec::new();
        let mut rows = 0;
        for x in data.examples() {
            let mut prev = x.clone();
            for l in &net.layers()[..last] {
                prev = conv_forward(l, &prev)?;
            }
            let y = conv_filters(layer, &prev)?;
            let mut r_prev = x.clone();
            for l in &self.reference.layers()[..self.reference.len() - 1] {
                r_prev = conv_forward(l, &r_prev)?;
            }
            let t = conv_linear(self.reference.layer(self.reference.len() - 1), &r_prev)?;
            let (n, h, w) = y.chw()?;
            let hw = h * w;
            for p in 0..hw {
                inputs.extend((0..n).map(|j| y.data()[j * hw + p]));
                targets.extend((0..width).map(|k| t.data()[k * hw + p]));
            }
            rows += hw;
        }
        let n = layer.out_channels();
        let design = DMatrix::from_row_slice(rows, n, &inputs);
        let target = DMatrix::from_row_slice(rows, width, &targets);
        let g = least_squares_lambda(&design, &target, self.ridge)?;

        let refit = layer.clone().with_comp(g)?;
        let mut layers = net.into_layers();
        layers[last] = refit;
        Network::new(layers)
    }
}
