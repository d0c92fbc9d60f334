//! Parameter and multiply-accumulate counts.
//!
//! One FLOP is one multiply-accumulate. Every layer keeps the spatial size of
//! its input, so per-layer counts scale with the declared `H x W`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ConvLayer, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerStats {
    pub params: u64,
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelStats {
    pub params: u64,
    pub flops: u64,
    pub per_layer: Vec<LayerStats>,
}

/// Filter weights plus the entries of the 1x1 map, if any.
pub fn layer_params(layer: &ConvLayer) -> u64 {
    let conv = (layer.out_channels() * layer.in_channels() * layer.kernel_size().pow(2)) as u64;
    conv + layer.comp().map_or(0, |g| (g.nrows() * g.ncols()) as u64)
}

/// Counts weights and MACs for one forward pass on a `(m, H, W)` input.
pub fn count_stats(net: &Network, input_shape: &[usize]) -> Result<ModelStats> {
    let [m, h, w] = *input_shape else {
        return Err(Error::Dimension(format!("input shape {input_shape:?} is not (m, H, W)")));
    };
    if m != net.input_channels() {
        return Err(Error::Dimension(format!(
            "input has {m} channels, first layer expects {}",
            net.input_channels()
        )));
    }
    let pixels = (h * w) as u64;
    let per_layer: Vec<LayerStats> = net
        .layers()
        .iter()
        .map(|layer| {
            let params = layer_params(layer);
            LayerStats { params, flops: pixels * params }
        })
        .collect();
    Ok(ModelStats {
        params: per_layer.iter().map(|l| l.params).sum(),
        flops: per_layer.iter().map(|l| l.flops).sum(),
        per_layer,
    })
}

/// Percentage drops from `before` to `after`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reduction {
    pub param_drop_pct: f64,
    pub flops_drop_pct: f64,
}

impl Reduction {
    /// `"param ↓ 50.0%  FLOPs ↓ 50.0%"`-style rendering at 0.1% precision.
    pub fn render(&self) -> (String, String) {
        (format!("{:.1}%", self.param_drop_pct), format!("{:.1}%", self.flops_drop_pct))
    }
}

pub fn reduction_report(before: &ModelStats, after: &ModelStats) -> Result<Reduction> {
    if before.params == 0 || before.flops == 0 {
        return Err(Error::Dimension("reference model has no parameters".into()));
    }
    Ok(Reduction {
        param_drop_pct: 100.0 * (1.0 - after.params as f64 / before.params as f64),
        flops_drop_pct: 100.0 * (1.0 - after.flops as f64 / before.flops as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Activation;
    use nalgebra::DMatrix;

    fn layer(m: usize, n: usize, k: usize) -> ConvLayer {
        ConvLayer::new(m, n, k, vec![0.5; m * n * k * k], Activation::Relu).unwrap()
    }

    #[test]
    fn single_3x3() {
        let net = Network::new(vec![layer(1, 1, 3)]).unwrap();
        let s = count_stats(&net, &[1, 8, 8]).unwrap();
        assert_eq!((s.params, s.flops), (9, 576));
    }

    #[test]
    fn identity_map_cost() {
        let plain = Network::new(vec![layer(8, 8, 3)]).unwrap();
        let mixed = Network::new(vec![layer(8, 8, 3).with_comp(DMatrix::identity(8, 8)).unwrap()]).unwrap();
        let a = count_stats(&plain, &[8, 8, 8]).unwrap();
        let b = count_stats(&mixed, &[8, 8, 8]).unwrap();
        assert_eq!(b.params - a.params, 64);
        assert_eq!(b.flops - a.flops, 4096);
    }

    #[test]
    fn halving_filters_halves_counts() {
        let full = Network::new(vec![layer(3, 8, 3)]).unwrap();
        let half = Network::new(vec![layer(3, 4, 3)]).unwrap();
        let a = count_stats(&full, &[3, 6, 6]).unwrap();
        let b = count_stats(&half, &[3, 6, 6]).unwrap();
        assert_eq!(a.params, 2 * b.params);
        assert_eq!(a.flops, 2 * b.flops);
        let r = reduction_report(&a, &b).unwrap();
        assert_eq!(r.render(), ("50.0%".to_string(), "50.0%".to_string()));
        assert_eq!(reduction_report(&a, &a).unwrap().render().0, "0.0%");
    }

    #[test]
    fn totals_are_sums() {
        let net = Network::new(vec![layer(2, 4, 3), layer(4, 5, 1).with_comp(DMatrix::identity(5, 5)).unwrap()])
            .unwrap();
        let s = count_stats(&net, &[2, 7, 3]).unwrap();
        assert_eq!(s.params, s.per_layer.iter().map(|l| l.params).sum::<u64>());
        assert_eq!(s.flops, s.per_layer.iter().map(|l| l.flops).sum::<u64>());
        assert!(count_stats(&net, &[3, 7, 3]).is_err());
        assert!(count_stats(&net, &[2, 7]).is_err());
    }
}
