//! Dense tensors and a same-padded, stride-1 convolution engine.
//!
//! Layers compute `conv -> optional 1x1 channel mix -> activation`. Outputs
//! keep the spatial size of their input, so any chain of layers whose channel
//! counts agree can be composed.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_shape(&shape)?;
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        check_shape(&shape)?;
        let len = shape.iter().product();
        Ok(Self { shape, data: vec![0.0; len] })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Euclidean norm of the flattened data.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `||self - other||_2` over the flattened data.
    pub fn distance(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "cannot compare shapes {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    /// Returns `(channels, height, width)` for rank-3 tensors.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::Dimension(format!(
                "expected a (channels, height, width) tensor, got shape {:?}",
                self.shape
            ))),
        }
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::Shape { shape: shape.to_vec(), reason: "rank must be at least 1" });
    }
    if shape.contains(&0) {
        return Err(Error::Shape { shape: shape.to_vec(), reason: "dimensions must be positive" });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    #[default]
    Relu,
}

impl Activation {
    pub fn apply_in_place(self, values: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Relu => values.iter_mut().for_each(|v| *v = v.max(0.0)),
        }
    }
}

/// A `K x K` convolution with `n` filters over `m` input channels, optionally
/// followed by a 1x1 channel-mixing map.
///
/// Weights are stored `(out, in, row, col)` row-major. The mixing map has one
/// row per convolution output and one column per composite output channel; it
/// is square until the layer's filters are pruned.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    in_channels: usize,
    out_channels: usize,
    kernel_size: usize,
    weights: Vec<f64>,
    comp: Option<DMatrix<f64>>,
    activation: Activation,
}

impl ConvLayer {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        weights: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || kernel_size == 0 {
            return Err(Error::Dimension(format!(
                "layer sizes must be positive (m={in_channels}, n={out_channels}, K={kernel_size})"
            )));
        }
        let expected = out_channels * in_channels * kernel_size * kernel_size;
        if weights.len() != expected {
            return Err(Error::Dimension(format!(
                "layer with n={out_channels}, m={in_channels}, K={kernel_size} needs {expected} weights, got {}",
                weights.len()
            )));
        }
        Ok(Self { in_channels, out_channels, kernel_size, weights, comp: None, activation })
    }

    /// Attaches a 1x1 mixing map with one row per filter.
    pub fn with_comp(mut self, comp: DMatrix<f64>) -> Result<Self> {
        if comp.nrows() != self.out_channels || comp.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "mixing map is {}x{}, layer has {} filters",
                comp.nrows(),
                comp.ncols(),
                self.out_channels
            )));
        }
        self.comp = Some(comp);
        Ok(self)
    }

    pub fn without_comp(mut self) -> Self {
        self.comp = None;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    /// Number of K x K filters.
    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn comp(&self) -> Option<&DMatrix<f64>> {
        self.comp.as_ref()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Channels the next layer receives.
    pub fn output_width(&self) -> usize {
        self.comp.as_ref().map_or(self.out_channels, |g| g.ncols())
    }

    /// Flat length of one filter, `K^2 m`.
    pub fn filter_len(&self) -> usize {
        self.in_channels * self.kernel_size * self.kernel_size
    }

    pub fn filter(&self, out: usize) -> &[f64] {
        let len = self.filter_len();
        &self.weights[out * len..(out + 1) * len]
    }

    #[inline]
    pub fn weight_index(&self, out: usize, inp: usize, row: usize, col: usize) -> usize {
        ((out * self.in_channels + inp) * self.kernel_size + row) * self.kernel_size + col
    }
}

/// Raw convolution outputs `Y_j = sum_i X_i * f_{i,j}`, before mixing and activation.
pub fn conv_filters(layer: &ConvLayer, input: &Tensor) -> Result<Tensor> {
    let (m, h, w) = input.chw()?;
    if m != layer.in_channels {
        return Err(Error::Dimension(format!(
            "layer expects {} input channels, input has {m}",
            layer.in_channels
        )));
    }
    let n = layer.out_channels;
    let k = layer.kernel_size;
    let half = (k - 1) / 2;
    let x = input.data();
    let mut out = vec![0.0; n * h * w];

    for j in 0..n {
        let plane = &mut out[j * h * w..(j + 1) * h * w];
        for i in 0..m {
            let src = &x[i * h * w..(i + 1) * h * w];
            for kr in 0..k {
                // output row y reads input row y + kr - half
                let y_lo = half.saturating_sub(kr);
                let y_hi = (h + half).saturating_sub(kr).min(h);
                for kc in 0..k {
                    let wgt = layer.weights[layer.weight_index(j, i, kr, kc)];
                    if wgt == 0.0 {
                        continue;
                    }
                    let x_lo = half.saturating_sub(kc);
                    let x_hi = (w + half).saturating_sub(kc).min(w);
                    if x_lo >= x_hi {
                        continue;
                    }
                    for y in y_lo..y_hi {
                        let sy = y + kr - half;
                        let dst = &mut plane[y * w + x_lo..y * w + x_hi];
                        let s = &src[sy * w + x_lo + kc - half..sy * w + x_hi + kc - half];
                        for (d, v) in dst.iter_mut().zip(s) {
                            *d += wgt * v;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, h, w], out)
}

/// Applies a 1x1 map: `Z_k = sum_j Y_j g_{j,k}`.
pub fn mix_channels(input: &Tensor, g: &DMatrix<f64>) -> Result<Tensor> {
    let (n, h, w) = input.chw()?;
    if g.nrows() != n {
        return Err(Error::Dimension(format!(
            "mixing map has {} rows, input has {n} channels",
            g.nrows()
        )));
    }
    let hw = h * w;
    let cols = g.ncols();
    let y = input.data();
    let mut out = vec![0.0; cols * hw];
    for k in 0..cols {
        let dst = &mut out[k * hw..(k + 1) * hw];
        for j in 0..n {
            let coef = g[(j, k)];
            if coef == 0.0 {
                continue;
            }
            for (d, v) in dst.iter_mut().zip(&y[j * hw..(j + 1) * hw]) {
                *d += coef * v;
            }
        }
    }
    Tensor::new(vec![cols, h, w], out)
}

/// Layer output before the activation (convolution followed by the mixing map).
pub fn conv_linear(layer: &ConvLayer, input: &Tensor) -> Result<Tensor> {
    let y = conv_filters(layer, input)?;
    match &layer.comp {
        Some(g) => mix_channels(&y, g),
        None => Ok(y),
    }
}

pub fn activate(layer: &ConvLayer, mut pre: Tensor) -> Tensor {
    layer.activation.apply_in_place(pre.data_mut());
    pre
}

pub fn conv_forward(layer: &ConvLayer, input: &Tensor) -> Result<Tensor> {
    conv_linear(layer, input).map(|pre| activate(layer, pre))
}

/// A plain chain of convolution layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<ConvLayer>,
}

impl Network {
    pub fn new(layers: Vec<ConvLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Dimension("network needs at least one layer".into()));
        }
        check_chain(&layers)?;
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn layer(&self, c: usize) -> &ConvLayer {
        &self.layers[c]
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn input_channels(&self) -> usize {
        self.layers[0].in_channels
    }

    /// Replaces layer `c`, re-checking channel compatibility.
    pub fn replace_layer(&mut self, c: usize, layer: ConvLayer) -> Result<()> {
        let old = std::mem::replace(&mut self.layers[c], layer);
        if let Err(e) = check_chain(&self.layers) {
            self.layers[c] = old;
            return Err(e);
        }
        Ok(())
    }

    pub fn into_layers(self) -> Vec<ConvLayer> {
        self.layers
    }
}

fn check_chain(layers: &[ConvLayer]) -> Result<()> {
    for (c, pair) in layers.windows(2).enumerate() {
        if pair[0].output_width() != pair[1].in_channels {
            return Err(Error::Chain {
                layer: c + 1,
                expected: pair[1].in_channels,
                found: pair[0].output_width(),
            });
        }
    }
    Ok(())
}

/// Returns `[y_1, ..., y_C]` with `y_c = conv_forward(layer_c, y_{c-1})`.
pub fn forward_all_layers(net: &Network, input: &Tensor) -> Result<Vec<Tensor>> {
    let mut outputs: Vec<Tensor> = Vec::with_capacity(net.len());
    for layer in net.layers() {
        let next = conv_forward(layer, outputs.last().unwrap_or(input))?;
        outputs.push(next);
    }
    Ok(outputs)
}

/// Final-layer output of the whole chain.
pub fn forward(net: &Network, input: &Tensor) -> Result<Tensor> {
    let mut x = conv_forward(&net.layers[0], input)?;
    for layer in &net.layers[1..] {
        x = conv_forward(layer, &x)?;
    }
    Ok(x)
}

/// A set of network inputs sharing one `(m, H, W)` shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    examples: Vec<Tensor>,
}

impl Dataset {
    pub fn new(examples: Vec<Tensor>) -> Result<Self> {
        let first = examples.first().ok_or(Error::EmptyDataset)?;
        first.chw()?;
        if let Some(bad) = examples.iter().find(|t| t.shape() != first.shape()) {
            return Err(Error::Dimension(format!(
                "dataset mixes shapes {:?} and {:?}",
                first.shape(),
                bad.shape()
            )));
        }
        Ok(Self { examples })
    }

    pub fn examples(&self) -> &[Tensor] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn example_shape(&self) -> &[usize] {
        self.examples[0].shape()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn naive_conv(layer: &ConvLayer, x: &Tensor) -> Vec<f64> {
        let (m, h, w) = x.chw().unwrap();
        let (n, k) = (layer.out_channels(), layer.kernel_size());
        let half = ((k - 1) / 2) as isize;
        let mut out = vec![0.0; n * h * w];
        for j in 0..n {
            for py in 0..h as isize {
                for px in 0..w as isize {
                    let mut acc = 0.0;
                    for i in 0..m {
                        for k1 in 0..k as isize {
                            for k2 in 0..k as isize {
                                let (sy, sx) = (py + k1 - half, px + k2 - half);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                acc += x.data()[(i * h + sy as usize) * w + sx as usize]
                                    * layer.weights()
                                        [layer.weight_index(j, i, k1 as usize, k2 as usize)];
                            }
                        }
                    }
                    out[(j * h + py as usize) * w + px as usize] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn scalar_kernel_scales_input() {
        let layer = ConvLayer::new(1, 1, 1, vec![2.0], Activation::Identity).unwrap();
        let x = Tensor::new(vec![1, 2, 2], vec![1.0; 4]).unwrap();
        assert_eq!(conv_forward(&layer, &x).unwrap().data(), &[2.0; 4]);
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        let layer = ConvLayer::new(1, 1, 3, w, Activation::Identity).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::new(vec![1, 5, 4], random_vec(&mut rng, 20)).unwrap();
        assert_eq!(conv_forward(&layer, &x).unwrap(), x);
    }

    #[test]
    fn matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let layer = ConvLayer::new(2, 3, 3, random_vec(&mut rng, 54), Activation::Identity).unwrap();
        let x = Tensor::new(vec![2, 4, 4], random_vec(&mut rng, 32)).unwrap();
        let y = conv_forward(&layer, &x).unwrap();
        assert_eq!(y.shape(), &[3, 4, 4]);
        for (a, b) in y.data().iter().zip(naive_conv(&layer, &x)) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn relu_clamps_and_comp_mixes() {
        let layer = ConvLayer::new(1, 2, 1, vec![1.0, -1.0], Activation::Relu)
            .unwrap()
            .with_comp(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 3.0, 1.0]))
            .unwrap();
        let x = Tensor::new(vec![1, 1, 2], vec![1.0, 2.0]).unwrap();
        // Y = [x, -x]; Z_0 = Y_0 + 3 Y_1 = -2x; Z_1 = Y_1 = -x; relu -> 0
        let z = conv_linear(&layer, &x).unwrap();
        assert_eq!(z.data(), &[-2.0, -4.0, -1.0, -2.0]);
        assert_eq!(conv_forward(&layer, &x).unwrap().data(), &[0.0; 4]);
    }

    #[test]
    fn shape_errors() {
        let layer = ConvLayer::new(2, 1, 1, vec![1.0, 1.0], Activation::Identity).unwrap();
        let x = Tensor::new(vec![1, 2, 2], vec![0.0; 4]).unwrap();
        assert!(matches!(conv_forward(&layer, &x), Err(Error::Dimension(_))));
        assert!(ConvLayer::new(1, 1, 3, vec![0.0; 8], Activation::Identity).is_err());
        assert!(Tensor::new(vec![], vec![]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn forward_all_layers_chains() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let layers: Vec<_> = [(2, 3), (3, 4), (4, 2)]
            .iter()
            .map(|&(m, n)| {
                ConvLayer::new(m, n, 3, random_vec(&mut rng, m * n * 9), Activation::Relu).unwrap()
            })
            .collect();
        let net = Network::new(layers).unwrap();
        let x = Tensor::new(vec![2, 5, 5], random_vec(&mut rng, 50)).unwrap();
        let all = forward_all_layers(&net, &x).unwrap();
        let y1 = conv_forward(net.layer(0), &x).unwrap();
        let y2 = conv_forward(net.layer(1), &y1).unwrap();
        let y3 = conv_forward(net.layer(2), &y2).unwrap();
        assert_eq!(all, vec![y1, y2, y3.clone()]);
        assert_eq!(forward(&net, &x).unwrap(), y3);
    }

    #[test]
    fn chain_mismatch_rejected() {
        let a = ConvLayer::new(1, 2, 1, vec![1.0; 2], Activation::Identity).unwrap();
        let b = ConvLayer::new(3, 1, 1, vec![1.0; 3], Activation::Identity).unwrap();
        assert!(matches!(Network::new(vec![a, b]), Err(Error::Chain { layer: 1, .. })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn layer_and_input() -> impl Strategy<Value = (ConvLayer, Tensor, Tensor)> {
            (1usize..=4, 1usize..=4, prop_oneof![Just(1usize), Just(3)], 1usize..=6, 1usize..=6)
                .prop_flat_map(|(m, n, k, h, w)| {
                    (
                        proptest::collection::vec(-2.0f64..2.0, m * n * k * k),
                        proptest::collection::vec(-2.0f64..2.0, m * h * w),
                        proptest::collection::vec(-2.0f64..2.0, m * h * w),
                    )
                        .prop_map(move |(wts, x1, x2)| {
                            (
                                ConvLayer::new(m, n, k, wts, Activation::Identity).unwrap(),
                                Tensor::new(vec![m, h, w], x1).unwrap(),
                                Tensor::new(vec![m, h, w], x2).unwrap(),
                            )
                        })
                })
        }

        proptest! {
            #[test]
            fn naive_equivalence((layer, x, _x2) in layer_and_input()) {
                let y = conv_forward(&layer, &x).unwrap();
                for (a, b) in y.data().iter().zip(naive_conv(&layer, &x)) {
                    prop_assert!((a - b).abs() <= 1e-12);
                }
            }

            #[test]
            fn linear_with_identity((layer, x1, x2) in layer_and_input(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
                let combo: Vec<f64> = x1.data().iter().zip(x2.data()).map(|(u, v)| a * u + b * v).collect();
                let combo = Tensor::new(x1.shape().to_vec(), combo).unwrap();
                let lhs = conv_forward(&layer, &combo).unwrap();
                let y1 = conv_forward(&layer, &x1).unwrap();
                let y2 = conv_forward(&layer, &x2).unwrap();
                let scale = lhs.norm().max(y1.norm()).max(y2.norm()).max(1.0);
                for ((l, p), q) in lhs.data().iter().zip(y1.data()).zip(y2.data()) {
                    prop_assert!((l - (a * p + b * q)).abs() <= 1e-10 * scale);
                }
            }

            #[test]
            fn deterministic((layer, x, _x2) in layer_and_input()) {
                let a = conv_forward(&layer, &x).unwrap();
                let b = conv_forward(&layer, &x).unwrap();
                prop_assert!(a.data().iter().zip(b.data()).all(|(u, v)| u.to_bits() == v.to_bits()));
            }
        }
    }
}
