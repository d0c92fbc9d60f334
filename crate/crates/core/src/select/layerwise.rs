use rayon::prelude::*;

use super::{ErrorPoint, LayerScores};
use crate::error::{Error, Result};
use crate::tensor::{activate, conv_forward, conv_linear, ConvLayer, Dataset, Network, Tensor};

/// Per-example outputs of every layer of the unpruned network, at `point`.
pub fn reference_outputs(net: &Network, data: &Dataset, point: ErrorPoint) -> Result<Vec<Vec<Tensor>>> {
    data.examples()
        .par_iter()
        .map(|x| {
            let mut outs = Vec::with_capacity(net.len());
            let mut prev = x.clone();
            for layer in net.layers() {
                let pre = conv_linear(layer, &prev)?;
                let post = activate(layer, pre.clone());
                outs.push(match point {
                    ErrorPoint::PreActivation => pre,
                    ErrorPoint::PostActivation => post.clone(),
                });
                prev = post;
            }
            Ok(outs)
        })
        .collect()
}

fn at_point(layer: &ConvLayer, input: &Tensor, point: ErrorPoint) -> Result<Tensor> {
    match point {
        ErrorPoint::PreActivation => conv_linear(layer, input),
        ErrorPoint::PostActivation => conv_forward(layer, input),
    }
}

/// `e_c = sum_i ||U_c(i) - G_c * y_{c-1}(i)|| / ||U_c(i)||`, with `y` taken from
/// the current network and `U` from the cached unpruned reference.
///
/// Examples whose reference output is all zeros contribute nothing and are
/// counted in [`LayerScores::degenerate`].
pub fn relative_error_hbgs(
    net: &Network,
    reference: &[Vec<Tensor>],
    candidates: &[Option<ConvLayer>],
    data: &Dataset,
    point: ErrorPoint,
) -> Result<LayerScores> {
    let depth = net.len();
    if candidates.len() != depth {
        return Err(Error::Dimension(format!("{} candidates for {depth} layers", candidates.len())));
    }
    if reference.len() != data.len() || reference.iter().any(|r| r.len() != depth) {
        return Err(Error::Dimension("reference outputs do not match the dataset and network".into()));
    }
    let per_example: Vec<(Vec<f64>, usize)> = data
        .examples()
        .par_iter()
        .zip(reference.par_iter())
        .map(|(x, refs)| {
            let mut errs = vec![0.0; depth];
            let mut degenerate = 0;
            let mut prev = x.clone();
            for (c, layer) in net.layers().iter().enumerate() {
                if let Some(cand) = &candidates[c] {
                    let denom = refs[c].norm();
                    if denom > 0.0 {
                        errs[c] = refs[c].distance(&at_point(cand, &prev, point)?)? / denom;
                    } else {
                        degenerate += 1;
                    }
                }
                if c + 1 < depth {
                    prev = conv_forward(layer, &prev)?;
                }
            }
            Ok((errs, degenerate))
        })
        .collect::<Result<_>>()?;

    let mut errors = vec![0.0; depth];
    let mut degenerate = 0;
    for (errs, d) in &per_example {
        for (acc, e) in errors.iter_mut().zip(errs) {
            *acc += e;
        }
        degenerate += d;
    }
    Ok(LayerScores {
        errors: candidates.iter().zip(errors).map(|(c, e)| c.as_ref().map(|_| e)).collect(),
        degenerate,
        passes: per_example.len(),
        layer_evals: per_example.len() * (depth - 1 + candidates.iter().flatten().count()),
    })
}
