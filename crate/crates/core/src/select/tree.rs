//! Final-output errors for every single-layer pruning hypothesis in one pass.

use rayon::prelude::*;

use super::{ErrorPoint, LayerScores};
use crate::error::{Error, Result};
use crate::tensor::{conv_forward, conv_linear, ConvLayer, Dataset, Network, Tensor};

/// Per-layer outputs under each single-layer pruning hypothesis.
///
/// `get(c, 0)` is layer `c` of the unpruned chain. For `j >= 1`, `get(c, j)` is
/// layer `c`'s output when the candidate at layer `c - j + 1` replaced the
/// original and everything after it ran unpruned. Entries for layers without a
/// candidate are `None`.
///
/// Hidden layers hold post-activation outputs. The last layer holds outputs at
/// the configured [`ErrorPoint`].
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationBuffer {
    outputs: Vec<Vec<Option<Tensor>>>,
    layer_evals: usize,
}

impl PropagationBuffer {
    pub fn layers(&self) -> usize {
        self.outputs.len()
    }

    pub fn get(&self, c: usize, j: usize) -> Option<&Tensor> {
        self.outputs.get(c)?.get(j)?.as_ref()
    }

    pub fn unpruned(&self, c: usize) -> &Tensor {
        self.outputs[c][0].as_ref().expect("unpruned output is always present")
    }

    /// Last-layer output when only layer `pruned` is replaced by its candidate.
    pub fn final_hypothesis(&self, pruned: usize) -> Option<&Tensor> {
        let last = self.outputs.len() - 1;
        self.get(last, last + 1 - pruned)
    }

    /// Number of single-layer evaluations spent filling the buffer.
    pub fn layer_evals(&self) -> usize {
        self.layer_evals
    }
}

fn eval_at(layer: &ConvLayer, input: &Tensor, last: bool, point: ErrorPoint) -> Result<Tensor> {
    if last && point == ErrorPoint::PreActivation {
        conv_linear(layer, input)
    } else {
        conv_forward(layer, input)
    }
}

/// Fills the propagation buffer for one example with a single sweep over the layers.
pub fn propagate_tree(
    net: &Network,
    candidates: &[Option<ConvLayer>],
    example: &Tensor,
    point: ErrorPoint,
) -> Result<PropagationBuffer> {
    let depth = net.len();
    if candidates.len() != depth {
        return Err(Error::Dimension(format!("{} candidates for {depth} layers", candidates.len())));
    }
    let mut outputs: Vec<Vec<Option<Tensor>>> = Vec::with_capacity(depth);
    let mut layer_evals = 0;
    for (c, layer) in net.layers().iter().enumerate() {
        let last = c + 1 == depth;
        let wrap = |hypothesis: usize| {
            move |e: Error| Error::Propagation { layer: c, hypothesis, reason: e.to_string() }
        };
        let mut row: Vec<Option<Tensor>> = Vec::with_capacity(c + 2);
        {
            let prev: Vec<Option<&Tensor>> = match c {
                0 => vec![Some(example)],
                _ => outputs[c - 1].iter().map(Option::as_ref).collect(),
            };
            let base = prev[0].expect("unpruned output is always present");
            row.push(Some(eval_at(layer, base, last, point).map_err(wrap(0))?));
            row.push(match &candidates[c] {
                Some(cand) => Some(eval_at(cand, base, last, point).map_err(wrap(1))?),
                None => None,
            });
            layer_evals += 1 + usize::from(candidates[c].is_some());
            for (j, earlier) in prev.iter().enumerate().skip(1) {
                row.push(match earlier {
                    Some(t) => {
                        layer_evals += 1;
                        Some(eval_at(layer, t, last, point).map_err(wrap(j + 1))?)
                    }
                    None => None,
                });
            }
        }
        outputs.push(row);
    }
    Ok(PropagationBuffer { outputs, layer_evals })
}

/// `e_l = sum_i ||y_C(i) - y_C^{(l)}(i)|| / ||y_C(i)||` for every layer `l` with a candidate.
pub fn tree_errors(
    net: &Network,
    candidates: &[Option<ConvLayer>],
    data: &Dataset,
    point: ErrorPoint,
) -> Result<LayerScores> {
    let depth = net.len();
    let per_example: Vec<(Vec<f64>, bool, usize)> = data
        .examples()
        .par_iter()
        .map(|x| {
            let buf = propagate_tree(net, candidates, x, point)?;
            let reference = buf.unpruned(depth - 1);
            let denom = reference.norm();
            let mut errs = vec![0.0; depth];
            if denom > 0.0 {
                for (l, e) in errs.iter_mut().enumerate() {
                    if let Some(h) = buf.final_hypothesis(l) {
                        *e = reference.distance(h)? / denom;
                    }
                }
            }
            Ok((errs, denom == 0.0, buf.layer_evals()))
        })
        .collect::<Result<_>>()?;

    let mut errors = vec![0.0; depth];
    let mut degenerate = 0;
    let mut layer_evals = 0;
    for (errs, zero, evals) in &per_example {
        for (acc, e) in errors.iter_mut().zip(errs) {
            *acc += e;
        }
        degenerate += usize::from(*zero);
        layer_evals += evals;
    }
    Ok(LayerScores {
        errors: candidates.iter().zip(errors).map(|(c, e)| c.as_ref().map(|_| e)).collect(),
        degenerate,
        passes: per_example.len(),
        layer_evals,
    })
}
