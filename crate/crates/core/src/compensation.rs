//! Closed-form update of the 1x1 mixing map after filter pruning.
//!
//! When filter `l'` is removed and approximated as `sum_l lambda_{l',l} f_l + eps_{l'}`,
//! its contribution through the mixing map can be folded onto the kept rows:
//!
//! ```text
//! g'_{l,k} = g_{l,k} + sum_{l' removed} lambda_{l',l} g_{l',k}
//! ```
//!
//! after which the composite output differs from the original only by
//! `sum_{l'} (X * eps_{l'}) g_{l',k}`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::sparse::{flatten_filters, Direction, FilterMatrix, SelectionResult};
use crate::tensor::ConvLayer;

#[derive(Debug, Clone, PartialEq)]
pub struct CompensationUpdate {
    pub retained: Vec<usize>,
    /// `|S| x width` for output pruning, `width x |S|` for input pruning.
    pub g_prime: DMatrix<f64>,
    /// `(l', eps_{l'})` for every removed filter, ascending.
    pub epsilons: Vec<(usize, DVector<f64>)>,
}

fn check_selection(sel: &SelectionResult, filters: &FilterMatrix) -> Result<()> {
    let n = filters.cols();
    if sel.lambda.ncols() != n || sel.lambda.nrows() != sel.retained.len() {
        return Err(Error::Inconsistent(format!(
            "lambda is {}x{} for {} retained of {n} filters",
            sel.lambda.nrows(),
            sel.lambda.ncols(),
            sel.retained.len()
        )));
    }
    if sel.retained.is_empty() {
        return Err(Error::Inconsistent("no filters retained".into()));
    }
    if sel.retained.windows(2).any(|w| w[0] >= w[1]) || sel.retained.last().is_some_and(|&l| l >= n) {
        return Err(Error::Inconsistent(format!(
            "retained set {:?} is not a sorted subset of 0..{n}",
            sel.retained
        )));
    }
    Ok(())
}

fn residuals(filters: &FilterMatrix, sel: &SelectionResult) -> Vec<(usize, DVector<f64>)> {
    let a_sub = filters.select(&sel.retained);
    sel.removed()
        .into_iter()
        .map(|j| (j, filters.matrix().column(j) - &a_sub * sel.lambda.column(j)))
        .collect()
}

/// Output-channel variant: rows of `g` follow the layer's filters.
pub fn compensate_output(g: &DMatrix<f64>, filters: &FilterMatrix, sel: &SelectionResult) -> Result<CompensationUpdate> {
    check_selection(sel, filters)?;
    let n = filters.cols();
    if g.nrows() != n {
        return Err(Error::Inconsistent(format!("mixing map has {} rows for {n} filters", g.nrows())));
    }
    let removed = sel.removed();
    let mut g_prime = g.select_rows(&sel.retained);
    for (pos, _) in sel.retained.iter().enumerate() {
        for &j in &removed {
            let coef = sel.lambda[(pos, j)];
            if coef != 0.0 {
                let scaled = g.row(j) * coef;
                let mut row = g_prime.row_mut(pos);
                row += scaled;
            }
        }
    }
    Ok(CompensationUpdate { retained: sel.retained.clone(), g_prime, epsilons: residuals(filters, sel) })
}

/// Input-channel variant: columns of `g` follow the pruned channels,
/// `g'_{:,l} = g_{:,l} + sum_{j removed} lambda_{j,l} g_{:,j}`.
pub fn compensate_input(g: &DMatrix<f64>, filters: &FilterMatrix, sel: &SelectionResult) -> Result<CompensationUpdate> {
    check_selection(sel, filters)?;
    let n = filters.cols();
    if g.ncols() != n {
        return Err(Error::Inconsistent(format!("mixing map has {} columns for {n} channels", g.ncols())));
    }
    let removed = sel.removed();
    let mut g_prime = g.select_columns(&sel.retained);
    for (pos, _) in sel.retained.iter().enumerate() {
        for &j in &removed {
            let coef = sel.lambda[(pos, j)];
            if coef != 0.0 {
                let mut col = g_prime.column_mut(pos);
                col.axpy(coef, &g.column(j), 1.0);
            }
        }
    }
    Ok(CompensationUpdate { retained: sel.retained.clone(), g_prime, epsilons: residuals(filters, sel) })
}

/// Builds the pruned layer: filters restricted to `S`, mixing map replaced by `g'`.
pub fn apply_pruning(layer: &ConvLayer, sel: &SelectionResult, comp: &CompensationUpdate) -> Result<ConvLayer> {
    let n = layer.out_channels();
    let keep = &sel.retained;
    if keep.is_empty() {
        return Err(Error::Inconsistent("pruning every filter is not allowed".into()));
    }
    if comp.retained != *keep || sel.total_filters() != n {
        return Err(Error::Inconsistent(format!(
            "selection over {} filters with retained {:?} does not match compensation for {:?} on a {n}-filter layer",
            sel.total_filters(),
            keep,
            comp.retained
        )));
    }
    let width = layer.output_width();
    if comp.g_prime.nrows() != keep.len() || comp.g_prime.ncols() != width {
        return Err(Error::Inconsistent(format!(
            "updated map is {}x{}, expected {}x{width}",
            comp.g_prime.nrows(),
            comp.g_prime.ncols(),
            keep.len()
        )));
    }
    if keep.len() == n {
        let unchanged = match layer.comp() {
            Some(g) => *g == comp.g_prime,
            None => comp.g_prime == DMatrix::identity(n, n),
        };
        if unchanged {
            return Ok(layer.clone());
        }
    }
    let weights: Vec<f64> = keep.iter().flat_map(|&j| layer.filter(j).iter().copied()).collect();
    ConvLayer::new(layer.in_channels(), keep.len(), layer.kernel_size(), weights, layer.activation())?
        .with_comp(comp.g_prime.clone())
}

/// Mixing map of `layer`, or the identity if it has none yet.
pub fn mixing_map_or_identity(layer: &ConvLayer) -> DMatrix<f64> {
    layer
        .comp()
        .cloned()
        .unwrap_or_else(|| DMatrix::identity(layer.out_channels(), layer.out_channels()))
}

/// Flattens, compensates and prunes `layer` according to `sel`.
pub fn prune_layer(layer: &ConvLayer, sel: &SelectionResult) -> Result<ConvLayer> {
    let filters = flatten_filters(layer, Direction::Output)?;
    let comp = compensate_output(&mixing_map_or_identity(layer), &filters, sel)?;
    apply_pruning(layer, sel, &comp)
}
