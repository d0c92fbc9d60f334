//! Filter selection as multivariate sparse approximation.
//!
//! A layer's filters are flattened into the columns of a matrix `A`. Pruning
//! keeps a subset `S` of columns and expresses every filter as a least-squares
//! combination of the kept ones:
//!
//! ```text
//! f_j = sum_{l in S} lambda_{j,l} f_l + eps_j
//! ```
//!
//! [`fp_omp`] grows `S` greedily (orthogonal matching pursuit with summed
//! projections); [`fp_backward`] shrinks it from the full set, scoring each
//! removal in closed form from the inverse Gram matrix and downdating that
//! inverse instead of re-inverting.

mod backward;
mod gram;
mod omp;

pub use backward::{fp_backward, fp_backward_to, BackwardEliminator};
pub use gram::{downdate_gram, elimination_scores, GramBlocks};
pub use omp::{fp_omp, fp_omp_to};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tensor::ConvLayer;

/// Default ridge factor, relative to the mean squared filter norm.
pub const DEFAULT_RIDGE_FACTOR: f64 = 1e-10;

/// Scores closer than this (relative to `||B||_F^2`) to the minimum count as ties.
pub const TIE_RTOL: f64 = 1e-9;

/// Columns with a smaller norm are rejected as zero filters.
const ZERO_NORM: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Direction {
    /// Columns are output filters `f_{:,j}` (length `K^2 m`).
    #[default]
    Output,
    /// Columns gather every weight reading one input channel (length `K^2 n`).
    Input,
}

/// Flattened filters, one per column.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterMatrix {
    columns: DMatrix<f64>,
    col_norms: Vec<f64>,
}

impl FilterMatrix {
    pub fn new(columns: DMatrix<f64>) -> Result<Self> {
        if columns.ncols() == 0 || columns.nrows() == 0 {
            return Err(Error::Dimension("filter matrix must be non-empty".into()));
        }
        let col_norms: Vec<f64> = columns.column_iter().map(|c| c.norm()).collect();
        if let Some(index) = col_norms.iter().position(|&v| !(v > ZERO_NORM)) {
            return Err(Error::ZeroColumn { index });
        }
        Ok(Self { columns, col_norms })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.columns
    }

    pub fn rows(&self) -> usize {
        self.columns.nrows()
    }

    pub fn cols(&self) -> usize {
        self.columns.ncols()
    }

    /// Norms of the columns as given, before any normalization.
    pub fn col_norms(&self) -> &[f64] {
        &self.col_norms
    }

    /// Copy with every column scaled to unit norm.
    pub fn normalized(&self) -> DMatrix<f64> {
        let mut out = self.columns.clone();
        for (mut col, norm) in out.column_iter_mut().zip(&self.col_norms) {
            col /= *norm;
        }
        out
    }

    /// `A_S`: the columns listed in `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> DMatrix<f64> {
        self.columns.select_columns(indices)
    }

    /// `trace(A^T A) / n`.
    pub fn mean_sq_norm(&self) -> f64 {
        self.col_norms.iter().map(|v| v * v).sum::<f64>() / self.cols() as f64
    }
}

pub fn flatten_filters(layer: &ConvLayer, direction: Direction) -> Result<FilterMatrix> {
    let (m, n, k) = (layer.in_channels(), layer.out_channels(), layer.kernel_size());
    let kk = k * k;
    let columns = match direction {
        Direction::Output => {
            DMatrix::from_fn(m * kk, n, |r, j| layer.weights()[j * m * kk + r])
        }
        Direction::Input => DMatrix::from_fn(n * kk, m, |r, i| {
            let (out, pos) = (r / kk, r % kk);
            layer.weights()[(out * m + i) * kk + pos]
        }),
    };
    FilterMatrix::new(columns)
}

/// Ridge added to every Gram matrix before inversion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ridge {
    /// `factor * trace(A^T A) / n` for the matrix being selected from.
    Relative(f64),
    Absolute(f64),
}

impl Default for Ridge {
    fn default() -> Self {
        Ridge::Relative(DEFAULT_RIDGE_FACTOR)
    }
}

impl Ridge {
    pub const NONE: Ridge = Ridge::Absolute(0.0);

    pub fn value_for(self, mean_sq_norm: f64) -> f64 {
        match self {
            Ridge::Relative(f) => f * mean_sq_norm,
            Ridge::Absolute(v) => v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SelectionConfig {
    pub ridge: Ridge,
    /// Re-invert the Gram matrix at every backward step instead of downdating.
    pub fresh_inverse: bool,
}

impl SelectionConfig {
    pub fn exact() -> Self {
        Self { ridge: Ridge::NONE, fresh_inverse: false }
    }
}

/// Outcome of a filter-selection call.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    /// Kept filter indices, ascending.
    pub retained: Vec<usize>,
    /// `|S| x n`; entry `(l, j)` is the weight of retained filter `retained[l]`
    /// in the reconstruction of filter `j`, in the filters' original scale.
    pub lambda: DMatrix<f64>,
    pub residual_error: f64,
    pub per_target_error: Vec<f64>,
    /// Selection order (forward) or elimination order (backward).
    pub order: Vec<usize>,
}

impl SelectionResult {
    pub fn total_filters(&self) -> usize {
        self.lambda.ncols()
    }

    pub fn removed(&self) -> Vec<usize> {
        let n = self.total_filters();
        let mut keep = vec![false; n];
        for &l in &self.retained {
            keep[l] = true;
        }
        (0..n).filter(|&j| !keep[j]).collect()
    }

    /// Position of filter `index` within `retained`.
    pub fn position(&self, index: usize) -> Option<usize> {
        self.retained.binary_search(&index).ok()
    }
}

/// `t = round((1 - beta) n)`, which must land in `1..=n`.
pub(crate) fn add_to_diagonal(m: &mut DMatrix<f64>, value: f64) {
    for i in 0..m.nrows().min(m.ncols()) {
        m[(i, i)] += value;
    }
}

pub fn target_count(beta: f64, n: usize) -> Result<usize> {
    let t = ((1.0 - beta) * n as f64).round();
    if !(0.0..1.0).contains(&beta) || t < 1.0 || t > n as f64 {
        return Err(Error::InvalidFraction { beta, target: t as isize, total: n });
    }
    Ok(t as usize)
}

/// `lambda_{:,j} = (A_S^T A_S + ridge I)^{-1} A_S^T B_{:,j}` for every column of `B`.
pub fn least_squares_lambda(a_sub: &DMatrix<f64>, b: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    if a_sub.ncols() == 0 {
        return Err(Error::Dimension("least squares needs at least one column".into()));
    }
    if a_sub.nrows() != b.nrows() {
        return Err(Error::Dimension(format!(
            "A_S has {} rows, B has {}",
            a_sub.nrows(),
            b.nrows()
        )));
    }
    let mut gram = a_sub.tr_mul(a_sub);
    add_to_diagonal(&mut gram, ridge);
    let chol = cholesky_checked(gram)?;
    Ok(chol.solve(&a_sub.tr_mul(b)))
}

/// Total squared reconstruction error and its per-target breakdown.
pub fn total_error(a_sub: &DMatrix<f64>, b: &DMatrix<f64>, lambda: &DMatrix<f64>) -> Result<(f64, Vec<f64>)> {
    if lambda.nrows() != a_sub.ncols() || lambda.ncols() != b.ncols() || a_sub.nrows() != b.nrows() {
        return Err(Error::Dimension(format!(
            "A_S {}x{}, B {}x{}, lambda {}x{} do not line up",
            a_sub.nrows(),
            a_sub.ncols(),
            b.nrows(),
            b.ncols(),
            lambda.nrows(),
            lambda.ncols()
        )));
    }
    let residual = b - a_sub * lambda;
    let per: Vec<f64> = residual.column_iter().map(|c| c.norm_squared()).collect();
    Ok((per.iter().sum(), per))
}

/// Re-solves `lambda` against the original columns and packages the result.
fn finish_selection(
    filters: &FilterMatrix,
    mut retained: Vec<usize>,
    order: Vec<usize>,
    ridge: f64,
) -> Result<SelectionResult> {
    retained.sort_unstable();
    let a_sub = filters.select(&retained);
    let lambda = least_squares_lambda(&a_sub, filters.matrix(), ridge)?;
    let (residual_error, per_target_error) = total_error(&a_sub, filters.matrix(), &lambda)?;
    Ok(SelectionResult { retained, lambda, residual_error, per_target_error, order })
}

/// Cholesky factorization that reports a condition estimate on failure.
pub(crate) fn cholesky_checked(
    gram: DMatrix<f64>,
) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let fallback = gram.clone();
    match gram.cholesky() {
        Some(chol) => {
            let diag = chol.l_dirty().diagonal();
            let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| {
                (lo.min(v.abs()), hi.max(v.abs()))
            });
            let estimate = (hi / lo).powi(2);
            if !estimate.is_finite() || estimate > 1e15 {
                return Err(Error::Singular { condition: condition_estimate(fallback) });
            }
            Ok(chol)
        }
        None => Err(Error::Singular { condition: condition_estimate(fallback) }),
    }
}

fn condition_estimate(gram: DMatrix<f64>) -> f64 {
    let eig = gram.symmetric_eigenvalues();
    let hi = eig.amax();
    let lo = eig.iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Index of the smallest score; scores within `tol` of it resolve to the lowest index.
pub(crate) fn argmin_tied(scores: &[f64], tol: f64) -> usize {
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    scores.iter().position(|&s| s <= min + tol).unwrap_or(0)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Activation;

    #[test]
    fn flatten_direct_layout() {
        let layer = ConvLayer::new(1, 2, 1, vec![3.0, 4.0], Activation::Identity).unwrap();
        let a = flatten_filters(&layer, Direction::Output).unwrap();
        assert_eq!(a.matrix(), &DMatrix::from_row_slice(1, 2, &[3.0, 4.0]));
        assert_eq!(a.col_norms(), &[3.0, 4.0]);
    }

    #[test]
    fn flatten_shapes() {
        let layer = ConvLayer::new(2, 4, 3, (0..72).map(|v| v as f64 + 1.0).collect(), Activation::Relu)
            .unwrap();
        let out = flatten_filters(&layer, Direction::Output).unwrap();
        assert_eq!((out.rows(), out.cols()), (18, 4));
        let inp = flatten_filters(&layer, Direction::Input).unwrap();
        assert_eq!((inp.rows(), inp.cols()), (36, 2));
    }

    #[test]
    fn flatten_round_trip_is_bit_exact() {
        let weights: Vec<f64> = (0..2 * 3 * 9).map(|v| (v as f64 * 0.37).sin()).collect();
        let layer = ConvLayer::new(2, 3, 3, weights, Activation::Identity).unwrap();
        let out = flatten_filters(&layer, Direction::Output).unwrap();
        for j in 0..3 {
            let col: Vec<f64> = out.matrix().column(j).iter().copied().collect();
            assert_eq!(col.as_slice(), layer.filter(j));
        }
        let inp = flatten_filters(&layer, Direction::Input).unwrap();
        for i in 0..2 {
            for out_ch in 0..3 {
                for r in 0..3 {
                    for c in 0..3 {
                        let v = inp.matrix()[(out_ch * 9 + r * 3 + c, i)];
                        assert_eq!(v.to_bits(), layer.weights()[layer.weight_index(out_ch, i, r, c)].to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn zero_filter_rejected() {
        let layer = ConvLayer::new(1, 2, 1, vec![1.0, 0.0], Activation::Identity).unwrap();
        assert!(matches!(
            flatten_filters(&layer, Direction::Output),
            Err(Error::ZeroColumn { index: 1 })
        ));
    }

    #[test]
    fn self_representation_is_identity() {
        let a = DMatrix::from_fn(6, 4, |r, c| ((r * 4 + c) as f64 * 0.71).cos() + if r == c { 2.0 } else { 0.0 });
        let lambda = least_squares_lambda(&a, &a, 0.0).unwrap();
        assert!((lambda - DMatrix::identity(4, 4)).amax() < 1e-10);
    }

    #[test]
    fn one_dimensional_projection() {
        let u = DMatrix::from_column_slice(3, 1, &[0.6, 0.8, 0.0]);
        let b = &u * 3.0;
        let lambda = least_squares_lambda(&u, &b, 0.0).unwrap();
        assert!((lambda[(0, 0)] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn orthogonal_target_contributes_its_energy() {
        let a = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let b = DMatrix::from_column_slice(3, 2, &[2.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
        let lambda = least_squares_lambda(&a, &b, 0.0).unwrap();
        let (e, per) = total_error(&a, &b, &lambda).unwrap();
        assert!(per[0].abs() < 1e-12);
        assert!((per[1] - 4.0).abs() < 1e-12);
        assert!((e - 4.0).abs() < 1e-12);
    }

    #[test]
    fn full_set_has_no_error() {
        let a = DMatrix::from_fn(5, 3, |r, c| (r as f64 + 1.0).powi(c as i32 + 1));
        let lambda = least_squares_lambda(&a, &a, 0.0).unwrap();
        assert!(total_error(&a, &a, &lambda).unwrap().0 < 1e-12);
    }

    #[test]
    fn singular_gram_is_reported() {
        let a = DMatrix::from_column_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        match least_squares_lambda(&a, &a, 0.0) {
            Err(Error::Singular { condition }) => assert!(condition > 1e15),
            other => panic!("expected singular error, got {other:?}"),
        }
        // the default ridge makes the same system solvable
        assert!(least_squares_lambda(&a, &a, 1e-10).is_ok());
    }

    #[test]
    fn target_count_rounding() {
        assert_eq!(target_count(0.0, 8).unwrap(), 8);
        assert_eq!(target_count(0.5, 8).unwrap(), 4);
        assert_eq!(target_count(0.5, 5).unwrap(), 3);
        assert!(target_count(0.95, 4).is_err());
        assert!(target_count(1.0, 4).is_err());
        assert!(target_count(-0.1, 4).is_err());
    }

    #[test]
    fn ties_pick_lowest_index() {
        assert_eq!(argmin_tied(&[3.0, 1.0, 1.0 + 1e-15, 0.9999999], 1e-3), 1);
        assert_eq!(argmin_tied(&[3.0, 1.0, 0.5], 0.0), 2);
    }
}
