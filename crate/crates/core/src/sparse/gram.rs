use nalgebra::{DMatrix, DVector};

use super::{add_to_diagonal, cholesky_checked};
use crate::error::{Error, Result};

/// Inverse Gram matrix of the currently retained columns.
///
/// Viewing column `k` as the last one, the inverse splits as
///
/// ```text
/// [ G_k    g_k     ]
/// [ g_k^T  gamma_k ]
/// ```
///
/// and `d_k = A_{-k} g_k + a_k gamma_k`. The `D_k` block is never needed.
#[derive(Debug, Clone, PartialEq)]
pub struct GramBlocks {
    gram: DMatrix<f64>,
    inverse: DMatrix<f64>,
    ridge: f64,
}

impl GramBlocks {
    /// Inverts `A_S^T A_S + ridge I` from scratch.
    pub fn new(a_sub: &DMatrix<f64>, ridge: f64) -> Result<Self> {
        if a_sub.ncols() == 0 {
            return Err(Error::Dimension("Gram of an empty column set".into()));
        }
        let mut gram = a_sub.tr_mul(a_sub);
        add_to_diagonal(&mut gram, ridge);
        let inverse = symmetrize(cholesky_checked(gram.clone())?.inverse());
        Ok(Self { gram, inverse, ridge })
    }

    pub fn size(&self) -> usize {
        self.inverse.nrows()
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn gamma(&self, k: usize) -> f64 {
        self.inverse[(k, k)]
    }

    /// Off-diagonal part of column `k` (row `k` removed).
    pub fn g(&self, k: usize) -> DVector<f64> {
        self.inverse.column(k).into_owned().remove_row(k)
    }

    /// `d_k = A_{-k} g_k + a_k gamma_k`.
    pub fn d(&self, k: usize, a_sub: &DMatrix<f64>) -> DVector<f64> {
        let a_minus = a_sub.clone().remove_column(k);
        &a_minus * self.g(k) + a_sub.column(k) * self.gamma(k)
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Inverse Gram with column `k` deleted: `G_k - g_k g_k^T / gamma_k`.
pub fn downdate_gram(blocks: &GramBlocks, k: usize) -> Result<GramBlocks> {
    let s = blocks.size();
    if k >= s {
        return Err(Error::Dimension(format!("column {k} out of range for {s} retained")));
    }
    if s < 2 {
        return Err(Error::Dimension("cannot downdate below one retained column".into()));
    }
    let gamma = blocks.gamma(k);
    if !(gamma > 0.0) {
        return Err(Error::NotPositiveDefinite { index: k, gamma });
    }
    let g = blocks.g(k);
    let mut inverse = blocks.inverse.clone().remove_row(k).remove_column(k);
    inverse.ger(-1.0 / gamma, &g, &g, 1.0);
    let gram = blocks.gram.clone().remove_row(k).remove_column(k);
    Ok(GramBlocks { gram, inverse: symmetrize(inverse), ridge: blocks.ridge })
}

/// `u_k = sum_j (d_k^T B_j)^2 / gamma_k`: the increase in total squared error
/// caused by deleting retained column `k`.
pub fn elimination_scores(a_sub: &DMatrix<f64>, b: &DMatrix<f64>, blocks: &GramBlocks) -> Result<Vec<f64>> {
    let s = a_sub.ncols();
    if blocks.size() != s || a_sub.nrows() != b.nrows() || s == 0 {
        return Err(Error::Dimension(format!(
            "blocks of size {} for A_S {}x{} and B {}x{}",
            blocks.size(),
            a_sub.nrows(),
            s,
            b.nrows(),
            b.ncols()
        )));
    }
    let expected = a_sub.column(0).norm_squared() + blocks.ridge;
    let stored = blocks.gram[(0, 0)];
    if (stored - expected).abs() > 1e-8 * expected.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::Inconsistent(format!(
            "Gram entry (0,0) is {stored}, columns give {expected}"
        )));
    }
    for k in 0..s {
        let gamma = blocks.gamma(k);
        if !(gamma > 0.0) {
            return Err(Error::NotPositiveDefinite { index: k, gamma });
        }
    }
    // Column k of A_S G is A_{-k} g_k + a_k gamma_k = d_k.
    let d = a_sub * &blocks.inverse;
    let projections = d.tr_mul(b);
    Ok((0..s)
        .map(|k| projections.row(k).norm_squared() / blocks.gamma(k))
        .collect())
}
