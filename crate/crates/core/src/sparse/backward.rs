use nalgebra::DMatrix;

use super::gram::{downdate_gram, elimination_scores, GramBlocks};
use super::{argmin_tied, finish_selection, target_count, FilterMatrix, SelectionConfig, SelectionResult, TIE_RTOL};
use crate::error::{Error, Result};

/// Backward elimination over the columns of a [`FilterMatrix`].
///
/// The targets `B` stay fixed to all original columns while the retained set
/// shrinks one column per [`step`](Self::step). Retained columns are kept in
/// ascending original-index order, so working position `k` maps to
/// `retained()[k]`.
#[derive(Debug, Clone)]
pub struct BackwardEliminator<'a> {
    filters: &'a FilterMatrix,
    config: SelectionConfig,
    ridge: f64,
    retained: Vec<usize>,
    a_sub: DMatrix<f64>,
    blocks: GramBlocks,
    eliminated: Vec<usize>,
    tie_tol: f64,
}

impl<'a> BackwardEliminator<'a> {
    pub fn new(filters: &'a FilterMatrix, config: SelectionConfig) -> Result<Self> {
        let ridge = config.ridge.value_for(filters.mean_sq_norm());
        let a_sub = filters.matrix().clone();
        let blocks = GramBlocks::new(&a_sub, ridge)?;
        let tie_tol = TIE_RTOL * filters.matrix().norm_squared();
        Ok(Self {
            filters,
            config,
            ridge,
            retained: (0..filters.cols()).collect(),
            a_sub,
            blocks,
            eliminated: Vec::new(),
            tie_tol,
        })
    }

    pub fn retained(&self) -> &[usize] {
        &self.retained
    }

    pub fn eliminated(&self) -> &[usize] {
        &self.eliminated
    }

    pub fn blocks(&self) -> &GramBlocks {
        &self.blocks
    }

    /// `A_S` for the current retained set.
    pub fn a_sub(&self) -> &DMatrix<f64> {
        &self.a_sub
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    /// Error increase for removing each retained column, by working position.
    pub fn scores(&self) -> Result<Vec<f64>> {
        elimination_scores(&self.a_sub, self.filters.matrix(), &self.blocks)
    }

    /// Removes the cheapest column and returns its original index.
    pub fn step(&mut self) -> Result<usize> {
        if self.retained.len() < 2 {
            return Err(Error::Dimension("cannot eliminate the last retained filter".into()));
        }
        let scores = self.scores()?;
        let k = argmin_tied(&scores, self.tie_tol);
        let removed = self.retained.remove(k);
        self.a_sub = std::mem::replace(&mut self.a_sub, DMatrix::zeros(0, 0)).remove_column(k);
        self.blocks = if self.config.fresh_inverse {
            GramBlocks::new(&self.a_sub, self.ridge)?
        } else {
            downdate_gram(&self.blocks, k)?
        };
        self.eliminated.push(removed);
        Ok(removed)
    }

    pub fn finish(self) -> Result<SelectionResult> {
        finish_selection(self.filters, self.retained, self.eliminated, self.ridge)
    }
}

/// Backward elimination down to `target` retained filters.
pub fn fp_backward_to(filters: &FilterMatrix, target: usize, config: SelectionConfig) -> Result<SelectionResult> {
    let n = filters.cols();
    if target < 1 || target > n {
        return Err(Error::InvalidFraction {
            beta: 1.0 - target as f64 / n as f64,
            target: target as isize,
            total: n,
        });
    }
    let mut elim = BackwardEliminator::new(filters, config)?;
    while elim.retained().len() > target {
        elim.step()?;
    }
    elim.finish()
}

/// Prunes a fraction `beta` of the filters by backward elimination.
pub fn fp_backward(filters: &FilterMatrix, beta: f64, config: SelectionConfig) -> Result<SelectionResult> {
    fp_backward_to(filters, target_count(beta, filters.cols())?, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_filters(seed: u64, rows: usize, cols: usize) -> FilterMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FilterMatrix::new(DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))).unwrap()
    }

    #[test]
    fn keep_everything() {
        let f = random_filters(1, 9, 4);
        let r = fp_backward(&f, 0.0, SelectionConfig::default()).unwrap();
        assert_eq!(r.retained, vec![0, 1, 2, 3]);
        assert!((&r.lambda - DMatrix::identity(4, 4)).amax() < 1e-8);
        assert!(r.residual_error < 1e-12);
        assert!(r.order.is_empty());
    }

    #[test]
    fn scaled_duplicate_ties_break_low() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut a = DMatrix::from_fn(9, 4, |_, _| rng.random_range(-1.0..1.0));
        let twice = a.column(0) * 2.0;
        a.set_column(2, &twice);
        let f = FilterMatrix::new(a).unwrap();
        let elim = BackwardEliminator::new(&f, SelectionConfig::default()).unwrap();
        let u = elim.scores().unwrap();
        let energy = f.matrix().norm_squared();
        assert!(u[0] < 1e-9 * energy && u[2] < 1e-9 * energy, "{u:?}");
        let r = fp_backward_to(&f, 3, SelectionConfig::default()).unwrap();
        assert_eq!(r.order, vec![0]);
        assert_eq!(r.retained, vec![1, 2, 3]);
        assert!(r.residual_error < 1e-12 * energy);
    }

    #[test]
    fn residual_consistency() {
        let f = random_filters(3, 12, 7);
        let r = fp_backward(&f, 0.4, SelectionConfig::default()).unwrap();
        assert_eq!(r.retained.len(), 4);
        let sum: f64 = r.per_target_error.iter().sum();
        assert!((sum - r.residual_error).abs() <= 1e-10 * r.residual_error);
        let scale = f.mean_sq_norm();
        for &j in &r.retained {
            assert!(r.per_target_error[j] <= 1e-10 * scale);
        }
    }

    #[test]
    fn fresh_and_downdated_paths_agree() {
        let f = random_filters(4, 20, 10);
        let a = fp_backward_to(&f, 3, SelectionConfig::default()).unwrap();
        let b = fp_backward_to(&f, 3, SelectionConfig { fresh_inverse: true, ..Default::default() }).unwrap();
        assert_eq!(a.order, b.order);
        assert_eq!(a.retained, b.retained);
    }

    #[test]
    fn invalid_targets() {
        let f = random_filters(5, 6, 3);
        assert!(matches!(fp_backward(&f, 0.9, SelectionConfig::default()), Err(Error::InvalidFraction { .. })));
        assert!(fp_backward_to(&f, 0, SelectionConfig::default()).is_err());
        assert!(fp_backward_to(&f, 4, SelectionConfig::default()).is_err());
    }
}
