
use super::{add_to_diagonal, cholesky_checked, finish_selection, target_count, FilterMatrix, SelectionConfig, SelectionResult};
use crate::error::{Error, Result};

/// Relative slack under which two total projections count as tied.
const PROJECTION_TIE_RTOL: f64 = 1e-12;

/// Forward selection of `target` filters by matching pursuit with summed
/// projections.
///
/// Selection runs on unit-norm copies of the columns. At each step the
/// unselected column with the largest `xi_i = sum_j |R_j . f_i|` joins the set
/// and every residual `R_j` is refit by least squares. Projections are formed
/// from the Gram matrix of the normalized columns, `R^T F = H - lambda^T H_S`,
/// which avoids materializing the residual vectors.
pub fn fp_omp_to(filters: &FilterMatrix, target: usize, config: SelectionConfig) -> Result<SelectionResult> {
    let n = filters.cols();
    if target < 1 || target > n {
        return Err(Error::InvalidFraction {
            beta: 1.0 - target as f64 / n as f64,
            target: target as isize,
            total: n,
        });
    }
    let unit = filters.normalized();
    let gram = unit.tr_mul(&unit);
    let unit_ridge = config.ridge.value_for(1.0);

    let mut selected: Vec<usize> = Vec::with_capacity(target);
    let mut in_set = vec![false; n];
    // proj[(j, i)] = R_j . f_i; R = F before anything is selected
    let mut proj = gram.clone();

    while selected.len() < target {
        let xi: Vec<f64> = (0..n)
            .map(|i| if in_set[i] { f64::NEG_INFINITY } else { proj.column(i).abs().sum() })
            .collect();
        let best = xi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let tol = PROJECTION_TIE_RTOL * best.abs();
        let ind = xi.iter().position(|&v| v >= best - tol).expect("an unselected filter remains");
        selected.push(ind);
        in_set[ind] = true;

        if selected.len() == target {
            break;
        }
        let cross = gram.select_rows(&selected);
        let mut gram_s = cross.select_columns(&selected);
        add_to_diagonal(&mut gram_s, unit_ridge);
        let lambda = cholesky_checked(gram_s)?.solve(&cross);
        proj = &gram - lambda.tr_mul(&cross);
    }

    let ridge = config.ridge.value_for(filters.mean_sq_norm());
    finish_selection(filters, selected.clone(), selected, ridge)
}

/// Keeps `round((1 - beta) n)` filters chosen by [`fp_omp_to`].
pub fn fp_omp(filters: &FilterMatrix, beta: f64, config: SelectionConfig) -> Result<SelectionResult> {
    fp_omp_to(filters, target_count(beta, filters.cols())?, config)
}

/// Literal residual-vector form of the selection loop, for cross-checking.
#[cfg(test)]
pub(crate) fn omp_reference_order(filters: &FilterMatrix, target: usize) -> Vec<usize> {
    let unit: nalgebra::DMatrix<f64> = filters.normalized();
    let n = unit.ncols();
    let mut residual = unit.clone();
    let mut selected = Vec::new();
    while selected.len() < target {
        let mut best = (f64::NEG_INFINITY, 0);
        for i in (0..n).filter(|i| !selected.contains(i)) {
            let xi: f64 = (0..n).map(|j| residual.column(j).dot(&unit.column(i)).abs()).sum();
            if xi > best.0 * (1.0 + PROJECTION_TIE_RTOL) {
                best = (xi, i);
            }
        }
        selected.push(best.1);
        let a_s = unit.select_columns(&selected);
        let qr = a_s.clone().qr();
        for j in 0..n {
            let b = unit.column(j).into_owned();
            let coef = qr.r().solve_upper_triangular(&(qr.q().transpose() * &b)).unwrap();
            residual.set_column(j, &(b - &a_s * coef));
        }
    }
    selected
}
