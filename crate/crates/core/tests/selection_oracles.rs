use filterprune_core::sparse::{
    elimination_scores, fp_backward_to, fp_omp_to, BackwardEliminator, FilterMatrix, GramBlocks, SelectionConfig,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn condition(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().svd(false, false).singular_values;
    sv.max() / sv.min()
}

fn well_conditioned(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    loop {
        let a = random_matrix(rng, rows, cols);
        if condition(&a) < 1e8 {
            return a;
        }
    }
}

/// `min ||B - A X||_F^2` via QR.
fn lsq_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    if a.ncols() == 0 {
        return b.norm_squared();
    }
    let qr = a.clone().qr();
    let x = qr.r().solve_upper_triangular(&(qr.q().transpose() * b)).unwrap();
    (b - a * x).norm_squared()
}

fn subsets(n: usize, size: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n)
        .filter(|mask| mask.count_ones() as usize == size)
        .map(|mask| (0..n).filter(|i| mask & (1 << i) != 0).collect())
        .collect()
}

#[test]
fn closed_form_scores_match_recomputed_error_increase() {
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = rng.random_range(8..=64);
        let cols = rng.random_range(4..=16usize.min(rows));
        let a = well_conditioned(&mut rng, rows, cols);
        let p = rng.random_range(1..=6);
        let b = random_matrix(&mut rng, rows, p);
        let blocks = GramBlocks::new(&a, 0.0).unwrap();
        let u = elimination_scores(&a, &b, &blocks).unwrap();
        let base = lsq_error(&a, &b);
        for k in 0..cols {
            let expected = lsq_error(&a.clone().remove_column(k), &b) - base;
            worst = worst.max((u[k] - expected).abs() / expected);
        }
    }
    assert!(worst <= 1e-8, "worst relative deviation {worst:e}");
}

#[test]
fn every_elimination_is_the_best_single_removal() {
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let n = rng.random_range(3..=10);
        let rows = rng.random_range(n..=30);
        let a = well_conditioned(&mut rng, rows, n);
        let filters = FilterMatrix::new(a.clone()).unwrap();
        let mut elim = BackwardEliminator::new(&filters, SelectionConfig::exact()).unwrap();
        while elim.retained().len() > 1 {
            let set = elim.retained().to_vec();
            let costs: Vec<f64> = set
                .iter()
                .map(|&drop| {
                    let rest: Vec<usize> = set.iter().copied().filter(|&i| i != drop).collect();
                    lsq_error(&a.select_columns(&rest), &a)
                })
                .collect();
            let best = (0..costs.len()).fold(0, |b, k| if costs[k] < costs[b] { k } else { b });
            assert_eq!(elim.step().unwrap(), set[best], "seed {seed}");

            let kept = a.select_columns(elim.retained());
            let fresh = kept.tr_mul(&kept).try_inverse().unwrap();
            let dev = (elim.blocks().inverse() - &fresh).norm() / fresh.norm();
            assert!(dev <= 1e-8, "seed {seed}: downdate deviates by {dev:e}");
        }
    }
}

#[test]
fn greedy_errors_against_best_subset() {
    let mut ratios = Vec::new();
    for seed in 0..40 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let n = rng.random_range(4..=8);
        let rows = rng.random_range(n..=16);
        let a = random_matrix(&mut rng, rows, n);
        let filters = FilterMatrix::new(a.clone()).unwrap();
        for target in 1..n {
            let best = subsets(n, target)
                .iter()
                .map(|s| lsq_error(&a.select_columns(s), &a))
                .fold(f64::INFINITY, f64::min);
            for sel in [
                fp_backward_to(&filters, target, SelectionConfig::exact()).unwrap(),
                fp_omp_to(&filters, target, SelectionConfig::exact()).unwrap(),
            ] {
                let own = lsq_error(&a.select_columns(&sel.retained), &a);
                assert!((sel.residual_error - own).abs() <= 1e-9 * own.max(1.0));
                assert!(own >= best * (1.0 - 1e-9));
                ratios.push(own / best);
            }
        }
    }
    let worst = ratios.iter().copied().fold(1.0, f64::max);
    let optimal = ratios.iter().filter(|r| **r <= 1.0 + 1e-9).count();
    println!("greedy/best-subset error: worst ratio {worst:.3}, optimal in {optimal}/{}", ratios.len());
}

fn matrix_strategy() -> impl Strategy<Value = (DMatrix<f64>, usize)> {
    (3usize..=8).prop_flat_map(|n| {
        (n..=20usize).prop_flat_map(move |rows| {
            (prop::collection::vec(-1.0f64..1.0, rows * n), 1..n)
                .prop_map(move |(v, t)| (DMatrix::from_vec(rows, n, v), t))
        })
    })
}

fn usable(a: &DMatrix<f64>) -> bool {
    condition(a) < 1e6
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn backward_is_permutation_equivariant((a, target) in matrix_strategy(), seed in any::<u64>()) {
        prop_assume!(usable(&a));
        let n = a.ncols();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let permuted = a.select_columns(&perm);
        let x = fp_backward_to(&FilterMatrix::new(a).unwrap(), target, SelectionConfig::default()).unwrap();
        let y = fp_backward_to(&FilterMatrix::new(permuted).unwrap(), target, SelectionConfig::default()).unwrap();
        let mut mapped: Vec<usize> = y.retained.iter().map(|&i| perm[i]).collect();
        mapped.sort_unstable();
        prop_assert_eq!(mapped, x.retained);
        prop_assert!((x.residual_error - y.residual_error).abs() <= 1e-9 * x.residual_error.max(1e-12));
    }

    #[test]
    fn selection_ignores_scale((a, target) in matrix_strategy(), c in 0.01f64..100.0, col_scale in prop::collection::vec(0.1f64..10.0, 8)) {
        prop_assume!(usable(&a));
        let base = FilterMatrix::new(a.clone()).unwrap();
        let scaled = FilterMatrix::new(&a * c).unwrap();
        let x = fp_backward_to(&base, target, SelectionConfig::default()).unwrap();
        let y = fp_backward_to(&scaled, target, SelectionConfig::default()).unwrap();
        prop_assert_eq!(&x.retained, &y.retained);
        prop_assert!((y.residual_error - c * c * x.residual_error).abs() <= 1e-8 * (c * c * x.residual_error).max(1e-12));

        let mut per_col = a.clone();
        for (j, mut col) in per_col.column_iter_mut().enumerate() {
            col *= col_scale[j];
        }
        let o1 = fp_omp_to(&base, target, SelectionConfig::default()).unwrap();
        let o2 = fp_omp_to(&FilterMatrix::new(per_col).unwrap(), target, SelectionConfig::default()).unwrap();
        prop_assert_eq!(o1.order, o2.order);
    }

    #[test]
    fn residuals_shrink_as_more_filters_are_kept((a, _t) in matrix_strategy()) {
        prop_assume!(usable(&a));
        let filters = FilterMatrix::new(a.clone()).unwrap();
        for method in [fp_backward_to, fp_omp_to] {
            let errs: Vec<f64> = (1..=a.ncols())
                .map(|t| method(&filters, t, SelectionConfig::exact()).unwrap().residual_error)
                .collect();
            for w in errs.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-12);
            }
            prop_assert!(errs[errs.len() - 1] <= 1e-9 * a.norm_squared());
        }
    }
}
