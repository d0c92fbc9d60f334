//! Seeded self-checks that compare the fast algorithms with slow, direct oracles.
//!
//! Trial `i` of a suite run with seed `s` uses seed `s + i`, so a failing trial
//! can be replayed alone with `trials = 1`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::compensation::{mixing_map_or_identity, prune_layer};
use crate::error::Result;
use crate::select::{tree_errors, ErrorPoint, PruneConfig, Pruner, Selector};
use crate::sparse::{
    elimination_scores, flatten_filters, fp_backward_to, fp_omp_to, BackwardEliminator, Direction, FilterMatrix,
    GramBlocks, SelectionConfig,
};
use crate::tensor::{conv_linear, forward, Activation, ConvLayer, Dataset, Network, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Theorem1,
    Theorem2,
    OmpOracle,
    BackwardOracle,
    TreeOracle,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Theorem1, Suite::Theorem2, Suite::OmpOracle, Suite::BackwardOracle, Suite::TreeOracle];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Theorem1 => "theorem1",
            Suite::Theorem2 => "theorem2",
            Suite::OmpOracle => "omp-oracle",
            Suite::BackwardOracle => "backward-oracle",
            Suite::TreeOracle => "tree-oracle",
        }
    }

    pub fn default_trials(self) -> usize {
        match self {
            Suite::Theorem2 => 100,
            Suite::Theorem1 | Suite::OmpOracle | Suite::BackwardOracle => 50,
            Suite::TreeOracle => 10,
        }
    }

    pub fn tolerance(self) -> f64 {
        match self {
            Suite::TreeOracle => 1e-10,
            _ => 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub trials: usize,
    pub tolerance: f64,
    /// Largest relative deviation seen across all trials.
    pub max_deviation: f64,
    /// Discrete disagreements: selection order, chosen filter, or pass count.
    pub mismatches: usize,
    pub failing_seeds: Vec<u64>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failing_seeds.is_empty()
    }
}

#[derive(Debug, Default)]
struct Trial {
    deviation: f64,
    mismatches: usize,
}

impl Trial {
    fn deviate(&mut self, d: f64) {
        // NaN counts as a failure
        self.deviation = if d.is_nan() { f64::INFINITY } else { self.deviation.max(d) };
    }
}

pub fn run_suite(suite: Suite, seed: u64, trials: usize) -> Result<SuiteReport> {
    let mut report = SuiteReport {
        suite,
        trials,
        tolerance: suite.tolerance(),
        max_deviation: 0.0,
        mismatches: 0,
        failing_seeds: Vec::new(),
    };
    for i in 0..trials as u64 {
        let s = seed.wrapping_add(i);
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let t = match suite {
            Suite::Theorem1 => theorem1_trial(&mut rng)?,
            Suite::Theorem2 => theorem2_trial(&mut rng)?,
            Suite::OmpOracle => omp_trial(&mut rng)?,
            Suite::BackwardOracle => backward_trial(&mut rng)?,
            Suite::TreeOracle => tree_trial(&mut rng)?,
        };
        report.max_deviation = report.max_deviation.max(t.deviation);
        report.mismatches += t.mismatches;
        if t.deviation > report.tolerance || t.mismatches > 0 {
            report.failing_seeds.push(s);
        }
    }
    Ok(report)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn condition(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().svd(false, false).singular_values;
    sv.max() / sv.min()
}

/// Full-column-rank matrix with condition number below `1e8`.
fn well_conditioned(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    loop {
        let a = random_matrix(rng, rows, cols);
        if condition(&a) < 1e8 {
            return a;
        }
    }
}

/// `min_X ||B - A X||_F^2` by Householder QR; `||B||^2` when `A` has no columns.
fn lsq_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    if a.ncols() == 0 {
        return b.norm_squared();
    }
    let x = lsq_solve(a, b);
    (b - a * x).norm_squared()
}

fn lsq_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let qr = a.clone().qr();
    qr.r().solve_upper_triangular(&(qr.q().transpose() * b)).expect("full column rank")
}

fn rel(found: f64, expected: f64) -> f64 {
    (found - expected).abs() / expected.abs().max(f64::MIN_POSITIVE)
}

fn theorem2_trial(rng: &mut ChaCha8Rng) -> Result<Trial> {
    let rows = rng.random_range(8..=64);
    let cols = rng.random_range(4..=16usize.min(rows));
    let p = rng.random_range(1..=8);
    let a = well_conditioned(rng, rows, cols);
    let b = random_matrix(rng, rows, p);
    let blocks = GramBlocks::new(&a, 0.0)?;
    let scores = elimination_scores(&a, &b, &blocks)?;
    let base = lsq_error(&a, &b);
    let mut t = Trial::default();
    for (k, u) in scores.iter().enumerate() {
        let expected = lsq_error(&a.clone().remove_column(k), &b) - base;
        t.deviate(rel(*u, expected));
    }
    Ok(t)
}

/// Same-padding cross-correlation of one input with one flattened filter, written out directly.
fn correlate(x: &Tensor, filter: &[f64], k: usize) -> Vec<f64> {
    let (m, h, w) = x.chw().expect("rank-3 input");
    let pad = (k - 1) / 2;
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for c in 0..m {
                for r in 0..k {
                    for s in 0..k {
                        let (ii, jj) = ((i + r) as isize - pad as isize, (j + s) as isize - pad as isize);
                        if ii >= 0 && jj >= 0 && (ii as usize) < h && (jj as usize) < w {
                            acc += x.data()[(c * h + ii as usize) * w + jj as usize] * filter[(c * k + r) * k + s];
                        }
                    }
                }
            }
            out[i * w + j] = acc;
        }
    }
    out
}

fn theorem1_trial(rng: &mut ChaCha8Rng) -> Result<Trial> {
    let m = rng.random_range(1..=8);
    let n = rng.random_range(2..=8);
    let k = if rng.random_bool(0.5) { 1 } else { 3 };
    let weights = (0..n * m * k * k).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut layer = ConvLayer::new(m, n, k, weights, Activation::Identity)?;
    if rng.random_bool(0.5) {
        layer = layer.with_comp(random_matrix(rng, n, n))?;
    }
    let remove = rng.random_range(1..=3usize.min(n - 1));
    let filters = flatten_filters(&layer, Direction::Output)?;
    let sel = if rng.random_bool(0.5) {
        fp_backward_to(&filters, n - remove, SelectionConfig::default())?
    } else {
        fp_omp_to(&filters, n - remove, SelectionConfig::default())?
    };
    let pruned = prune_layer(&layer, &sel)?;
    let g = mixing_map_or_identity(&layer);

    let f = filters.matrix();
    let epsilons: Vec<(usize, DVector<f64>)> = sel
        .removed()
        .into_iter()
        .map(|j| {
            let mut eps = f.column(j).into_owned();
            for (pos, &i) in sel.retained.iter().enumerate() {
                eps -= f.column(i) * sel.lambda[(pos, j)];
            }
            (j, eps)
        })
        .collect();

    let mut t = Trial::default();
    for _ in 0..5 {
        let (h, w) = (rng.random_range(3..=6), rng.random_range(3..=6));
        let x = Tensor::new(vec![m, h, w], (0..m * h * w).map(|_| rng.random_range(-1.0..1.0)).collect())?;
        let z = conv_linear(&layer, &x)?;
        let z_pruned = conv_linear(&pruned, &x)?;
        let responses: Vec<(usize, Vec<f64>)> =
            epsilons.iter().map(|(j, eps)| (*j, correlate(&x, eps.as_slice(), k))).collect();
        let hw = h * w;
        for out in 0..g.ncols() {
            let mut diff = 0.0;
            let mut scale = 0.0;
            for p in 0..hw {
                let lhs = z.data()[out * hw + p] - z_pruned.data()[out * hw + p];
                let rhs: f64 = responses.iter().map(|(j, r)| r[p] * g[(*j, out)]).sum();
                diff += (lhs - rhs).powi(2);
                scale += z.data()[out * hw + p].powi(2);
            }
            t.deviate(diff.sqrt() / scale.sqrt().max(f64::MIN_POSITIVE));
        }
    }
    Ok(t)
}

/// Matching pursuit written with explicit residual vectors.
fn omp_reference(unit: &DMatrix<f64>, target: usize) -> Vec<usize> {
    let n = unit.ncols();
    let mut residual = unit.clone();
    let mut selected: Vec<usize> = Vec::new();
    while selected.len() < target {
        let mut best = (f64::NEG_INFINITY, 0);
        for i in (0..n).filter(|i| !selected.contains(i)) {
            let xi: f64 = (0..n).map(|j| residual.column(j).dot(&unit.column(i)).abs()).sum();
            if xi > best.0 * (1.0 + 1e-12) {
                best = (xi, i);
            }
        }
        selected.push(best.1);
        let a_s = unit.select_columns(&selected);
        residual = unit - &a_s * lsq_solve(&a_s, unit);
    }
    selected
}

fn omp_trial(rng: &mut ChaCha8Rng) -> Result<Trial> {
    let n = rng.random_range(3..=12);
    let rows = rng.random_range(n..=40);
    let target = rng.random_range(1..n);
    let a = well_conditioned(rng, rows, n);
    let filters = FilterMatrix::new(a.clone())?;
    let sel = fp_omp_to(&filters, target, SelectionConfig::exact())?;
    let mut t = Trial::default();
    let unit = DMatrix::from_columns(&a.column_iter().map(|c| c / c.norm()).collect::<Vec<_>>());
    if sel.order != omp_reference(&unit, target) {
        t.mismatches += 1;
    }
    let lambda = lsq_solve(&a.select_columns(&sel.retained), &a);
    t.deviate((&sel.lambda - &lambda).norm() / lambda.norm());
    Ok(t)
}

fn backward_trial(rng: &mut ChaCha8Rng) -> Result<Trial> {
    let n = rng.random_range(3..=10);
    let rows = rng.random_range(n..=40);
    let a = well_conditioned(rng, rows, n);
    let filters = FilterMatrix::new(a.clone())?;
    let mut elim = BackwardEliminator::new(&filters, SelectionConfig::exact())?;
    let mut t = Trial::default();
    while elim.retained().len() > 1 {
        let retained = elim.retained().to_vec();
        let costs: Vec<f64> = (0..retained.len())
            .map(|k| {
                let rest: Vec<usize> = retained.iter().copied().filter(|&i| i != retained[k]).collect();
                lsq_error(&a.select_columns(&rest), &a)
            })
            .collect();
        let best = (0..costs.len()).fold(0, |b, k| if costs[k] < costs[b] { k } else { b });
        if elim.step()? != retained[best] {
            t.mismatches += 1;
        }
        let a_sub = a.select_columns(elim.retained());
        let fresh = a_sub.tr_mul(&a_sub).try_inverse().expect("full column rank");
        t.deviate((elim.blocks().inverse() - &fresh).norm() / fresh.norm());
    }
    Ok(t)
}

fn tree_trial(rng: &mut ChaCha8Rng) -> Result<Trial> {
    let depth = rng.random_range(2..=6);
    let mut m = rng.random_range(1..=4);
    let m0 = m;
    let mut layers = Vec::with_capacity(depth);
    for _ in 0..depth {
        let n = rng.random_range(2..=8);
        let weights = (0..n * m * 9).map(|_| rng.random_range(-1.0..1.0)).collect();
        layers.push(ConvLayer::new(m, n, 3, weights, Activation::Relu)?);
        m = n;
    }
    let net = Network::new(layers)?;
    let examples = (0..20)
        .map(|_| Tensor::new(vec![m0, 5, 5], (0..m0 * 25).map(|_| rng.random_range(-1.0..1.0)).collect()))
        .collect::<Result<Vec<_>>>()?;
    let data = Dataset::new(examples)?;

    let cfg = PruneConfig { alpha: 1, beta: 0.9, selector: Selector::Hbgts, ..PruneConfig::default() };
    let mut pruner = Pruner::new(net, &data, cfg)?;
    let mut t = Trial::default();
    for _ in 0..3 {
        let current = pruner.network().clone();
        let cands: Vec<Option<ConvLayer>> =
            pruner.candidates()?.iter().map(|c| c.as_ref().map(|c| c.layer.clone())).collect();
        if cands.iter().all(Option::is_none) {
            break;
        }
        let scores = tree_errors(&current, &cands, &data, ErrorPoint::PostActivation)?;
        if scores.passes != data.len() {
            t.mismatches += 1;
        }
        let mut naive_passes = 0;
        for (l, cand) in cands.iter().enumerate() {
            let Some(cand) = cand else { continue };
            let mut hyp = current.clone();
            hyp.replace_layer(l, cand.clone())?;
            let mut naive = 0.0;
            for x in data.examples() {
                let y = forward(&current, x)?;
                let norm = y.norm();
                if norm > 0.0 {
                    naive += y.distance(&forward(&hyp, x)?)? / norm;
                }
                naive_passes += 1;
            }
            let found = scores.errors[l].expect("candidate has a score");
            t.deviate((found - naive).abs() / naive.abs().max(1e-12));
        }
        if naive_passes != cands.iter().flatten().count() * data.len() {
            t.mismatches += 1;
        }
        if pruner.step()?.is_none() {
            break;
        }
    }
    Ok(t)
}
