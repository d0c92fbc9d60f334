use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use filterprune_bench::{candidates, dataset, network};
use filterprune_core::select::tree_errors;
use filterprune_core::tensor::forward;
use filterprune_core::ErrorPoint;
use std::hint::black_box;

fn scoring(c: &mut Criterion) {
    let mut group = c.benchmark_group("final_output_scores");
    group.sample_size(10);
    for depth in [3usize, 6] {
        let net = network(depth, 8, depth as u64);
        let data = dataset(8, 8, 8, 100 + depth as u64);
        let cands = candidates(&net, 2);
        group.bench_with_input(BenchmarkId::new("tree", depth), &depth, |b, _| {
            b.iter(|| tree_errors(black_box(&net), &cands, &data, ErrorPoint::PostActivation).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("naive", depth), &depth, |b, _| {
            b.iter(|| {
                let mut errors = vec![0.0; depth];
                for (l, cand) in cands.iter().enumerate() {
                    let Some(cand) = cand else { continue };
                    let mut hyp = net.clone();
                    hyp.replace_layer(l, cand.clone()).unwrap();
                    for x in data.examples() {
                        let y = forward(&net, x).unwrap();
                        errors[l] += y.distance(&forward(&hyp, x).unwrap()).unwrap() / y.norm();
                    }
                }
                errors
            })
        });
    }
    group.finish();
}

criterion_group!(benches, scoring);
criterion_main!(benches);
