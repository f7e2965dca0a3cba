use std::hint::black_box;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gazegen::metrics::{discrete_frechet, dtw, levenshtein, max_temporal_correlation, quantize};
use gazegen_bench::wander;

fn metrics(c: &mut Criterion) {
    let mut group = c.benchmark_group("metrics");
    for n in [300usize, 1800] {
        let p = wander(n, 1);
        let q = wander(n, 2);
        group.bench_with_input(BenchmarkId::new("dtw", n), &n, |b, _| b.iter(|| dtw(black_box(&p), black_box(&q))));
        group.bench_with_input(BenchmarkId::new("frechet", n), &n, |b, _| {
            b.iter(|| discrete_frechet(black_box(&p), black_box(&q)))
        });
        let (sp, sq) = (quantize(&p, (8, 8)), quantize(&q, (8, 8)));
        group.bench_with_input(BenchmarkId::new("levenshtein", n), &n, |b, _| {
            b.iter(|| levenshtein(black_box(&sp), black_box(&sq)))
        });
        group.bench_with_input(BenchmarkId::new("mtc", n), &n, |b, _| {
            b.iter(|| max_temporal_correlation(black_box(&p), black_box(&q), 60))
        });
    }
    group.finish();
}

criterion_group!(benches, metrics);
criterion_main!(benches);
