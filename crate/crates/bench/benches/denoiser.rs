use std::hint::black_box;
use criterion::{criterion_group, criterion_main, Criterion};
use gazegen_bench::denoiser_case;

fn denoiser(c: &mut Criterion) {
    let case = denoiser_case();
    let mut group = c.benchmark_group("denoiser");
    group.sample_size(20);
    group.bench_function("forward", |b| {
        b.iter(|| case.model.forward(black_box(&case.input), 500, &case.tokens).unwrap())
    });
    group.bench_function("forward_backward", |b| {
        b.iter(|| {
            let (pred, tape) = case.model.forward_tape(black_box(&case.input), 500, &case.tokens).unwrap();
            case.model.backward(&tape, &pred).unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, denoiser);
criterion_main!(benches);
