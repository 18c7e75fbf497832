use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ksbl_bench::fixture;
use ksbl_core::em::{kalman_filter, rts_smoother, viterbi, EStep};
use ksbl_core::{em_iterate, log_likelihood, log_likelihood_innovations, Theta};
use std::hint::black_box;

fn likelihood(c: &mut Criterion) {
    let mut g = c.benchmark_group("likelihood");
    for k in [10, 40] {
        let (model, data) = fixture(4, 2, k, 0);
        let theta = Theta::uniform(&model, 1.0);
        g.bench_with_input(BenchmarkId::new("dense", k), &k, |b, _| {
            b.iter(|| log_likelihood(&model, black_box(&data.y), &theta).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("innovations", k), &k, |b, _| {
            b.iter(|| log_likelihood_innovations(&model, black_box(&data.y), &theta).unwrap())
        });
    }
    g.finish();
}

fn smoother(c: &mut Criterion) {
    let mut g = c.benchmark_group("smoother");
    for k in [50, 200] {
        let (model, data) = fixture(8, 4, k, 0);
        let theta = Theta::uniform(&model, 1.0);
        g.bench_with_input(BenchmarkId::from_parameter(k), &k, |b, _| {
            b.iter(|| rts_smoother(&model, &kalman_filter(&model, black_box(&data.y), &theta).unwrap()).unwrap())
        });
    }
    g.finish();
}

fn decoding(c: &mut Criterion) {
    let (model, data) = fixture(8, 4, 500, 0);
    let es = EStep::run(&model, &data.y, &Theta::uniform(&model, 1.0)).unwrap();
    c.bench_function("viterbi/500", |b| b.iter(|| viterbi(black_box(&es.scores), &model)));
}

fn iteration(c: &mut Criterion) {
    let mut g = c.benchmark_group("em_iterate");
    for (n, k) in [(4, 50), (16, 100)] {
        let (model, data) = fixture(n, 4, k, 0);
        let theta = Theta::uniform(&model, 1.0);
        g.bench_with_input(BenchmarkId::new(format!("n{n}"), k), &k, |b, _| {
            b.iter(|| em_iterate(&model, black_box(&data.y), &theta, 1e-12).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, likelihood, smoother, decoding, iteration);
criterion_main!(benches);
