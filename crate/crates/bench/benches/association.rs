use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use quasitrack::association::{bisoftmax, cosine_matrix, greedy_assign, hungarian_assign};
use quasitrack::experiments::Benchmark;
use quasitrack::experiments::RunMode;
use quasitrack::tracker::{run_sequence, TrackerConfig};
use quasitrack_bench::embeddings;
use std::hint::black_box;

fn similarity(c: &mut Criterion) {
    let mut group = c.benchmark_group("similarity");
    for n in [16, 64, 256] {
        let dets = embeddings(1, n, 128);
        let cands = embeddings(2, n, 128);
        group.bench_with_input(BenchmarkId::new("bisoftmax", n), &n, |b, _| {
            b.iter(|| bisoftmax(black_box(&dets), black_box(&cands)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("cosine", n), &n, |b, _| {
            b.iter(|| cosine_matrix(black_box(&dets), black_box(&cands)).unwrap())
        });
    }
    group.finish();
}

fn assignment(c: &mut Criterion) {
    let mut group = c.benchmark_group("assign");
    for n in [16, 64, 256] {
        let sim = bisoftmax(&embeddings(3, n, 64), &embeddings(4, n, 64)).unwrap();
        let scores: Vec<f64> = (0..n).map(|i| 1.0 - i as f64 / (2 * n) as f64).collect();
        let cats = vec![0u32; n];
        group.bench_with_input(BenchmarkId::new("greedy", n), &n, |b, _| {
            b.iter(|| greedy_assign(black_box(&sim), &scores, &cats, &cats, 0.0))
        });
        group.bench_with_input(BenchmarkId::new("hungarian", n), &n, |b, _| {
            b.iter(|| hungarian_assign(black_box(&sim), &scores, &cats, &cats, 0.0))
        });
    }
    group.finish();
}

fn tracking(c: &mut Criterion) {
    let (_, dets) = Benchmark::standard().simulate(RunMode::Normal, 0).unwrap();
    let cfg = TrackerConfig::default();
    let mut group = c.benchmark_group("tracker");
    group.sample_size(20);
    group.bench_function("standard-200-frames", |b| {
        b.iter(|| run_sequence(&cfg, black_box(&dets.frames)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, similarity, assignment, tracking);
criterion_main!(benches);
