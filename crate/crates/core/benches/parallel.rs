//! One worker thread against the full pool on the two hottest paths.
//! Build with `--no-default-features` to measure the fully sequential code.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use qarima::armodel::{vqc_ar_estimate, LossWeights, VqcConfig};
use qarima::diagnostics::{qacf, LagConfig};
use qarima::par;
use qarima::series::synth_arma;

fn bench_qacf(c: &mut Criterion) {
    let y = synth_arma(&[0.6, -0.2], &[], 2000, 1.0, 1).unwrap().values;
    let cfg = LagConfig { max_lag: 20, shots: 1024, ..Default::default() };
    let mut g = c.benchmark_group("qacf");
    g.bench_function("one_thread", |b| par::with_jobs(Some(1), || b.iter(|| qacf(black_box(&y), &cfg).unwrap())));
    g.bench_function("pool", |b| b.iter(|| qacf(black_box(&y), &cfg).unwrap()));
    g.finish();
}

fn bench_ar(c: &mut Criterion) {
    let y = synth_arma(&[0.5, -0.3, 0.1], &[], 400, 1.0, 2).unwrap().values;
    let cfg = VqcConfig { shots: 512, max_iter: 60, ..Default::default() };
    let w = LossWeights::default();
    let ps = [1, 2, 3, 4];
    let mut g = c.benchmark_group("vqc_ar_estimate");
    g.sample_size(10);
    g.bench_function("one_thread", |b| {
        par::with_jobs(Some(1), || b.iter(|| vqc_ar_estimate(black_box(&y), &ps, &cfg, &w).unwrap()))
    });
    g.bench_function("pool", |b| b.iter(|| vqc_ar_estimate(black_box(&y), &ps, &cfg, &w).unwrap()));
    g.finish();
}

criterion_group!(benches, bench_qacf, bench_ar);
criterion_main!(benches);
