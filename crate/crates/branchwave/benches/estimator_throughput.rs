//! Throughput of the Monte Carlo driver: the data-parallel path against
//! the single-worker sequential path on the same seeded workload. The
//! two paths produce bit-identical estimates; only wall time differs.

use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use branchwave::estimators::{
    estimate_nonlinear, estimate_perturbative, McConfig, SpaceFn, SpaceTimeFn, WaveProblem,
};
use branchwave::kernels::{Dimension, LifetimeLaw, Point};

fn cos_problem(power: u32, f_amp: f64, c_amp: f64) -> WaveProblem {
    let f: SpaceFn = Arc::new(move |x: Point| f_amp * x[0].cos());
    let c: SpaceTimeFn = Arc::new(move |_, x: Point| c_amp * x[0].cos());
    WaveProblem::new(
        Dimension::One,
        0.5,
        LifetimeLaw::new(1.0).unwrap(),
        power,
        f,
        f_amp.abs(),
        c,
        c_amp.abs(),
    )
    .unwrap()
}

fn worker_counts() -> Vec<usize> {
    let max = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    if max > 1 {
        vec![1, max]
    } else {
        vec![1]
    }
}

fn bench_chain(c: &mut Criterion) {
    let problem = cos_problem(1, 1.0, 0.2);
    let mut group = c.benchmark_group("chain_estimator_20k");
    for workers in worker_counts() {
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("workers_{workers}")),
            &workers,
            |b, &w| {
                b.iter(|| {
                    estimate_perturbative(
                        &problem,
                        0.5,
                        [0.1, 0.0, 0.0],
                        &McConfig::new(20_000, 7).with_workers(w),
                    )
                    .unwrap()
                })
            },
        );
    }
    group.finish();
}

fn bench_tree(c: &mut Criterion) {
    let problem = cos_problem(2, 0.1, 0.1);
    let mut group = c.benchmark_group("tree_estimator_20k");
    for workers in worker_counts() {
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("workers_{workers}")),
            &workers,
            |b, &w| {
                b.iter(|| {
                    estimate_nonlinear(
                        &problem,
                        0.5,
                        [0.0; 3],
                        &McConfig::new(20_000, 11).with_workers(w),
                    )
                    .unwrap()
                })
            },
        );
    }
    group.finish();
}

criterion_group!(benches, bench_chain, bench_tree);
criterion_main!(benches);
