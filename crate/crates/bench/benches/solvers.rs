use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mitosis_core::direct::{constant_b_series, solve_direct, SolveOptions};
use mitosis_core::inverse::{recover_rate, NoisyObservation, Scheme};
use mitosis_core::toy::{toy_solve, ToyProblem};
use mitosis_core::{Grid, RateSpec};

fn direct(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_direct");
    group.sample_size(10);
    for n in [1024, 4096] {
        let bounds = RateSpec::Constant(1.0)
            .bounds(Grid::new(12.0, n).unwrap())
            .unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &bounds, |b, bounds| {
            b.iter(|| solve_direct(black_box(bounds), SolveOptions::default()).unwrap())
        });
    }
    group.finish();
}

fn inverse(c: &mut Criterion) {
    let mut group = c.benchmark_group("recover_rate");
    let grid = Grid::new(12.0, 16384).unwrap();
    let obs = NoisyObservation::exact(constant_b_series(1.0, grid, 60).unwrap(), 1.0).unwrap();
    for scheme in [Scheme::DirectFd, Scheme::DerivativeFree] {
        group.bench_function(scheme.to_string(), |b| {
            b.iter(|| recover_rate(black_box(&obs), 0.01, scheme).unwrap())
        });
    }
    group.finish();
}

fn toy(c: &mut Criterion) {
    let p = ToyProblem::square(Grid::new(1.0, 16384).unwrap());
    c.bench_function("toy_solve", |b| {
        b.iter(|| toy_solve(black_box(&p.weight), black_box(&p.data), 0.01).unwrap())
    });
}

criterion_group!(benches, direct, inverse, toy);
criterion_main!(benches);
