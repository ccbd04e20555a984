use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ksm_bench::{motility, state_1d, state_2d};
use ksm_core::spectral;
use ksm_core::stepper::{self, SolverConfig};
use std::hint::black_box;

fn bench_steps(c: &mut Criterion) {
    let phi = motility();
    let solver = SolverConfig::default();

    let mut group = c.benchmark_group("step_imex_1d");
    for n in [128usize, 256, 512] {
        let s = state_1d(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &s, |b, s| {
            b.iter(|| stepper::step_imex(black_box(s), 1e-3, &phi, solver).unwrap())
        });
    }
    group.finish();

    let mut group = c.benchmark_group("step_imex_2d");
    for n in [16usize, 32] {
        let s = state_2d(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &s, |b, s| {
            b.iter(|| stepper::step_imex(black_box(s), 1e-4, &phi, solver).unwrap())
        });
    }
    group.finish();

    let mut group = c.benchmark_group("step_explicit_1d");
    for n in [128usize, 256] {
        let s = state_1d(n);
        let dt = 0.5 * stepper::dt_cfl(&s, &phi, 1.0);
        group.bench_with_input(BenchmarkId::from_parameter(n), &s, |b, s| {
            b.iter(|| stepper::step_explicit(black_box(s), dt, &phi).unwrap())
        });
    }
    group.finish();
}

fn bench_operators(c: &mut Criterion) {
    let mut group = c.benchmark_group("operators");
    let s = state_1d(256);
    group.bench_function("laplacian_256", |b| {
        b.iter(|| black_box(&s.v).laplacian_neumann())
    });
    group.bench_function("grad2_256", |b| {
        b.iter(|| black_box(&s.v).grad_power_integral(2).unwrap())
    });
    group.bench_function("cosine_transform_256", |b| {
        b.iter(|| spectral::to_cosine(black_box(&s.u)))
    });
    group.bench_function("dual_norm_256", |b| {
        b.iter(|| spectral::hminus_half_norm_sq(black_box(&s.u), s.ubar0))
    });
    group.finish();
}

criterion_group!(benches, bench_steps, bench_operators);
criterion_main!(benches);
