use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use rons_core::assembler::{assemble, assemble_srons, metric_l2_kernels};
use rons_core::oracle::{simulate_sde, EnsembleSpec, InitialSampler, SdeScheme};
use rons_core::problems;

fn srons(c: &mut Criterion) {
    let mut group = c.benchmark_group("srons_assembly");
    for terms in [10, 30] {
        let p = problems::duffing_with_terms(terms).unwrap();
        group.bench_with_input(BenchmarkId::new("duffing", terms), &p, |b, p| {
            b.iter(|| assemble_srons(&p.drift, black_box(&p.initial), 0.0, p.alpha).unwrap())
        });
    }
    let p = problems::harmonic_trap(3, 1.0).unwrap();
    group.bench_function("harmonic_r3", |b| {
        b.iter(|| assemble_srons(&p.drift, black_box(&p.initial), 0.0, p.alpha).unwrap())
    });
    group.finish();
}

fn kernels_and_solve(c: &mut Criterion) {
    let p = problems::duffing().unwrap();
    c.bench_function("kernel_metric_duffing_r30", |b| b.iter(|| metric_l2_kernels(black_box(&p.initial))));
    let sys = assemble_srons(&p.drift, &p.initial, 0.0, p.alpha).unwrap();
    c.bench_function("constrained_solve_duffing_r30", |b| b.iter(|| black_box(&sys).solve().unwrap()));
}

fn weighted_collocation(c: &mut Criterion) {
    let p = problems::bistable(10, true).unwrap();
    c.bench_function("weighted_crons_bistable_r10", |b| {
        b.iter(|| assemble(&p.drift, black_box(&p.initial), 0.0, p.alpha, &p.space).unwrap())
    });
}

fn sde(c: &mut Criterion) {
    let p = problems::duffing().unwrap();
    let mut group = c.benchmark_group("sde");
    group.sample_size(10);
    for scheme in [SdeScheme::EulerMaruyama, SdeScheme::PredictorCorrector] {
        let spec = EnsembleSpec {
            particles: 10_000,
            dt: 1e-3,
            scheme,
            seed: 1,
            initial: InitialSampler::Mixture(p.initial.clone()),
        };
        group.bench_function(format!("{scheme:?}_10k_x100"), |b| {
            b.iter(|| simulate_sde(&p.drift, &spec, 0.0, &[0.1]).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, srons, kernels_and_solve, weighted_collocation, sde);
criterion_main!(benches);
