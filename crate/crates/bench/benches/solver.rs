use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use wns_bench::{centered_weight, point_force, unit_space};
use wns_core::quadrature::{weighted_points, QuadratureRule};
use wns_core::solver::{picard, StokesSolver};
use wns_core::{assemble_convection, assemble_forcing, assemble_stokes, SolveOptions};

fn assembly(c: &mut Criterion) {
    let mut group = c.benchmark_group("assembly");
    for n in [8, 16, 32] {
        let space = unit_space(n);
        group.bench_with_input(BenchmarkId::new("stokes", n), &space, |b, s| {
            b.iter(|| assemble_stokes(s, 1.0).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("weighted_stiffness", n), &space, |b, s| {
            let w = centered_weight(1.5);
            b.iter(|| s.weighted_stiffness(&w))
        });
        let u = space
            .interpolate(|x| [x[1] * (1.0 - x[1]), 0.0], |_| 0.0, true)
            .unwrap();
        group.bench_with_input(BenchmarkId::new("convection", n), &space, |b, s| {
            b.iter(|| assemble_convection(s, &u))
        });
        group.bench_with_input(BenchmarkId::new("dirac_forcing", n), &space, |b, s| {
            b.iter(|| assemble_forcing(s, &point_force()).unwrap())
        });
    }
    group.finish();
}

fn stokes_solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("stokes");
    group.sample_size(10);
    for n in [16, 32, 64] {
        let space = unit_space(n);
        let rhs = assemble_forcing(&space, &point_force()).unwrap();
        group.bench_with_input(BenchmarkId::new("factorize", n), &space, |b, s| {
            b.iter(|| StokesSolver::new(assemble_stokes(s, 1.0).unwrap(), 1e-10).unwrap())
        });
        let solver = StokesSolver::new(assemble_stokes(&space, 1.0).unwrap(), 1e-10).unwrap();
        group.bench_with_input(BenchmarkId::new("solve", n), &rhs, |b, f| {
            b.iter(|| solver.solve(black_box(f)).unwrap())
        });
    }
    group.finish();
}

fn picard_iteration(c: &mut Criterion) {
    let mut group = c.benchmark_group("picard");
    group.sample_size(10);
    let weight = centered_weight(1.5);
    for n in [8, 16] {
        let space = unit_space(n);
        let opts = SolveOptions::with_nu(2.5);
        group.bench_with_input(BenchmarkId::new("dirac", n), &space, |b, s| {
            b.iter(|| picard(s, &opts, &point_force(), &weight).unwrap())
        });
    }
    group.finish();
}

fn quadrature(c: &mut Criterion) {
    let mut group = c.benchmark_group("quadrature");
    group.bench_function("collapsed_order_20", |b| {
        b.iter(|| QuadratureRule::collapsed(black_box(20)))
    });
    let tri = [[0.4, 0.4], [0.7, 0.45], [0.5, 0.7]];
    for alpha in [-1.5, 0.5, 1.5] {
        let w = centered_weight(alpha);
        group.bench_with_input(BenchmarkId::new("singular_cell", alpha), &w, |b, w| {
            b.iter(|| weighted_points(black_box(tri), w, 4))
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    assembly,
    stokes_solve,
    picard_iteration,
    quadrature
);
criterion_main!(benches);
