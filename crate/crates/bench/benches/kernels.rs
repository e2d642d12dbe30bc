use std::f64::consts::PI;

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use kdvnet_core::critical_sets::{enumerate_transcendental, CriticalSetId, SearchBox};
use kdvnet_core::cubic::solve_depressed_cubic;
use kdvnet_core::gramian::{assemble_gramian, sine_basis};
use kdvnet_core::simulator::{solve_adjoint, GraphGrid, StateField};
use kdvnet_core::spectral::{build_boundary_matrix, scan_criticality, LambdaRegion, ScanSettings};
use kdvnet_core::{ComplexScalar, GraphConfig};

fn cubic(c: &mut Criterion) {
    let lam = ComplexScalar::new(0.7, -2.3);
    c.bench_function("solve_depressed_cubic", |b| b.iter(|| solve_depressed_cubic(black_box(lam))));
}

fn spectral(c: &mut Criterion) {
    let cfg = GraphConfig::uniform(3, 1, 4.5).unwrap();
    let lam = ComplexScalar::new(0.2, 0.1);
    c.bench_function("boundary_matrix_sigma_min", |b| {
        b.iter(|| build_boundary_matrix(&cfg, black_box(lam)).unwrap().sigma_min())
    });
    let mut group = c.benchmark_group("scan");
    group.sample_size(10);
    group.bench_function("scan_n2_m1", |b| {
        let cfg = GraphConfig::uniform(2, 1, 2.0).unwrap();
        b.iter(|| scan_criticality(&cfg, &LambdaRegion::square(20.0), &ScanSettings::default()).unwrap())
    });
    group.bench_function("enumerate_nstar", |b| {
        b.iter(|| enumerate_transcendental(CriticalSetId::NStar, &SearchBox::square(8.0), 4.0, 30.0).unwrap())
    });
    group.finish();
}

fn simulator(c: &mut Criterion) {
    let mut group = c.benchmark_group("adjoint");
    group.sample_size(10);
    for pts in [65usize, 129, 257] {
        let cfg = GraphConfig::uniform(3, 1, 2.0).unwrap();
        let grid = GraphGrid::with_ratio(cfg, pts, 0.5, 0.5).unwrap();
        let phi = StateField::from_fn(&grid, 0.5, |_, x| (PI * x / 2.0).sin().powi(4));
        group.bench_with_input(BenchmarkId::from_parameter(pts), &grid, |b, g| b.iter(|| solve_adjoint(&phi, g).unwrap()));
    }
    group.finish();
}

fn gramian(c: &mut Criterion) {
    let mut group = c.benchmark_group("gramian");
    group.sample_size(10);
    let cfg = GraphConfig::uniform(3, 2, 2.0 * PI).unwrap();
    let grid = GraphGrid::with_ratio(cfg, 128, 0.5, 2.0).unwrap();
    let basis = sine_basis(&grid, 12).unwrap();
    group.bench_function("assemble_128_12", |b| b.iter(|| assemble_gramian(&grid, &basis).unwrap()));
    group.finish();
}

criterion_group!(benches, cubic, spectral, simulator, gramian);
criterion_main!(benches);
