//! Parallel against sequential execution of the core kernels.
//!
//! `cargo bench` measures the rayon build on the full pool and on a single
//! worker; `cargo bench --no-default-features` measures the plain sequential
//! fallback under the same names with a `sequential` prefix.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use raylight::geometry::Domain;
use raylight::grid::{PhaseGrid, SpacetimeField};
use raylight::media::{Medium, Sigma};
use raylight::par;
use raylight::raytransforms::{assemble_operator, RayQuadrature, RayWeight, DEFAULT_OPERATOR_CAP};
use raylight::transport::{BoundaryData, Transport};
use raylight::C64;
use std::hint::black_box;

fn modes() -> Vec<(&'static str, usize)> {
    if cfg!(feature = "parallel") {
        vec![("parallel", 0), ("one-worker", 1)]
    } else {
        vec![("sequential", 0)]
    }
}

fn kernels(c: &mut Criterion) {
    let dom = Domain::disk(1.0).unwrap();
    let grid = PhaseGrid::build(&dom, 1.0, 17, 200, 16).unwrap();
    let med = Medium::constant(0.3, 0.05 / (2.0 * std::f64::consts::PI), 2).unwrap();
    let data = BoundaryData::constant(C64::new(1.0, 0.0));
    let source = SpacetimeField::from_fn(&grid, |t, x| (-(x[0] * x[0] + x[1] * x[1]) / 0.1 - (t - 0.5).powi(2) / 0.05).exp()).expand(grid.ntheta);
    let quad = RayQuadrature::build(&grid, &grid.boundary_rays, &RayWeight::attenuation(Sigma::Constant(0.3))).unwrap();

    let mut g = c.benchmark_group("kernels");
    g.sample_size(10);
    for (name, threads) in modes() {
        g.bench_function(BenchmarkId::new("linear_solve", name), |b| {
            b.iter(|| par::with_threads(threads, || Transport::new(&grid, &med).solve_linear(None, black_box(&data)).unwrap()))
        });
        g.bench_function(BenchmarkId::new("source_sweep", name), |b| {
            b.iter(|| par::with_threads(threads, || Transport::new(&grid, &med).sweep(black_box(&source)).unwrap()))
        });
        g.bench_function(BenchmarkId::new("ray_operator", name), |b| {
            b.iter(|| par::with_threads(threads, || assemble_operator(&grid, &quad, black_box(2.0), DEFAULT_OPERATOR_CAP).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
