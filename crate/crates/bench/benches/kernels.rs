use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use privshare_core::econ::{profit, EconParams};
use privshare_core::grid::{build_map, GridSpec};
use privshare_core::optimize::{optimize_profit, Bounds};
use privshare_core::privacy::discrete_frechet;
use privshare_core::smpc::{aggregate_secure, partial_maps, route_samples};
use privshare_core::trajectory::{generate_synthetic, project_planar, subsample};

fn frechet(c: &mut Criterion) {
    let trajs = generate_synthetic(2, 240, 1).unwrap();
    let mut group = c.benchmark_group("discrete_frechet");
    for f_d in [1.0, 0.5, 0.1] {
        let p = project_planar(&trajs[0]);
        let q = project_planar(&subsample(&trajs[1], f_d).unwrap());
        group.bench_with_input(BenchmarkId::from_parameter(f_d), &(p, q), |b, (p, q)| {
            b.iter(|| discrete_frechet(black_box(p), black_box(q)))
        });
    }
    group.finish();
}

fn economics(c: &mut Criterion) {
    let params = EconParams::default();
    c.bench_function("profit", |b| {
        b.iter(|| profit(black_box(&params), black_box(3.57e-6), black_box(7.31), black_box(15.12)))
    });
    let mut group = c.benchmark_group("optimize_profit");
    group.sample_size(10);
    for n_starts in [8, 32] {
        group.bench_with_input(BenchmarkId::from_parameter(n_starts), &n_starts, |b, &n| {
            b.iter(|| optimize_profit(&params, &Bounds::default(), n, 7).unwrap())
        });
    }
    group.finish();
}

fn aggregation(c: &mut Criterion) {
    let trajs = generate_synthetic(200, 120, 3).unwrap();
    let spec = GridSpec::default();
    c.bench_function("build_map/200x120", |b| b.iter(|| build_map(black_box(&trajs), &spec)));
    let mut group = c.benchmark_group("aggregate_secure");
    group.sample_size(20);
    for servers in [2, 4, 8] {
        let inboxes = route_samples(&trajs, 0.5, servers, 5).unwrap();
        let partials = partial_maps(&inboxes, &spec).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(servers), &partials, |b, partials| {
            b.iter(|| aggregate_secure(partials, 9).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, frechet, economics, aggregation);
criterion_main!(benches);
