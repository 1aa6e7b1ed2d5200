use std::hint::black_box;

use basmu::kernel::bessel_k;
use basmu::{
    eigenbasis, fit_basmu, fit_bima, fit_mediator, make_truth, posterior_mean_eta, rng_from_seed, simulate_dataset,
    CaseConfig, Grid2D, MaternParams, MediatorOptions, OutcomeOptions, Scale,
};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn kernel(c: &mut Criterion) {
    c.bench_function("bessel_k", |b| b.iter(|| bessel_k(black_box(1.3), black_box(0.7)).unwrap()));
    let params = MaternParams::new(1.0, 0.2).unwrap();
    let mut group = c.benchmark_group("eigenbasis");
    group.sample_size(10);
    for side in [10usize, 20] {
        let grid = Grid2D::square(side).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(side * side), &grid, |b, g| {
            b.iter(|| eigenbasis(g, &params, 40.min(side * side)).unwrap())
        });
    }
    group.finish();
}

fn samplers(c: &mut Criterion) {
    let cfg = CaseConfig::case(1, Scale::Desk).unwrap();
    let basis = eigenbasis(&cfg.grid, &cfg.matern, cfg.l).unwrap();
    let mut rng = rng_from_seed(1, 0);
    let truth = make_truth(&cfg, &basis, &mut rng).unwrap();
    let data = simulate_dataset(&truth, &cfg, &mut rng).unwrap();
    let med = fit_mediator(&data, &basis, &MediatorOptions::with_iters(300), &mut rng).unwrap();
    let etahat = posterior_mean_eta(&med, &basis).unwrap();

    let mut group = c.benchmark_group("desk_case1");
    group.sample_size(10);
    group.bench_function("mediator_100_iters", |b| {
        let opts = MediatorOptions::with_iters(100);
        b.iter(|| fit_mediator(&data, &basis, &opts, &mut rng_from_seed(2, 0)).unwrap())
    });
    let opts = OutcomeOptions::with_iters(500);
    group.bench_function("bima_500_iters", |b| {
        b.iter(|| fit_bima(&data, &basis, &opts, &mut rng_from_seed(3, 0)).unwrap())
    });
    group.bench_function("basmu_500_iters", |b| {
        b.iter(|| fit_basmu(&data, &basis, &etahat, &opts, &mut rng_from_seed(3, 0)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, kernel, samplers);
criterion_main!(benches);
