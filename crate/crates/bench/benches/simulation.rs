use criterion::{criterion_group, criterion_main, Criterion};
use phase_bench::{coarse_dataset, coarse_world};
use phase_core::pipeline::kdtree_map;
use phase_core::sim::{analytic_equilibrium, export_samples, restart_run, PoolKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bench_kdtree(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut pts = |n: usize| -> Vec<(f64, f64)> {
        (0..n).map(|_| (rng.random_range(-90.0..90.0), rng.random_range(-180.0..180.0))).collect()
    };
    let forcing = pts(5000);
    let queries = pts(1000);
    c.bench_function("kdtree_map_1000_of_5000", |b| b.iter(|| kdtree_map(&queries, &forcing)));
}

fn bench_simulator(c: &mut Criterion) {
    let world = coarse_world(20);
    let eq = analytic_equilibrium(&world).unwrap();
    let states = eq.clone();
    let mut group = c.benchmark_group("coarse_world");
    group.sample_size(10);
    group.bench_function("analytic_equilibrium", |b| b.iter(|| analytic_equilibrium(&world).unwrap()));
    group.bench_function("restart_run_10yr", |b| b.iter(|| restart_run(&states, &world, 10).unwrap()));
    group.bench_function("export_samples_20yr", |b| b.iter(|| export_samples(&world, 20).unwrap()));
    group.bench_function("years_to_band_soil", |b| {
        b.iter(|| phase_core::sim::years_to_band(&world, &[PoolKind::Soil3c, PoolKind::Soil4c], 0.005, 6000).unwrap())
    });
    group.finish();
    c.bench_function("build_dataset_coarse", |b| b.iter(|| coarse_dataset(20, 20)));
}

criterion_group!(benches, bench_kdtree, bench_simulator);
criterion_main!(benches);
