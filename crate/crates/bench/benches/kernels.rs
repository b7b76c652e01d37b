use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use phase_bench::{coarse_dataset, StepFixture};
use phase_core::tensor::kernels::matmul;
use phase_core::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn bench_matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut group = c.benchmark_group("matmul");
    for n in [32, 64, 128] {
        let a = random(&mut rng, n * n);
        let b = random(&mut rng, n * n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, &n| bench.iter(|| matmul(&a, &b, n, n, n)));
    }
    group.finish();
}

fn bench_lstm(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (steps, batch, hidden) = (240, 32, 16);
    let xw = Tensor::new(vec![steps * batch, 4 * hidden], random(&mut rng, steps * batch * 4 * hidden)).unwrap();
    let wh = Tensor::new(vec![hidden, 4 * hidden], random(&mut rng, hidden * 4 * hidden)).unwrap();
    c.bench_function("lstm_240x32x16_fwd_bwd", |bench| {
        bench.iter(|| {
            let g = Graph::new();
            let x = g.leaf(xw.clone());
            let w = g.leaf(wh.clone());
            let h = x.lstm(w, steps).unwrap();
            g.backward(h.square().mean()).unwrap()
        })
    });
}

fn bench_training_step(c: &mut Criterion) {
    let ds = coarse_dataset(20, 20);
    let fx = StepFixture::<f32>::new(&ds, 32);
    let mut group = c.benchmark_group("desk_model_batch32");
    group.sample_size(20);
    group.bench_function("forward", |bench| bench.iter(|| fx.loss(false)));
    group.bench_function("forward_backward", |bench| bench.iter(|| fx.loss(true)));
    group.finish();
}

criterion_group!(benches, bench_matmul, bench_lstm, bench_training_step);
criterion_main!(benches);
