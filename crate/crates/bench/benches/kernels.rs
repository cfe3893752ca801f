use std::hint::black_box;

use actsub_core::linalg::{svd, Mat};
use actsub_core::shaping::{shape, ShapingConfig};
use actsub_core::subspace::{factorize, split};
use actsub_core::{ActivationBank, WeightHead};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64) -> Mat {
    Mat::new(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(lo..1.0))
            .collect(),
    )
    .unwrap()
}

fn bench_svd(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut g = c.benchmark_group("svd");
    for (r, n) in [(10, 64), (32, 256), (100, 512)] {
        let m = random(&mut rng, r, n, -1.0);
        g.bench_with_input(
            BenchmarkId::from_parameter(format!("{r}x{n}")),
            &m,
            |b, m| b.iter(|| svd(black_box(m)).unwrap()),
        );
    }
    g.finish();
}

fn bench_top_n(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = c.benchmark_group("top_n_cosine");
    for rows in [1_000, 10_000] {
        let bank = ActivationBank::new(random(&mut rng, rows, 256, 0.0), None).unwrap();
        let q: Vec<f64> = (0..256).map(|_| rng.random_range(0.0..1.0)).collect();
        g.bench_with_input(BenchmarkId::from_parameter(rows), &bank, |b, bank| {
            b.iter(|| bank.top_n_cosine(black_box(&q), 10).unwrap())
        });
    }
    g.finish();
}

fn bench_shaping(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let v: Vec<f64> = (0..2048).map(|_| rng.random_range(0.0..3.0)).collect();
    let mut g = c.benchmark_group("shape_2048");
    for cfg in [
        ShapingConfig::AshS {
            prune_fraction: 0.85,
        },
        ShapingConfig::Scale {
            prune_fraction: 0.85,
        },
    ] {
        g.bench_function(cfg.method().as_str(), |b| {
            b.iter(|| shape(&cfg, black_box(&v)).unwrap())
        });
    }
    g.finish();
}

fn bench_projection(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let head = WeightHead::new(random(&mut rng, 32, 256, -1.0), None).unwrap();
    let fac = factorize(&head).unwrap();
    let s = split(&fac, fac.rank).unwrap();
    let a: Vec<f64> = (0..256).map(|_| rng.random_range(0.0..1.0)).collect();
    c.bench_function("project_insignificant_32x256", |b| {
        b.iter(|| s.project_insignificant(black_box(&a)).unwrap())
    });
}

criterion_group!(
    benches,
    bench_svd,
    bench_top_n,
    bench_shaping,
    bench_projection
);
criterion_main!(benches);
