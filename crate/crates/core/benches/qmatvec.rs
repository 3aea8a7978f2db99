//! Dense product on pre-decoded weights versus decoding indices on the fly.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;
use vqforge_core::kmeans::{Assignments, Codebook};
use vqforge_core::packfmt::PackedLayer;
use vqforge_core::qinfer::{decode, dense_matvec, qmatvec};

fn layer(rng: &mut ChaCha8Rng, size: usize, k: usize, d: usize) -> PackedLayer {
    let cb = Codebook::new(k, d, (0..k * d).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap();
    let idx = (0..size * size / d).map(|_| rng.random_range(0..k as u32)).collect();
    PackedLayer::new("bench", size, size, cb, &Assignments::new(size, size / d, idx).unwrap()).unwrap()
}

fn matvec(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut group = c.benchmark_group("matvec");
    for &(k, d) in &[(64usize, 2usize), (256, 4), (256, 8)] {
        let l = layer(&mut rng, 512, k, d);
        let x: Vec<f32> = (0..512).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let w = decode(&l);
        let id = format!("k{k}_d{d}");
        group.bench_with_input(BenchmarkId::new("dense", &id), &x, |b, x| {
            b.iter(|| dense_matvec(black_box(&w.values), 512, 512, black_box(x)))
        });
        group.bench_with_input(BenchmarkId::new("on_the_fly", &id), &x, |b, x| {
            b.iter(|| qmatvec(black_box(&l), black_box(x)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("decode_then_dense", &id), &x, |b, x| {
            b.iter(|| {
                let w = decode(black_box(&l));
                dense_matvec(&w.values, 512, 512, black_box(x))
            })
        });
    }
    group.finish();
}

criterion_group!(benches, matvec);
criterion_main!(benches);
