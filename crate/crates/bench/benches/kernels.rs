use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use fairdiff_core::conditioning::{balance, BalancingLevel, ConditionTable};
use fairdiff_core::diffusion::{gaussian, multinomial, NoiseSchedule, ScheduleKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn kernels(c: &mut Criterion) {
    let sched = NoiseSchedule::new(ScheduleKind::Cosine, 1000).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    let k = 8;
    let mut x_t = vec![0.0; k];
    x_t[3] = 1.0;
    let raw: Vec<f64> = (0..k).map(|_| rng.gen::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    let x0: Vec<f64> = raw.iter().map(|v| v / total).collect();
    c.bench_function("multinomial_posterior_k8", |b| {
        b.iter(|| multinomial::posterior(black_box(&x_t), black_box(&x0), 500, &sched).unwrap())
    });

    let d = 64;
    let z: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let eps: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
    c.bench_function("gaussian_posterior_mean_d64", |b| {
        b.iter(|| gaussian::posterior_mean(black_box(&z), black_box(&eps), 500, &sched).unwrap())
    });

    let cards = vec![2, 3, 4];
    let combos: usize = cards.iter().product();
    let rows: Vec<Vec<f64>> = (0..5)
        .map(|_| {
            let v: Vec<f64> = (0..combos).map(|_| rng.gen::<f64>()).collect();
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
        .collect();
    let table = ConditionTable::new(vec![0.2; 5], rows, cards).unwrap();
    let level = BalancingLevel::new(5).unwrap();
    c.bench_function("balance_5x24", |b| b.iter(|| balance(black_box(&table), level)));
}

criterion_group!(benches, kernels);
criterion_main!(benches);
