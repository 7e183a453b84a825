use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::Array2;

use leaklab_core::metrics::{auc, BinaryEval};
use leaklab_core::nn::{Mlp, MlpSpec, Mode};
use leaklab_core::optim::{dpsgd_step, DpSgdConfig};
use leaklab_core::transfer::{mmd, Kernel};

// Roughly the encoded Adult width.
const INPUT: usize = 104;

fn pseudo(rows: usize, cols: usize, salt: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |(i, j)| ((i * 31 + j * 17) as f64 * 0.618 + salt).sin())
}

fn labels(n: usize) -> Vec<u8> {
    (0..n).map(|i| u8::from(i % 3 == 0)).collect()
}

fn mlp(c: &mut Criterion) {
    let model = Mlp::init(&MlpSpec::new(INPUT, vec![64, 8]).unwrap(), 1);
    let x = pseudo(64, INPUT, 0.0);
    let y = labels(64);
    c.bench_function("mlp forward [64, 8] x 64 rows", |b| {
        b.iter(|| model.predict(black_box(x.view())).unwrap())
    });
    c.bench_function("mlp loss + backward [64, 8] x 64 rows", |b| {
        b.iter(|| model.loss_and_grad(black_box(x.view()), &y, Mode::Eval).unwrap())
    });
}

fn mmd_rbf(c: &mut Criterion) {
    let xs = pseudo(64, 8, 0.0);
    let ys = pseudo(64, 8, 0.5);
    c.bench_function("mmd rbf 64 vs 64 rows, 8 features", |b| {
        b.iter(|| mmd(black_box(xs.view()), black_box(ys.view()), Kernel::Rbf(1.0)).unwrap())
    });
}

fn auc_10k(c: &mut Criterion) {
    let scores: Vec<f64> = (0..10_000).map(|i| ((i as f64) * 0.37).sin()).collect();
    let eval = BinaryEval::new(scores, labels(10_000)).unwrap();
    c.bench_function("auc 10k scores", |b| b.iter(|| auc(black_box(&eval)).unwrap()));
}

fn dpsgd(c: &mut Criterion) {
    let model = Mlp::init(&MlpSpec::new(INPUT, vec![64, 8]).unwrap(), 1);
    let x = pseudo(64, INPUT, 0.0);
    let y = labels(64);
    let per: Vec<_> = (0..64)
        .map(|i| model.loss_and_grad(x.slice(ndarray::s![i..i + 1, ..]), &y[i..i + 1], Mode::Eval).unwrap().1)
        .collect();
    let cfg = DpSgdConfig { lr: 0.1, clip_norm: 1.0, noise_multiplier: 8.0 };
    c.bench_function("dp-sgd step, 64 per-example gradients", |b| {
        b.iter(|| {
            let mut m = model.clone();
            dpsgd_step(&mut m, black_box(&per), &cfg, 3).unwrap();
            m
        })
    });
}

criterion_group!(benches, mlp, mmd_rbf, auc_10k, dpsgd);
criterion_main!(benches);
