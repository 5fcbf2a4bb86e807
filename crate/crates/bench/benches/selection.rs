use criterion::{criterion_group, criterion_main, Criterion};
use enkcvs::selection::{enkcvs_with, ConfusionSampler};
use enkcvs::*;
use std::hint::black_box;

fn noisy_blobs(n: usize) -> LabeledDataset {
    let clean = generate_blobs(4, n, 10, 2.5, 1).unwrap();
    inject(&clean, &symmetric_transition(4, 0.4).unwrap(), 2).unwrap()
}

fn training(c: &mut Criterion) {
    let data = noisy_blobs(4000);
    let cfg = TrainConfig::default();
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function("linear_n4000", |b| {
        b.iter(|| train(black_box(&data), &ModelSpec::linear(10, 4), &cfg).unwrap())
    });
    group.bench_function("hidden32_n4000", |b| {
        b.iter(|| train(black_box(&data), &ModelSpec::one_hidden(10, 4, 32), &cfg).unwrap())
    });
    group.finish();
}

fn selection(c: &mut Criterion) {
    let data = noisy_blobs(4000);
    let stub = ConfusionSampler {
        confusion: StochasticMatrix::symmetric(4, 0.9).unwrap(),
    };
    c.bench_function("enkcvs_stub_k10_m5", |b| {
        b.iter(|| enkcvs_with(black_box(&data), 10, 5, 2, &stub, 3).unwrap())
    });

    let cfg = SelectionConfig {
        train_cfg: TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        },
        ..SelectionConfig::new(ModelSpec::linear(10, 4), TrainConfig::default(), 3)
    };
    let mut group = c.benchmark_group("enkcvs_sgd");
    group.sample_size(10);
    group.bench_function("linear_k10_m5_5epochs", |b| b.iter(|| enkcvs(black_box(&data), &cfg).unwrap()));
    group.finish();
}

fn theory(c: &mut Criterion) {
    let inputs = TheoryInputs::symmetric(10, 0.4, 0.85, 5, 2).unwrap();
    c.bench_function("closed_form_q10", |b| {
        b.iter(|| closed_form(black_box(&inputs), FormulaMode::Corrected).unwrap())
    });
    let mut group = c.benchmark_group("monte_carlo");
    group.sample_size(10);
    group.bench_function("q10_m5_n1e6", |b| b.iter(|| monte_carlo(black_box(&inputs), 1_000_000, 4).unwrap()));
    group.finish();
}

criterion_group!(benches, training, selection, theory);
criterion_main!(benches);
