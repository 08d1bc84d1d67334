use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use convnas_core::archspace::{generate_surrogate, SpaceKind};
use convnas_core::convnp::{ConvNp, ConvNpConfig, PredictOptions};
use convnas_core::diffcore::{Graph, Padding, Tensor};
use convnas_core::metafeatures::FeatureTable;
use convnas_core::metrics::kendall_tau;
use convnas_core::taskgen::{generate_tasks, ObservedDataset};
use convnas_core::trainer::{train, TrainConfig};

fn filled(shape: &[usize], phase: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|i| (i as f64 * 0.37 + phase).sin()).collect()).unwrap()
}

fn conv1d(c: &mut Criterion) {
    let input = filled(&[1, 16, 64], 0.0);
    let kernel = filled(&[16, 16, 5], 1.0);
    c.bench_function("conv1d forward+backward 16x64 k5", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let x = g.constant(input.clone());
            let k = g.variable(kernel.clone());
            let y = g.conv1d(x, k, Padding::Same);
            let s = g.sum(y);
            g.forward(s).unwrap();
            black_box(g.backward(s, Tensor::scalar(1.0)).unwrap());
        })
    });
}

fn setup() -> (convnas_core::BenchmarkStore, Vec<Vec<f64>>) {
    let store = generate_surrogate(SpaceKind::EdgeOp, 15_625, 0.5, 0).unwrap();
    let rows = FeatureTable::build(&store).unwrap().rows;
    (store, rows)
}

fn training(c: &mut Criterion) {
    let (store, rows) = setup();
    let data = ObservedDataset::new(
        rows[..90].to_vec(),
        store.records()[..90].iter().map(|r| r.val_acc / 100.0).collect(),
    )
    .unwrap();
    let tasks = generate_tasks(data.len(), 16, 90, 0).unwrap();
    let model = ConvNp::new(ConvNpConfig::default(), 0).unwrap();
    let config = TrainConfig::default();
    let mut group = c.benchmark_group("train");
    group.sample_size(20);
    group.bench_function("one step, batch 16, hybrid loss", |b| {
        b.iter_batched(
            || model.clone(),
            |mut m| black_box(train(&mut m, &data, &tasks, &config).unwrap()),
            BatchSize::LargeInput,
        )
    });
    group.finish();

    let cx: Vec<&[f64]> = rows[..90].iter().map(Vec::as_slice).collect();
    let tx: Vec<&[f64]> = rows[90..].iter().map(Vec::as_slice).collect();
    let opts = PredictOptions { seed: 0, pin_latent: false };
    let mut group = c.benchmark_group("predict");
    group.sample_size(10);
    group.bench_function("score 15535 candidates", |b| {
        b.iter(|| black_box(model.predict_chunked(&cx, data.targets(), &tx, opts, 4096).unwrap()))
    });
    group.finish();
}

fn kendall(c: &mut Criterion) {
    let (store, _) = setup();
    let a: Vec<f64> = store.records().iter().map(|r| r.val_acc).collect();
    let b: Vec<f64> = store.records().iter().map(|r| r.test_acc).collect();
    c.bench_function("kendall tau-b n=15625", |bench| bench.iter(|| black_box(kendall_tau(&a, &b).unwrap())));
}

criterion_group!(benches, conv1d, training, kendall);
criterion_main!(benches);
