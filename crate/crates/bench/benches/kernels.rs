use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use watchdog_core::autoencoder::AutoencoderConfig;
use watchdog_core::boundary::objective_grad;
use watchdog_core::data::{synth_in_distribution, synth_ood, OodKind, SyntheticSpec};
use watchdog_core::metrics::{roc, ssim, ssim_with_grad, SsimParams};
use watchdog_core::nn::{LossKind, Model, OptimizerConfig, OptimizerState, Target};
use watchdog_core::rng::{rng_from_seed, uniform};

fn images() -> (watchdog_core::data::Image, watchdog_core::data::Image) {
    let spec = SyntheticSpec::default();
    let a = synth_in_distribution(&spec, 1, 10).unwrap().samples()[0]
        .image
        .clone();
    let b = synth_ood(OodKind::Blended, 2, 1, (32, 32, 1))
        .unwrap()
        .samples()[0]
        .image
        .clone();
    (a, b)
}

fn bench_ssim(c: &mut Criterion) {
    let (a, b) = images();
    let windowed = SsimParams::default();
    c.bench_function("ssim 32x32 windowed", |bench| {
        bench.iter(|| ssim(black_box(&a), black_box(&b), &windowed).unwrap())
    });
    c.bench_function("ssim 32x32 global", |bench| {
        bench.iter(|| ssim(black_box(&a), black_box(&b), &SsimParams::global()).unwrap())
    });
    c.bench_function("ssim_with_grad 32x32", |bench| {
        bench.iter(|| ssim_with_grad(black_box(&a), black_box(&b), &windowed).unwrap())
    });
}

fn bench_network(c: &mut Criterion) {
    let set = synth_in_distribution(&SyntheticSpec::default(), 3, 64).unwrap();
    let cfg = AutoencoderConfig::default();
    let mut model = Model::init(cfg.network(set.dims()).unwrap(), 1);
    let idx: Vec<usize> = (0..64).collect();
    let batch = set.batch(&idx).unwrap();
    c.bench_function("autoencoder forward batch 64", |bench| {
        bench.iter(|| model.predict(black_box(&batch)).unwrap())
    });
    let mut opt = OptimizerState::new(OptimizerConfig::default(), &model.params);
    c.bench_function("autoencoder train step batch 64", |bench| {
        bench.iter(|| {
            model
                .train_step(
                    &mut opt,
                    &batch,
                    Target::Dense(batch.clone()),
                    LossKind::Mse,
                )
                .unwrap()
        })
    });
    let (x, _) = images();
    c.bench_function("generator objective gradient", |bench| {
        bench.iter(|| objective_grad(&model, black_box(&x), 0.9, &SsimParams::default()).unwrap())
    });
}

fn bench_roc(c: &mut Criterion) {
    let mut r = rng_from_seed(5);
    let scores: Vec<f64> = (0..30_000).map(|_| uniform(&mut r, 0.0, 1.0)).collect();
    let labels: Vec<bool> = (0..30_000).map(|i| i % 3 == 0).collect();
    c.bench_function("roc 30000 scores", |bench| {
        bench.iter(|| roc(black_box(&scores), black_box(&labels)).unwrap())
    });
}

criterion_group!(benches, bench_ssim, bench_network, bench_roc);
criterion_main!(benches);
