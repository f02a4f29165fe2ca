use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use srlocal_core::linalg::lstsq_svd;
use srlocal_core::localmodel::{fit_poly, reconstruct};
use srlocal_core::neural::{init_weights, loss_and_grad};
use srlocal_core::pca::fit_pca;
use srlocal_core::pipeline::{simulate, PatchExtractor};
use srlocal_core::projection::project_sequence;
use srlocal_core::registration::register;
use srlocal_core::{CoeffPatch, FitConfig, GrayImage, Interpolator, NormContext, PipelineConfig, TrainingSample};

fn scene(n: usize) -> GrayImage {
    GrayImage::from_fn(n, n, |x, y| {
        let (x, y) = (x as f64, y as f64);
        128.0 + 60.0 * (0.21 * x).sin() * (0.15 * y).cos() + 30.0 * (0.05 * x * y).sin()
    })
}

fn linalg(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a: Vec<f64> = (0..12 * 6).map(|_| rng.random_range(-2.0..2.0)).collect();
    let b: Vec<f64> = (0..12).map(|_| rng.random_range(0.0..255.0)).collect();
    c.bench_function("lstsq_svd 12x6", |bench| bench.iter(|| lstsq_svd(black_box(&a), black_box(&b), 6, 1e-6)));

    let patches: Vec<CoeffPatch> = (0..5000)
        .map(|_| CoeffPatch::new((0..54).map(|_| rng.random_range(-1.0..1.0)).collect()))
        .collect();
    c.bench_function("fit_pca 5000x54", |bench| bench.iter(|| fit_pca(black_box(&patches)).unwrap()));
}

fn local_models(c: &mut Criterion) {
    let cfg = PipelineConfig {
        n_frames: 25,
        ..Default::default()
    };
    let seq = simulate(&scene(128), &cfg, 0.0, 4).unwrap();
    let cloud = project_sequence(&seq.frames, &seq.true_shifts, 2).unwrap();
    let fit = FitConfig {
        support_radius: 1.5,
        ..Default::default()
    };
    let support = cloud.query_support(64, 64, fit.support_radius);
    c.bench_function("fit_poly order 2", |bench| {
        bench.iter(|| fit_poly(black_box(&support), (64, 64), 2, &fit).unwrap())
    });
    c.bench_function("reconstruct poly2 128x128", |bench| {
        bench.iter(|| reconstruct(&cloud, Interpolator::Polynomial(2), &fit).unwrap())
    });
    let extractor = PatchExtractor::new(&cloud, 3, &fit).unwrap();
    c.bench_function("patch 3x3", |bench| bench.iter(|| extractor.patch(black_box(40), black_box(50)).unwrap()));
}

fn registration(c: &mut Criterion) {
    let cfg = PipelineConfig {
        n_frames: 2,
        ..Default::default()
    };
    let seq = simulate(&scene(256), &cfg, 5.0, 8).unwrap();
    c.bench_function("register 128x128", |bench| {
        bench.iter(|| register(&seq.frames[0], &seq.frames[1], &cfg.registration).unwrap())
    });
}

fn network(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = init_weights(40, 1);
    let samples: Vec<TrainingSample> = (0..2000)
        .map(|_| TrainingSample {
            input: (0..40).map(|_| rng.random_range(-1.0..1.0)).collect(),
            target: rng.random_range(-1.0..1.0),
            ctx: NormContext { mu: 0.0, s: 1.0 },
        })
        .collect();
    c.bench_function("loss_and_grad 2000x40", |bench| {
        bench.iter(|| loss_and_grad(black_box(&params), black_box(&samples)).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = linalg, local_models, registration, network
}
criterion_main!(benches);
