use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use egosynth_bench::{cost_matrix, denoiser_inputs, frame};
use egosynth_core::diffusion::{Denoiser, DenoiserConfig};
use egosynth_core::metrics::{psnr, ssim};
use egosynth_core::translator::hungarian;
use std::hint::black_box;

fn bench_hungarian(c: &mut Criterion) {
    let mut group = c.benchmark_group("hungarian");
    for (rows, cols) in [(6, 6), (42, 42), (42, 64)] {
        let cost = cost_matrix(rows, cols, 7);
        group.bench_with_input(BenchmarkId::from_parameter(format!("{rows}x{cols}")), &cost, |b, m| {
            b.iter(|| hungarian(black_box(m)).unwrap())
        });
    }
    group.finish();
}

fn bench_pixel_metrics(c: &mut Criterion) {
    let mut group = c.benchmark_group("pixel");
    for size in [32, 128] {
        let (a, b) = (frame(size, 1), frame(size, 2));
        group.bench_with_input(BenchmarkId::new("ssim", size), &(&a, &b), |bench, (x, y)| {
            bench.iter(|| ssim(black_box(x), black_box(y)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("psnr", size), &(&a, &b), |bench, (x, y)| {
            bench.iter(|| psnr(black_box(x), black_box(y)).unwrap())
        });
    }
    group.finish();
}

fn bench_denoiser(c: &mut Criterion) {
    let config = DenoiserConfig::default();
    let model = Denoiser::new(config.clone()).unwrap();
    let (z, d) = denoiser_inputs(&config, 3);
    c.bench_function("denoiser_forward_32x32", |b| {
        b.iter(|| model.denoise_predict(black_box(&z), black_box(&d), 50).unwrap())
    });
}

criterion_group!(benches, bench_hungarian, bench_pixel_metrics, bench_denoiser);
criterion_main!(benches);
