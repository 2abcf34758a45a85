use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use mrshift::metrics::{fid, matrix_sqrt, FeatureStats};
use mrshift::nn::ops::{conv2d, conv2d_backward};
use mrshift::segmentation::generalized_dice_loss;
use mrshift_bench::{loss_inputs, random_features, random_psd, random_tensor};

fn conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv2d");
    g.sample_size(20);
    for (name, shape, cout, k, stride, pad) in [
        ("3x3_16ch_64px", [4, 16, 64, 64], 16, 3, 1, 1),
        ("4x4_s2_8ch_128px", [4, 8, 128, 128], 16, 4, 2, 1),
        ("7x7_stem_256px", [1, 1, 256, 256], 8, 7, 1, 3),
    ] {
        let x = random_tensor(shape, 1);
        let w = random_tensor([cout, shape[1], k, k], 2);
        let y = conv2d(&x, &w, stride, pad).unwrap();
        g.bench_function(BenchmarkId::new("forward", name), |b| b.iter(|| conv2d(black_box(&x), black_box(&w), stride, pad).unwrap()));
        g.bench_function(BenchmarkId::new("backward", name), |b| {
            b.iter(|| conv2d_backward(black_box(&x), &w, black_box(&y), stride, pad, true, true).unwrap())
        });
    }
    g.finish();
}

fn sqrt_and_fid(c: &mut Criterion) {
    let mut g = c.benchmark_group("fid");
    g.sample_size(10);
    for n in [32, 64, 192] {
        let a = random_psd(n, 3);
        g.bench_with_input(BenchmarkId::new("matrix_sqrt", n), &a, |b, a| b.iter(|| matrix_sqrt(black_box(a)).unwrap()));
    }
    for d in [64, 192, 768] {
        let sa = FeatureStats::from_features(&random_features(200, d, 4)).unwrap();
        let sb = FeatureStats::from_features(&random_features(200, d, 5)).unwrap();
        g.bench_function(BenchmarkId::new("fid_200x", d), |b| b.iter(|| fid(black_box(&sa), black_box(&sb)).unwrap()));
    }
    g.finish();
}

fn gdl(c: &mut Criterion) {
    let mut g = c.benchmark_group("generalized_dice");
    for side in [64, 256] {
        let (p, t) = loss_inputs(8, side, 6);
        g.bench_function(BenchmarkId::new("loss_b8", side), |b| b.iter(|| generalized_dice_loss(black_box(&p), black_box(&t)).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, conv, sqrt_and_fid, gdl);
criterion_main!(benches);
