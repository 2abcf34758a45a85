//! Seeded inputs shared by the criterion benchmarks in `benches/`.

use mrshift::metrics::Matrix;
use mrshift::nn::Tensor4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(shape: [usize; 4], seed: u64) -> Tensor4<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor4::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()).expect("shape matches length")
}

/// `n × d` matrix of uniform features.
pub fn random_features(n: usize, d: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_vec(n, d, (0..n * d).map(|_| rng.random::<f64>()).collect()).expect("shape matches length")
}

/// Symmetric positive semi-definite `n × n` matrix `BᵀB / n`.
pub fn random_psd(n: usize, seed: u64) -> Matrix {
    let b = random_features(n, n, seed);
    let mut a = b.transpose().matmul(&b).expect("square");
    for v in a.data.iter_mut() {
        *v /= n as f64;
    }
    a
}

/// Probability map and binary target for one batch of the lesion loss.
pub fn loss_inputs(batch: usize, side: usize, seed: u64) -> (Tensor4<f64>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let px = batch * side * side;
    let mut probs = vec![0.0f64; 2 * px];
    for b in 0..batch {
        for i in 0..side * side {
            let p: f64 = rng.random();
            probs[(2 * b) * side * side + i] = 1.0 - p;
            probs[(2 * b + 1) * side * side + i] = p;
        }
    }
    let target = (0..px).map(|_| rng.random_bool(0.05)).collect();
    (Tensor4::from_vec([batch, 2, side, side], probs).expect("shape matches length"), target)
}
