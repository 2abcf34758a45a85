//! Finite-difference oracle shared by the gradient tests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor4, Var};
use crate::error::Result;

/// Relative error `‖a − n‖ / (‖a‖ + ‖n‖)` between the tape gradient and
/// central differences of `sum(f(inputs) ⊙ R)` for a fixed random `R`,
/// maximized over all inputs.
pub fn gradcheck<F>(inputs: &[Tensor4<f64>], f: F) -> f64
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let probe_shape = {
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        f(&tape, &vars).unwrap().shape()
    };
    let probe = Tensor4::<f64>::randn(probe_shape, 1.0, &mut rng);

    let eval = |xs: &[Tensor4<f64>]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<_> = xs.iter().map(|t| tape.param(t.clone())).collect();
        f(&tape, &vars).unwrap().value().dot(&probe)
    };

    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&tape, &vars).unwrap();
    let grads = tape.backward_with(out, probe.clone()).unwrap();

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[i])
            .cloned()
            .unwrap_or_else(|| Tensor4::zeros(input.shape()));
        let mut numeric = Tensor4::zeros(input.shape());
        for j in 0..input.len() {
            let mut xs = inputs.to_vec();
            xs[i].data_mut()[j] += h;
            let up = eval(&xs);
            xs[i].data_mut()[j] -= 2.0 * h;
            let down = eval(&xs);
            numeric.data_mut()[j] = (up - down) / (2.0 * h);
        }
        let diff = analytic.zip_map(&numeric, |a, b| a - b);
        let denom = analytic.dot(&analytic).sqrt() + numeric.dot(&numeric).sqrt();
        if denom > 0.0 {
            worst = worst.max(diff.dot(&diff).sqrt() / denom);
        }
    }
    worst
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
