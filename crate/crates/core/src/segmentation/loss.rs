//! Generalized Dice loss over the two classes (lesion, everything else).
//!
//! With `r_ln` the one-hot target and `p_ln` the predicted probability of
//! class `l` at pixel `n`, `w_l = 1 / (Σ_n r_ln + ε)²`,
//! `A = Σ_l w_l Σ_n r_ln p_ln`, `B = Σ_l w_l Σ_n (r_ln + p_ln)`, and the
//! loss is `1 − 2A/B`. Sums run over every pixel of the batch.

use super::unet::LESION_CHANNEL;
use crate::error::{Error, Result};
use crate::nn::{Real, Tensor4, Var};

pub const GDL_EPS: f64 = 1e-6;

struct Parts {
    weights: [f64; 2],
    a: f64,
    b: f64,
}

fn check(probs: [usize; 4], target: &[bool]) -> Result<()> {
    let [n, c, h, w] = probs;
    if c != 2 {
        return Err(Error::Shape {
            op: "generalized_dice_loss",
            dim: "channels",
            expected: 2,
            actual: c,
        });
    }
    if target.len() != n * h * w {
        return Err(Error::Shape {
            op: "generalized_dice_loss",
            dim: "pixels",
            expected: n * h * w,
            actual: target.len(),
        });
    }
    Ok(())
}

/// Class-`l` indicator of a pixel.
#[inline]
fn r(target: bool, class: usize) -> f64 {
    ((class == LESION_CHANNEL) == target) as u8 as f64
}

fn parts<T: Real>(probs: &Tensor4<T>, target: &[bool]) -> Parts {
    let [n, _, h, w] = probs.shape();
    let hw = h * w;
    let mut volume = [0.0; 2];
    let mut inter = [0.0; 2];
    let mut psum = [0.0; 2];
    for s in 0..n {
        let t = &target[s * hw..(s + 1) * hw];
        for class in 0..2 {
            for (&p, &y) in probs.plane(s, class).iter().zip(t) {
                let rv = r(y, class);
                let pv = p.to_f64();
                volume[class] += rv;
                inter[class] += rv * pv;
                psum[class] += pv;
            }
        }
    }
    let weights = volume.map(|v| 1.0 / ((v + GDL_EPS) * (v + GDL_EPS)));
    let a = (0..2).map(|l| weights[l] * inter[l]).sum();
    let b = (0..2).map(|l| weights[l] * (volume[l] + psum[l])).sum();
    Parts { weights, a, b }
}

/// Loss value for probabilities `(N, 2, H, W)` and a per-pixel lesion target.
pub fn generalized_dice_loss<T: Real>(probs: &Tensor4<T>, target: &[bool]) -> Result<f64> {
    check(probs.shape(), target)?;
    let p = parts(probs, target);
    Ok(1.0 - 2.0 * p.a / p.b)
}

/// Records the loss on the tape with its closed-form adjoint
/// `∂L/∂p_ln = −2 w_l (r_ln B − A) / B²`.
pub fn generalized_dice_var<'t, T: Real>(probs: Var<'t, T>, target: &[bool]) -> Result<Var<'t, T>> {
    check(probs.shape(), target)?;
    let value = probs.value();
    let Parts { weights, a, b } = parts(&value, target);
    let loss = Tensor4::scalar(T::from_f64(1.0 - 2.0 * a / b));
    let target = target.to_vec();
    Ok(probs.custom_unary(loss, move |g, input| {
        let [n, _, h, w] = input.shape();
        let hw = h * w;
        let scale = g.data()[0].to_f64();
        let mut out = Tensor4::zeros(input.shape());
        for s in 0..n {
            let t = &target[s * hw..(s + 1) * hw];
            for class in 0..2 {
                let k = -2.0 * weights[class] / (b * b) * scale;
                for (o, &y) in out.plane_mut(s, class).iter_mut().zip(t) {
                    *o = T::from_f64(k * (r(y, class) * b - a));
                }
            }
        }
        out
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::gradcheck;
    use crate::nn::Tape;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct transcription with explicit loops over classes and pixels.
    fn oracle(p_lesion: &[f64], target: &[bool]) -> f64 {
        let n = target.len();
        let mut num = 0.0;
        let mut den = 0.0;
        for class in 0..2 {
            let rl: Vec<f64> = (0..n).map(|i| if (class == 0) == target[i] { 1.0 } else { 0.0 }).collect();
            let pl: Vec<f64> = (0..n).map(|i| if class == 0 { p_lesion[i] } else { 1.0 - p_lesion[i] }).collect();
            let vol: f64 = rl.iter().sum();
            let wl = (vol + 1e-6).powi(-2);
            let mut rp = 0.0;
            let mut rpp = 0.0;
            for i in 0..n {
                rp += rl[i] * pl[i];
                rpp += rl[i] + pl[i];
            }
            num += wl * rp;
            den += wl * rpp;
        }
        1.0 - 2.0 * num / den
    }

    fn case(rng: &mut ChaCha8Rng, n: usize, side: usize, lesion_rate: f64) -> (Tensor4<f64>, Vec<f64>, Vec<bool>) {
        let hw = side * side;
        let p: Vec<f64> = (0..n * hw).map(|_| rng.random::<f64>()).collect();
        let target: Vec<bool> = (0..n * hw).map(|_| rng.random::<f64>() < lesion_rate).collect();
        let mut t = Tensor4::zeros([n, 2, side, side]);
        for s in 0..n {
            t.plane_mut(s, 0).copy_from_slice(&p[s * hw..(s + 1) * hw]);
            for (o, v) in t.plane_mut(s, 1).iter_mut().zip(&p[s * hw..(s + 1) * hw]) {
                *o = 1.0 - v;
            }
        }
        (t, p, target)
    }

    #[test]
    fn matches_summation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for i in 0..200 {
            let rate = [0.0, 0.05, 0.3, 1.0][i % 4];
            let (t, p, y) = case(&mut rng, 1, 8, rate);
            let got = generalized_dice_loss(&t, &y).unwrap();
            assert!((got - oracle(&p, &y)).abs() < 1e-10, "case {i}");
        }
    }

    #[test]
    fn perfect_and_complement() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (_, _, y) = case(&mut rng, 2, 8, 0.2);
        let onehot = |flip: bool| {
            let p: Vec<f64> = y.iter().map(|&v| (v != flip) as u8 as f64).collect();
            let mut t = Tensor4::zeros([2, 2, 8, 8]);
            for s in 0..2 {
                t.plane_mut(s, 0).copy_from_slice(&p[s * 64..(s + 1) * 64]);
                for (o, v) in t.plane_mut(s, 1).iter_mut().zip(&p[s * 64..(s + 1) * 64]) {
                    *o = 1.0 - v;
                }
            }
            t
        };
        assert!(generalized_dice_loss(&onehot(false), &y).unwrap().abs() < 1e-6);
        assert!((generalized_dice_loss(&onehot(true), &y).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn adjoint_matches_finite_differences() {
        // lesion-free batches push w_0 to 1e12 and the loss flat to within
        // rounding, which finite differences cannot resolve
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for rate in [0.05, 0.1, 0.5, 0.9] {
            let (t, _, y) = case(&mut rng, 2, 6, rate);
            let err = gradcheck(&[t], |_, v| generalized_dice_var(v[0], &y));
            assert!(err < 1e-4, "rate {rate}: {err}");
        }
    }

    #[test]
    fn tape_value_matches_plain_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let (t, _, y) = case(&mut rng, 3, 8, 0.1);
        let tape = Tape::new();
        let v = generalized_dice_var(tape.constant(t.clone()), &y).unwrap();
        assert_eq!(v.item(), generalized_dice_loss(&t, &y).unwrap());
    }

    #[test]
    fn moving_false_positive_mass_to_a_true_positive_lowers_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..50 {
            let (mut t, _, y) = case(&mut rng, 1, 8, 0.2);
            let (Some(fp), Some(tp)) = (y.iter().position(|&v| !v), y.iter().position(|&v| v)) else {
                continue;
            };
            let before = generalized_dice_loss(&t, &y).unwrap();
            let delta = t.data()[fp].min(1.0 - t.data()[tp]);
            if delta < 1e-9 {
                continue;
            }
            let d = t.data_mut();
            d[fp] -= delta;
            d[tp] += delta;
            d[64 + fp] += delta;
            d[64 + tp] -= delta;
            assert!(generalized_dice_loss(&t, &y).unwrap() < before);
        }
    }

    #[test]
    fn shape_errors() {
        assert!(generalized_dice_loss(&Tensor4::<f64>::zeros([1, 3, 2, 2]), &[false; 4]).is_err());
        assert!(generalized_dice_loss(&Tensor4::<f64>::zeros([1, 2, 2, 2]), &[false; 5]).is_err());
    }

    proptest! {
        #[test]
        fn permutation_invariant(seed in 0u64..1000, shift in 1usize..63) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (_, p, y) = case(&mut rng, 1, 8, 0.3);
            let perm: Vec<usize> = (0..64).map(|i| (i * 5 + shift) % 64).collect();
            let pp: Vec<f64> = perm.iter().map(|&i| p[i]).collect();
            let yp: Vec<bool> = perm.iter().map(|&i| y[i]).collect();
            let build = |p: &[f64]| {
                let mut data = p.to_vec();
                data.extend(p.iter().map(|v| 1.0 - v));
                Tensor4::from_vec([1, 2, 8, 8], data).unwrap()
            };
            let a = generalized_dice_loss(&build(&p), &y).unwrap();
            let b = generalized_dice_loss(&build(&pp), &yp).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
