use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::{Real, Tensor4, Var};

/// Form of the adversarial objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GanLoss {
    /// `D: (D(y) − 1)² + D(G(x))²`, `G: (D(G(x)) − 1)²`.
    #[default]
    LeastSquares,
    /// Cross-entropy on logits; the generator uses the non-saturating form.
    Log,
}

/// `(g_loss, d_loss)` computed from score maps.
pub fn adversarial_loss<T: Real>(d_real: &Tensor4<T>, d_fake: &Tensor4<T>, kind: GanLoss) -> (f64, f64) {
    let mean = |t: &Tensor4<T>, f: &dyn Fn(f64) -> f64| t.data().iter().map(|v| f(v.to_f64())).sum::<f64>() / t.len() as f64;
    match kind {
        GanLoss::LeastSquares => {
            let d = mean(d_real, &|v| (v - 1.0).powi(2)) + mean(d_fake, &|v| v * v);
            let g = mean(d_fake, &|v| (v - 1.0).powi(2));
            (g, d)
        }
        GanLoss::Log => {
            // -ln σ(v) = softplus(-v), -ln(1 − σ(v)) = softplus(v)
            let softplus = |v: f64| v.max(0.0) + (-v.abs()).exp().ln_1p();
            let d = mean(d_real, &|v| softplus(-v)) + mean(d_fake, &softplus);
            let g = mean(d_fake, &|v| softplus(-v));
            (g, d)
        }
    }
}

/// Differentiable loss pushing `scores` toward the real (`true`) or fake label.
pub fn gan_target<'t, T: Real>(scores: Var<'t, T>, real: bool, kind: GanLoss) -> Var<'t, T> {
    let label = if real { 1.0 } else { 0.0 };
    match kind {
        GanLoss::LeastSquares => scores.mse_const(label),
        GanLoss::Log => scores.bce_logits_const(label),
    }
}

/// Mean absolute reconstruction error `|x̂ − x|`.
pub fn l1<'t, T: Real>(reconstructed: Var<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
    Ok(reconstructed.sub(x)?.abs().mean())
}

/// Cycle loss of a forward/backward pair on value tensors.
pub fn cycle_loss<T: Real>(
    g_ab: impl Fn(&Tensor4<T>) -> Result<Tensor4<T>>,
    g_ba: impl Fn(&Tensor4<T>) -> Result<Tensor4<T>>,
    x: &Tensor4<T>,
) -> Result<f64> {
    let rec = g_ba(&g_ab(x)?)?;
    let s: f64 = rec.data().iter().zip(x.data()).map(|(a, b)| (a.to_f64() - b.to_f64()).abs()).sum();
    Ok(s / x.len() as f64)
}

/// λ weights of the total objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub gan_s2t: f64,
    pub gan_t2s: f64,
    pub cycle_s: f64,
    pub cycle_t: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            gan_s2t: 1.0,
            gan_t2s: 1.0,
            cycle_s: 10.0,
            cycle_t: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.gan_s2t, self.gan_t2s, self.cycle_s, self.cycle_t];
        if all.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(crate::Error::invalid("loss weights must be finite and non-negative"));
        }
        Ok(())
    }
}

/// The four networks of a cycle-consistent pair as seen by one tape.
pub trait CycleNets<'t, T: Real> {
    fn g_s2t(&self, x: Var<'t, T>) -> Result<Var<'t, T>>;
    fn g_t2s(&self, x: Var<'t, T>) -> Result<Var<'t, T>>;
    fn d_s(&self, x: Var<'t, T>) -> Result<Var<'t, T>>;
    fn d_t(&self, x: Var<'t, T>) -> Result<Var<'t, T>>;
}

/// Weighted terms of the generator objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub gan_s2t: f64,
    pub gan_t2s: f64,
    pub cycle_s: f64,
    pub cycle_t: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn terms(&self) -> [(&'static str, f64); 5] {
        [
            ("gan_s2t", self.gan_s2t),
            ("gan_t2s", self.gan_t2s),
            ("cycle_s", self.cycle_s),
            ("cycle_t", self.cycle_t),
            ("total", self.total),
        ]
    }
}

/// Output of [`total_cycle_objective`].
pub struct CycleObjective<'t, T: Real> {
    pub total: Var<'t, T>,
    /// Unweighted terms.
    pub raw: LossBreakdown,
    /// Terms multiplied by their λ; these sum to `total`.
    pub weighted: LossBreakdown,
    pub fake_t: Var<'t, T>,
    pub fake_s: Var<'t, T>,
}

/// `λ1·GAN(S→T) + λ2·GAN(T→S) + λ3·Cycle(S) + λ4·Cycle(T)` for the generator step.
pub fn total_cycle_objective<'t, T: Real, N: CycleNets<'t, T>>(
    nets: &N,
    batch_s: Var<'t, T>,
    batch_t: Var<'t, T>,
    w: &LossWeights,
    kind: GanLoss,
) -> Result<CycleObjective<'t, T>> {
    let fake_t = nets.g_s2t(batch_s)?;
    let fake_s = nets.g_t2s(batch_t)?;
    let gan_s2t = gan_target(nets.d_t(fake_t)?, true, kind);
    let gan_t2s = gan_target(nets.d_s(fake_s)?, true, kind);
    let cycle_s = l1(nets.g_t2s(fake_t)?, batch_s)?;
    let cycle_t = l1(nets.g_s2t(fake_s)?, batch_t)?;
    let terms = [
        gan_s2t.scale(w.gan_s2t),
        gan_t2s.scale(w.gan_t2s),
        cycle_s.scale(w.cycle_s),
        cycle_t.scale(w.cycle_t),
    ];
    let total = terms[0].add(terms[1])?.add(terms[2])?.add(terms[3])?;
    let v = |x: Var<'t, T>| x.item().to_f64();
    let raw = LossBreakdown {
        gan_s2t: v(gan_s2t),
        gan_t2s: v(gan_t2s),
        cycle_s: v(cycle_s),
        cycle_t: v(cycle_t),
        total: v(total),
    };
    let weighted = LossBreakdown {
        gan_s2t: v(terms[0]),
        gan_t2s: v(terms[1]),
        cycle_s: v(terms[2]),
        cycle_t: v(terms[3]),
        total: v(total),
    };
    Ok(CycleObjective {
        total,
        raw,
        weighted,
        fake_t,
        fake_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tape;

    fn t(v: f64) -> Tensor4<f64> {
        Tensor4::full([1, 1, 3, 3], v)
    }

    #[test]
    fn least_squares_examples() {
        assert_eq!(adversarial_loss(&t(1.0), &t(0.0), GanLoss::LeastSquares).1, 0.0);
        assert_eq!(adversarial_loss(&t(0.3), &t(1.0), GanLoss::LeastSquares).0, 0.0);
        let (g, d) = adversarial_loss(&t(0.5), &t(0.5), GanLoss::LeastSquares);
        assert!((d - 0.5).abs() < 1e-15 && (g - 0.25).abs() < 1e-15);
    }

    #[test]
    fn log_form_matches_cross_entropy() {
        let (g, d) = adversarial_loss(&t(0.0), &t(0.0), GanLoss::Log);
        let ln2 = std::f64::consts::LN_2;
        assert!((d - 2.0 * ln2).abs() < 1e-12 && (g - ln2).abs() < 1e-12);
    }

    #[test]
    fn tape_losses_agree_with_value_losses() {
        for kind in [GanLoss::LeastSquares, GanLoss::Log] {
            let tape = Tape::<f64>::new();
            let real = Tensor4::from_vec([1, 1, 1, 3], vec![0.2, 1.4, -0.3]).unwrap();
            let fake = Tensor4::from_vec([1, 1, 1, 3], vec![0.7, -1.0, 0.1]).unwrap();
            let (g, d) = adversarial_loss(&real, &fake, kind);
            let dr = gan_target(tape.constant(real.clone()), true, kind).item();
            let df = gan_target(tape.constant(fake.clone()), false, kind).item();
            let gf = gan_target(tape.constant(fake), true, kind).item();
            assert!((dr + df - d).abs() < 1e-12);
            assert!((gf - g).abs() < 1e-12);
        }
    }

    #[test]
    fn cycle_loss_examples() {
        let x = Tensor4::from_vec([1, 1, 2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let id = |v: &Tensor4<f64>| Ok(v.clone());
        assert_eq!(cycle_loss(id, id, &x).unwrap(), 0.0);
        let shift = |v: &Tensor4<f64>| Ok(v.map(|p| p + 0.1));
        assert!((cycle_loss(shift, id, &x).unwrap() - 0.1).abs() < 1e-12);
    }
}
