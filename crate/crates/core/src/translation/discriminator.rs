use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::layers::NORM_EPS;
use crate::nn::{Bound, ParamSet, Real, Var};

pub const LEAKY_SLOPE: f64 = 0.2;

/// Patch discriminator: 4×4 convolutions, three with stride 2, then a
/// stride-1 layer and a one-channel score map (70×70 receptive field).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorConfig {
    pub ndf: usize,
    /// Number of stride-2 layers.
    pub n_layers: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { ndf: 64, n_layers: 3 }
    }
}

impl DiscriminatorConfig {
    pub fn desk() -> Self {
        Self { ndf: 8, ..Self::default() }
    }

    fn width(&self, i: usize) -> usize {
        self.ndf << i.min(3)
    }
}

pub fn init_discriminator<T: Real, R: Rng + ?Sized>(cfg: &DiscriminatorConfig, rng: &mut R) -> ParamSet<T> {
    let mut p = ParamSet::new();
    p.init_weight("d0.w", [cfg.ndf, 1, 4, 4], rng);
    p.init_bias("d0.b", cfg.ndf);
    for i in 1..=cfg.n_layers {
        p.init_weight(format!("d{i}.w"), [cfg.width(i), cfg.width(i - 1), 4, 4], rng);
    }
    p.init_weight("score.w", [1, cfg.width(cfg.n_layers), 4, 4], rng);
    p.init_bias("score.b", 1);
    p
}

/// Per-patch realness scores (unbounded) for images in [0, 1].
pub fn discriminator_forward<'t, T: Real>(cfg: &DiscriminatorConfig, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
    let x = x.scale(2.0).add_scalar(-1.0);
    let mut h = p.conv("d0", x, 2, 1)?.leaky_relu(LEAKY_SLOPE);
    for i in 1..=cfg.n_layers {
        let stride = if i < cfg.n_layers { 2 } else { 1 };
        h = p.conv(&format!("d{i}"), h, stride, 1)?.instance_norm(NORM_EPS).leaky_relu(LEAKY_SLOPE);
    }
    p.conv("score", h, 1, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Tape, Tensor4};
    use rand::SeedableRng;

    #[test]
    fn score_map_is_a_patch_grid() {
        let cfg = DiscriminatorConfig { ndf: 2, n_layers: 3 };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let p: ParamSet<f32> = init_discriminator(&cfg, &mut rng);
        let tape = Tape::new();
        let b = p.bind(&tape, false);
        let y = discriminator_forward(&cfg, &b, tape.constant(Tensor4::zeros([1, 1, 256, 256]))).unwrap();
        assert_eq!(y.shape(), [1, 1, 30, 30]);
    }
}
