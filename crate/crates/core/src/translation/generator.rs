use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::NORM_EPS;
use crate::nn::{init_resnet_block, resnet_block, Bound, ParamSet, Real, Tape, Tensor4, Var};

/// Width and depth of the translation generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    /// Channels after the stem; doubled by each downsampling block.
    pub ngf: usize,
    pub n_down: usize,
    pub n_res: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            ngf: 64,
            n_down: 3,
            n_res: 3,
        }
    }
}

impl GeneratorConfig {
    pub fn desk() -> Self {
        Self { ngf: 4, ..Self::default() }
    }

    fn width(&self, level: usize) -> usize {
        self.ngf << level
    }

    /// Side lengths must be divisible by this.
    pub fn stride_product(&self) -> usize {
        1 << self.n_down
    }

    /// Recovers the architecture from parameter names and shapes.
    pub fn infer(params: &ParamSet<f32>) -> Result<Self> {
        let stem = params
            .get("stem.w")
            .ok_or_else(|| Error::invalid("parameter set has no generator stem"))?;
        let n_down = (0..).take_while(|i| params.contains(&format!("down{i}.w"))).count();
        let n_res = (0..).take_while(|i| params.contains(&format!("res{i}.conv1.w"))).count();
        Ok(Self {
            ngf: stem.shape()[0],
            n_down,
            n_res,
        })
    }
}

pub fn init_generator<T: Real, R: Rng + ?Sized>(cfg: &GeneratorConfig, rng: &mut R) -> ParamSet<T> {
    let mut p = ParamSet::new();
    p.init_weight("stem.w", [cfg.ngf, 1, 7, 7], rng);
    for i in 0..cfg.n_down {
        p.init_weight(format!("down{i}.w"), [cfg.width(i + 1), cfg.width(i), 3, 3], rng);
    }
    let deep = cfg.width(cfg.n_down);
    for i in 0..cfg.n_res {
        init_resnet_block(&mut p, &format!("res{i}"), deep, rng);
    }
    for i in 0..cfg.n_down {
        let from = cfg.n_down - i;
        // transposed weights are laid out (in, out, kh, kw)
        p.init_weight(format!("up{i}.w"), [cfg.width(from), cfg.width(from - 1), 4, 4], rng);
    }
    p.init_weight("out.w", [1, cfg.ngf, 7, 7], rng);
    p.init_bias("out.b", 1);
    p
}

/// Maps images in [0, 1] to images in [0, 1].
///
/// Stem 7×7 → stride-2 3×3 blocks → residual blocks → stride-2 transposed
/// 4×4 blocks → 7×7 output with tanh. Hidden convolutions are followed by
/// instance normalization and ReLU.
pub fn generator_forward<'t, T: Real>(cfg: &GeneratorConfig, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
    let [_, c, h, w] = x.shape();
    let k = cfg.stride_product();
    if c != 1 || h % k != 0 || w % k != 0 {
        return Err(Error::Shape {
            op: "generator_forward",
            dim: if c != 1 { "channels" } else { "height/width" },
            expected: if c != 1 { 1 } else { k },
            actual: if c != 1 { c } else { h },
        });
    }
    let x = x.scale(2.0).add_scalar(-1.0);
    let mut h = p.conv("stem", x, 1, 3)?.instance_norm(NORM_EPS).relu();
    for i in 0..cfg.n_down {
        h = p.conv(&format!("down{i}"), h, 2, 1)?.instance_norm(NORM_EPS).relu();
    }
    for i in 0..cfg.n_res {
        h = resnet_block(h, p, &format!("res{i}"))?;
    }
    for i in 0..cfg.n_down {
        h = p.conv_transpose(&format!("up{i}"), h, 2, 1)?.instance_norm(NORM_EPS).relu();
    }
    Ok(p.conv("out", h, 1, 3)?.tanh().scale(0.5).add_scalar(0.5))
}

/// Inference-only forward pass over a batch.
pub fn generate_batch(cfg: &GeneratorConfig, params: &ParamSet<f32>, x: &Tensor4<f32>) -> Result<Tensor4<f32>> {
    let tape = Tape::new();
    let bound = params.bind(&tape, false);
    let y = generator_forward(cfg, &bound, tape.constant(x.clone()))?;
    Ok(std::sync::Arc::unwrap_or_clone(y.value()))
}
