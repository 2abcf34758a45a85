use rand::Rng;

use super::params::{Bound, ParamSet};
use super::tape::Var;
use super::tensor::Real;
use crate::error::{Error, Result};

pub const NORM_EPS: f64 = 1e-5;

/// Registers the two 3×3 convolutions of a residual block under `prefix`.
pub fn init_resnet_block<T: Real, R: Rng + ?Sized>(params: &mut ParamSet<T>, prefix: &str, channels: usize, rng: &mut R) {
    for stage in ["conv1", "conv2"] {
        params.init_weight(format!("{prefix}.{stage}.w"), [channels, channels, 3, 3], rng);
    }
}

/// `x + F(x)` with `F = conv → instance norm → relu → conv → instance norm`.
///
/// The convolutions carry no bias: instance normalization removes it.
pub fn resnet_block<'t, T: Real>(x: Var<'t, T>, params: &Bound<'t, T>, prefix: &str) -> Result<Var<'t, T>> {
    let w = params.var(&format!("{prefix}.conv1.w"))?;
    let [c_out, c_in, _, _] = w.shape();
    if c_out != c_in || c_in != x.shape()[1] {
        return Err(Error::Shape {
            op: "resnet_block",
            dim: "channels",
            expected: c_in,
            actual: x.shape()[1],
        });
    }
    let h = params.conv(&format!("{prefix}.conv1"), x, 1, 1)?.instance_norm(NORM_EPS).relu();
    let h = params.conv(&format!("{prefix}.conv2"), h, 1, 1)?.instance_norm(NORM_EPS);
    x.add(h)
}
