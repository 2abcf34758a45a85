use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::volume::{Raster, SLICE_SIZE};
use crate::nn::layers::NORM_EPS;
use crate::nn::{checkpoint, init_resnet_block, resnet_block, Bound, ParamSet, Real, Tape, Tensor4, Var};

/// Output channel holding the lesion probability.
pub const LESION_CHANNEL: usize = 0;

/// Residual U-Net shape. Stage `i` has `base · 2^i` channels; the bottleneck
/// sits below the last of `levels` downsampling stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct UNetConfig {
    pub base: usize,
    pub levels: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self { base: 16, levels: 5 }
    }
}

impl UNetConfig {
    pub fn desk() -> Self {
        Self { base: 8, levels: 5 }
    }

    pub fn width(&self, stage: usize) -> usize {
        self.base << stage
    }

    pub fn validate(&self) -> Result<()> {
        if self.base == 0 || self.levels == 0 {
            return Err(Error::invalid("u-net base width and level count must be positive"));
        }
        Ok(())
    }

    fn check_input(&self, shape: [usize; 4]) -> Result<()> {
        let m = 1 << self.levels;
        if shape[1] != 1 {
            return Err(Error::Shape {
                op: "unet",
                dim: "channels",
                expected: 1,
                actual: shape[1],
            });
        }
        if shape[2] % m != 0 || shape[3] % m != 0 || shape[2] == 0 {
            return Err(Error::Shape {
                op: "unet",
                dim: "spatial multiple",
                expected: m,
                actual: shape[2],
            });
        }
        Ok(())
    }
}

pub fn init_unet<T: Real, R: Rng + ?Sized>(cfg: &UNetConfig, rng: &mut R) -> ParamSet<T> {
    let mut p = ParamSet::new();
    let w = |i| cfg.width(i);
    p.init_weight("stem.w", [w(0), 1, 3, 3], rng);
    for i in 0..cfg.levels {
        init_resnet_block(&mut p, &format!("enc{i}"), w(i), rng);
        p.init_weight(format!("down{i}.w"), [w(i + 1), w(i), 3, 3], rng);
    }
    init_resnet_block(&mut p, "bottleneck", w(cfg.levels), rng);
    for i in (0..cfg.levels).rev() {
        p.init_weight(format!("up{i}.w"), [w(i + 1), w(i), 2, 2], rng);
        p.init_weight(format!("fuse{i}.w"), [w(i), 2 * w(i), 3, 3], rng);
        init_resnet_block(&mut p, &format!("dec{i}"), w(i), rng);
    }
    p.init_weight("head.w", [2, w(0), 1, 1], rng);
    p.init_bias("head.b", 2);
    p
}

/// Per-pixel class probabilities `(N, 2, H, W)`; channel 0 is lesion.
pub fn unet_forward<'t, T: Real>(cfg: &UNetConfig, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
    cfg.check_input(x.shape())?;
    let mut h = p.conv("stem", x, 1, 1)?.instance_norm(NORM_EPS).relu();
    let mut skips = Vec::with_capacity(cfg.levels);
    for i in 0..cfg.levels {
        h = resnet_block(h, p, &format!("enc{i}"))?;
        skips.push(h);
        h = p.conv(&format!("down{i}"), h, 2, 1)?.instance_norm(NORM_EPS).relu();
    }
    h = resnet_block(h, p, "bottleneck")?;
    for i in (0..cfg.levels).rev() {
        let up = p.conv_transpose(&format!("up{i}"), h, 2, 0)?.instance_norm(NORM_EPS).relu();
        let cat = skips[i].concat_channels(up)?;
        h = p.conv(&format!("fuse{i}"), cat, 1, 1)?.instance_norm(NORM_EPS).relu();
        h = resnet_block(h, p, &format!("dec{i}"))?;
    }
    Ok(p.conv("head", h, 1, 0)?.softmax_channel())
}

/// A trained segmentation network.
#[derive(Clone, Debug, PartialEq)]
pub struct UNet {
    pub config: UNetConfig,
    pub params: ParamSet<f32>,
}

impl UNet {
    pub fn new(config: UNetConfig, params: ParamSet<f32>) -> Self {
        Self { config, params }
    }

    pub fn forward(&self, x: &Tensor4<f32>) -> Result<Tensor4<f32>> {
        let tape = Tape::new();
        let b = self.params.bind(&tape, false);
        let y = unet_forward(&self.config, &b, tape.constant(x.clone()))?;
        Ok(std::sync::Arc::unwrap_or_clone(y.value()))
    }

    /// Lesion mask of a batch by per-pixel argmax (ties go to non-lesion).
    pub fn predict_batch(&self, images: &[&Raster]) -> Result<Vec<Vec<bool>>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(8) {
            let mut flat = Vec::with_capacity(chunk.len() * SLICE_SIZE * SLICE_SIZE);
            for r in chunk {
                if r.shape() != (SLICE_SIZE, SLICE_SIZE) {
                    return Err(Error::Shape {
                        op: "segment",
                        dim: "rows",
                        expected: SLICE_SIZE,
                        actual: r.rows,
                    });
                }
                flat.extend_from_slice(&r.data);
            }
            let x = Tensor4::from_vec([chunk.len(), 1, SLICE_SIZE, SLICE_SIZE], flat)?;
            let y = self.forward(&x)?;
            for n in 0..chunk.len() {
                let les = y.plane(n, LESION_CHANNEL);
                let bg = y.plane(n, 1 - LESION_CHANNEL);
                out.push(les.iter().zip(bg).map(|(a, b)| a > b).collect());
            }
        }
        Ok(out)
    }

    pub fn predict(&self, image: &Raster) -> Result<Vec<bool>> {
        Ok(self.predict_batch(&[image])?.remove(0))
    }

    /// Writes `path` and a `.json` sidecar with the configuration.
    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.params)?;
        let side = path.with_extension("json");
        let text = serde_json::to_string_pretty(&self.config).map_err(|e| Error::invalid(e.to_string()))?;
        std::fs::write(&side, text).map_err(|e| Error::io(side, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let params = checkpoint::load(path)?;
        let side = path.with_extension("json");
        let config = match std::fs::read_to_string(&side) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", side.display())))?,
            Err(_) => infer_config(&params)?,
        };
        Ok(Self { config, params })
    }
}

fn infer_config(p: &ParamSet<f32>) -> Result<UNetConfig> {
    let base = p
        .get("stem.w")
        .map(|w| w.batch())
        .ok_or_else(|| Error::invalid("checkpoint has no `stem.w`; not a u-net"))?;
    let levels = (0..).take_while(|i| p.contains(&format!("down{i}.w"))).count();
    Ok(UNetConfig { base, levels })
}
