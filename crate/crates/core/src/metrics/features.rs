//! Frozen convolutional feature extractor with four pooled taps.
//!
//! Default weights are He-normal draws from a fixed seed, so features are
//! reproducible without any download; externally trained weights with the
//! same layer names can be loaded from a checkpoint instead.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::linalg::Matrix;
use crate::error::{Error, Result};
use crate::imaging::volume::Raster;
use crate::nn::{checkpoint, ops, ParamSet, Tensor4};

pub const TAPS: [usize; 4] = [64, 192, 768, 2048];
pub const FEATURE_SEED: u64 = 0x5EED_F1D0;

/// `(name, out, in, k, stride)`.
const LAYERS: [(&str, usize, usize, usize, usize); 6] = [
    ("c1", 32, 1, 3, 2),
    ("c2", 64, 32, 3, 2),
    ("c3", 80, 64, 1, 1),
    ("c4", 192, 80, 3, 2),
    ("c5", 768, 192, 3, 1),
    ("c6", 2048, 768, 1, 1),
];

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor {
    params: ParamSet<f32>,
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        Self::seeded(FEATURE_SEED)
    }
}

fn check_tap(tap: usize) -> Result<()> {
    if TAPS.contains(&tap) {
        Ok(())
    } else {
        Err(Error::invalid(format!("unknown feature tap {tap}; expected one of {TAPS:?}")))
    }
}

impl FeatureExtractor {
    pub fn seeded(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        for (name, out, inp, k, _) in LAYERS {
            let std = (2.0 / (inp * k * k) as f64).sqrt();
            params.insert(format!("{name}.w"), Tensor4::randn([out, inp, k, k], std, &mut rng));
        }
        Self { params }
    }

    pub fn from_params(params: ParamSet<f32>) -> Result<Self> {
        for (name, out, inp, k, _) in LAYERS {
            let key = format!("{name}.w");
            match params.get(&key) {
                Some(w) if w.shape() == [out, inp, k, k] => {}
                Some(w) => {
                    return Err(Error::invalid(format!("`{key}` has shape {:?}, expected {:?}", w.shape(), [out, inp, k, k])));
                }
                None => return Err(Error::invalid(format!("feature checkpoint lacks `{key}`"))),
            }
        }
        Ok(Self { params })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_params(checkpoint::load(path)?)
    }

    fn conv(&self, i: usize, x: &Tensor4<f32>) -> Result<Tensor4<f32>> {
        let (name, _, _, k, stride) = LAYERS[i];
        let w = self.params.get(&format!("{name}.w")).expect("validated at construction");
        Ok(ops::relu(&ops::conv2d(x, w, stride, k / 2)?))
    }

    /// Pooled activations `(N, tap)` for a batch `(N, 1, H, W)`.
    pub fn forward(&self, x: &Tensor4<f32>, tap: usize) -> Result<Tensor4<f32>> {
        check_tap(tap)?;
        let x = x.map(|v| 2.0 * v - 1.0);
        let h = self.conv(1, &self.conv(0, &x)?)?;
        let h = ops::max_pool2(&h);
        if tap == 64 {
            return Ok(ops::global_avg_pool(&h));
        }
        let h = ops::max_pool2(&self.conv(3, &self.conv(2, &h)?)?);
        if tap == 192 {
            return Ok(ops::global_avg_pool(&h));
        }
        let h = ops::max_pool2(&self.conv(4, &h)?);
        if tap == 768 {
            return Ok(ops::global_avg_pool(&h));
        }
        Ok(ops::global_avg_pool(&self.conv(5, &h)?))
    }

    /// One feature row per image.
    pub fn features(&self, images: &[&Raster], tap: usize) -> Result<Matrix> {
        check_tap(tap)?;
        let mut rows = Vec::with_capacity(images.len() * tap);
        for chunk in images.chunks(16) {
            let (h, w) = chunk[0].shape();
            let mut flat = Vec::with_capacity(chunk.len() * h * w);
            for r in chunk {
                if r.shape() != (h, w) {
                    return Err(Error::invalid("feature batch mixes image sizes"));
                }
                flat.extend_from_slice(&r.data);
            }
            let y = self.forward(&Tensor4::from_vec([chunk.len(), 1, h, w], flat)?, tap)?;
            rows.extend(y.data().iter().map(|&v| v as f64));
        }
        Matrix::from_vec(images.len(), tap, rows)
    }
}
