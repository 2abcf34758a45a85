use rand::Rng;
use serde::{Deserialize, Serialize};

use super::preprocess::SliceRecord;
use super::volume::{LabelMap, Raster, Tissue};
use crate::error::{Error, Result};

/// Random scaling, rotation and mirroring applied identically to image and label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Inclusive zoom range; 1.0 keeps the size.
    pub scale: (f64, f64),
    /// Rotation is drawn uniformly from `[-rotation_deg, rotation_deg]`.
    pub rotation_deg: f64,
    pub mirror_p: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            scale: (0.9, 1.1),
            rotation_deg: 10.0,
            mirror_p: 0.5,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// A configuration that leaves every record untouched.
    pub fn identity() -> Self {
        Self {
            scale: (1.0, 1.0),
            rotation_deg: 0.0,
            mirror_p: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale;
        if !(lo > 0.0 && lo <= hi && hi <= 2.0) {
            return Err(Error::invalid(format!("scale range {lo}..{hi} must lie in (0, 2]")));
        }
        if !(0.0..=1.0).contains(&self.mirror_p) {
            return Err(Error::invalid(format!("mirror probability {} outside [0, 1]", self.mirror_p)));
        }
        if !(self.rotation_deg >= 0.0 && self.rotation_deg.is_finite()) {
            return Err(Error::invalid("rotation range must be a finite non-negative angle"));
        }
        Ok(())
    }

    /// Draws one transform; always consumes the same number of random values.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Transform2 {
        let mirror = rng.random::<f64>() < self.mirror_p;
        let angle = (2.0 * rng.random::<f64>() - 1.0) * self.rotation_deg;
        let (lo, hi) = self.scale;
        let scale = lo + (hi - lo) * rng.random::<f64>();
        Transform2 { mirror, angle_deg: angle, scale }
    }
}

/// Mirror (about the vertical axis), then rotate, then scale, about the raster centre.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transform2 {
    pub mirror: bool,
    pub angle_deg: f64,
    pub scale: f64,
}

impl Transform2 {
    pub fn is_identity(&self) -> bool {
        !self.mirror && self.angle_deg == 0.0 && self.scale == 1.0
    }

    /// Maps a `(row, col)` position in the input to the output raster.
    pub fn apply(&self, (r, c): (f64, f64), rows: usize, cols: usize) -> (f64, f64) {
        let (cy, cx) = ((rows as f64 - 1.0) / 2.0, (cols as f64 - 1.0) / 2.0);
        let (mut y, mut x) = (r - cy, c - cx);
        if self.mirror {
            x = -x;
        }
        let (s, co) = self.angle_deg.to_radians().sin_cos();
        let (ry, rx) = (co * y + s * x, -s * y + co * x);
        y = ry * self.scale;
        x = rx * self.scale;
        (y + cy, x + cx)
    }

    /// Inverse of [`apply`](Self::apply): output position to source position.
    pub fn invert(&self, (r, c): (f64, f64), rows: usize, cols: usize) -> (f64, f64) {
        let (cy, cx) = ((rows as f64 - 1.0) / 2.0, (cols as f64 - 1.0) / 2.0);
        let (y, x) = ((r - cy) / self.scale, (c - cx) / self.scale);
        let (s, co) = self.angle_deg.to_radians().sin_cos();
        let (uy, mut ux) = (co * y - s * x, s * y + co * x);
        if self.mirror {
            ux = -ux;
        }
        (uy + cy, ux + cx)
    }

    /// Bilinear warp; samples falling outside the source read as zero.
    pub fn warp_linear(&self, img: &Raster) -> Raster {
        let (rows, cols) = img.shape();
        let mut out = Raster::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                let (y, x) = self.invert((r as f64, c as f64), rows, cols);
                if y < -0.5 || x < -0.5 || y > rows as f64 - 0.5 || x > cols as f64 - 0.5 {
                    continue;
                }
                let y = y.clamp(0.0, (rows - 1) as f64);
                let x = x.clamp(0.0, (cols - 1) as f64);
                let (y0, x0) = (y.floor() as usize, x.floor() as usize);
                let (y1, x1) = ((y0 + 1).min(rows - 1), (x0 + 1).min(cols - 1));
                let (wy, wx) = (y - y0 as f64, x - x0 as f64);
                let g = |a: usize, b: usize| img.get(a, b) as f64;
                let v = (g(y0, x0) * (1.0 - wx) + g(y0, x1) * wx) * (1.0 - wy) + (g(y1, x0) * (1.0 - wx) + g(y1, x1) * wx) * wy;
                out.data[r * cols + c] = v as f32;
            }
        }
        out
    }

    /// Nearest-neighbour warp for categorical rasters; outside reads as background.
    pub fn warp_nearest(&self, label: &LabelMap) -> LabelMap {
        let (rows, cols) = (label.rows, label.cols);
        let mut out = LabelMap::filled(rows, cols, Tissue::Background);
        for r in 0..rows {
            for c in 0..cols {
                let (y, x) = self.invert((r as f64, c as f64), rows, cols);
                let (y, x) = (y.round(), x.round());
                if y >= 0.0 && x >= 0.0 && (y as usize) < rows && (x as usize) < cols {
                    out.data[r * cols + c] = label.data[y as usize * cols + x as usize];
                }
            }
        }
        out
    }
}

pub fn augment<R: Rng + ?Sized>(s: &SliceRecord, cfg: &AugmentConfig, rng: &mut R) -> SliceRecord {
    let t = cfg.sample(rng);
    apply_transform(s, &t)
}

pub fn apply_transform(s: &SliceRecord, t: &Transform2) -> SliceRecord {
    if t.is_identity() {
        return s.clone();
    }
    let mut out = s.clone();
    out.image = t.warp_linear(&s.image);
    out.label = s.label.as_ref().map(|l| t.warp_nearest(l));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::preprocess::Provenance;
    use rand::SeedableRng;

    fn record() -> SliceRecord {
        let n = 256;
        let mut img = Raster::zeros(n, n);
        let mut lab = LabelMap::filled(n, n, Tissue::Background);
        for r in 0..n {
            for c in 0..n {
                let dy = r as f64 - 128.0;
                let dx = c as f64 - 120.0;
                if dy * dy / 90.0f64.powi(2) + dx * dx / 70.0f64.powi(2) < 1.0 {
                    img.data[r * n + c] = 0.3 + c as f32 / 1000.0;
                    lab.data[r * n + c] = Tissue::Brain;
                }
                let (ly, lx) = (r as f64 - 90.0, c as f64 - 150.0);
                if ly * ly + lx * lx < 36.0 {
                    img.data[r * n + c] = 0.9;
                    lab.data[r * n + c] = Tissue::Lesion;
                }
            }
        }
        SliceRecord::new(img, Some(lab), Provenance::default(), (n, n)).unwrap()
    }

    fn centroid(l: &LabelMap) -> (f64, f64) {
        let (mut sy, mut sx, mut n) = (0.0, 0.0, 0.0);
        for r in 0..l.rows {
            for c in 0..l.cols {
                if l.data[r * l.cols + c] == Tissue::Lesion {
                    sy += r as f64;
                    sx += c as f64;
                    n += 1.0;
                }
            }
        }
        (sy / n, sx / n)
    }

    #[test]
    fn identity_config_changes_nothing() {
        let s = record();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        assert_eq!(augment(&s, &AugmentConfig::identity(), &mut rng), s);
    }

    #[test]
    fn mirror_is_an_involution() {
        let s = record();
        let cfg = AugmentConfig {
            mirror_p: 1.0,
            ..AugmentConfig::identity()
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let once = augment(&s, &cfg, &mut rng);
        assert_ne!(once, s);
        assert_eq!(once.image.get(10, 0), s.image.get(10, 255));
        assert_eq!(augment(&once, &cfg, &mut rng), s);
    }

    #[test]
    fn lesion_centroid_follows_the_transform() {
        let s = record();
        let before = centroid(s.label.as_ref().unwrap());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let cfg = AugmentConfig::default();
        for _ in 0..10 {
            let t = cfg.sample(&mut rng);
            let out = apply_transform(&s, &t);
            let got = centroid(out.label.as_ref().unwrap());
            let want = t.apply(before, 256, 256);
            assert!((got.0 - want.0).abs() <= 1.0 && (got.1 - want.1).abs() <= 1.0, "{t:?}: {got:?} vs {want:?}");
            assert_eq!(out.image.shape(), (256, 256));
        }
    }

    #[test]
    fn inverse_round_trips() {
        let t = Transform2 {
            mirror: true,
            angle_deg: 7.0,
            scale: 1.07,
        };
        let p = (31.0, 200.0);
        let q = t.invert(t.apply(p, 256, 256), 256, 256);
        assert!((q.0 - p.0).abs() < 1e-9 && (q.1 - p.1).abs() < 1e-9);
    }

    #[test]
    fn invalid_configs() {
        let mut c = AugmentConfig::default();
        c.scale = (0.0, 1.0);
        assert!(c.validate().is_err());
        c.scale = (1.0, 2.5);
        assert!(c.validate().is_err());
        c = AugmentConfig {
            mirror_p: 1.5,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        assert!(AugmentConfig::default().validate().is_ok());
    }
}
