//! Deterministic brain-like phantoms standing in for scanner domains.
//!
//! Each subject is an ellipsoidal brain with a gray-matter rim, dark
//! ventricles, smooth texture and hyper-intense soft-edged lesion blobs.
//! A [`DomainStyle`] then reshapes intensities the way a scanner would:
//! gamma, contrast, bias field and noise.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::manifest::{tile_volumes, DatasetManifest, LabelUse};
use crate::imaging::nifti::{write_nifti_f32, write_nifti_mask};
use crate::imaging::preprocess::normalize_volume;
use crate::imaging::volume::{Mask3, Volume, VolumeMeta};

const CSF: f64 = 0.08;
const WHITE: f64 = 0.33;
const GRAY: f64 = 0.45;
const LESION: f64 = 0.95;
/// Width of the soft lesion rim, in pixels.
const RIM: f64 = 1.5;
/// Slice thickness relative to in-plane spacing.
const SLICE_MM: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "sigma", rename_all = "lowercase")]
pub enum NoiseModel {
    Gaussian(f64),
    Rician(f64),
}

impl NoiseModel {
    pub fn sigma(&self) -> f64 {
        match *self {
            NoiseModel::Gaussian(s) | NoiseModel::Rician(s) => s,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainStyle {
    pub gamma: f64,
    pub contrast: f64,
    pub noise: NoiseModel,
    /// Peak relative amplitude of the multiplicative bias field.
    pub bias: f64,
    pub texture_seed: u64,
}

impl DomainStyle {
    /// Noise-free identity style.
    pub fn clean() -> Self {
        Self {
            gamma: 1.0,
            contrast: 1.0,
            noise: NoiseModel::Gaussian(0.0),
            bias: 0.0,
            texture_seed: 7,
        }
    }

    /// Source-like scanner: near-linear response, light noise.
    pub fn source_default() -> Self {
        Self {
            noise: NoiseModel::Gaussian(0.01),
            ..Self::clean()
        }
    }

    /// Target-like scanner: compressed contrast, Rician noise and a bias field.
    pub fn target_default() -> Self {
        Self {
            gamma: 0.5,
            contrast: 1.0,
            noise: NoiseModel::Rician(0.06),
            bias: 0.2,
            texture_seed: 11,
        }
    }

    /// Extra target vendors with graded gaps from the source style.
    pub fn vendor_variant(i: usize) -> Self {
        let gammas = [0.5, 0.65, 0.8];
        let biases = [0.2, 0.12, 0.25];
        Self {
            gamma: gammas[i % 3],
            contrast: 1.0,
            noise: NoiseModel::Rician(0.04 + 0.01 * (i % 3) as f64),
            bias: biases[i % 3],
            texture_seed: 11 + i as u64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !(self.contrast > 0.0) {
            return Err(Error::invalid("gamma and contrast must be positive"));
        }
        if !(self.noise.sigma() >= 0.0) {
            return Err(Error::invalid("noise sigma must be non-negative"));
        }
        if !(self.bias.abs() < 1.0) {
            return Err(Error::invalid("bias amplitude must lie in (-1, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dataset: String,
    pub vendor: String,
    pub subjects: usize,
    pub slices: usize,
    /// Inclusive range of lesions per subject.
    pub lesion_count: (usize, usize),
    /// Inclusive in-plane lesion radius range in pixels.
    pub lesion_radius: (f64, f64),
    pub rows: usize,
    pub cols: usize,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dataset: "PHANTOM".into(),
            vendor: "A".into(),
            subjects: 8,
            slices: 20,
            lesion_count: (4, 10),
            lesion_radius: (4.0, 10.0),
            rows: 256,
            cols: 256,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.subjects == 0 || self.slices == 0 {
            return Err(Error::invalid("subjects and slices must be at least 1"));
        }
        if self.rows < 16 || self.cols < 16 {
            return Err(Error::invalid("phantom rasters must be at least 16×16"));
        }
        let (lo, hi) = self.lesion_radius;
        let (clo, chi) = self.lesion_count;
        if !(lo > 0.0 && lo <= hi) || clo > chi {
            return Err(Error::invalid("lesion ranges must be non-empty and positive"));
        }
        // lesions live inside the white matter core of the smallest brain
        let core = 0.3 * 0.32 * self.rows.min(self.cols) as f64;
        if hi + RIM > core {
            return Err(Error::invalid(format!(
                "lesion radius {hi} does not fit inside a brain of {}×{} pixels (limit {:.1})",
                self.rows,
                self.cols,
                core - RIM
            )));
        }
        Ok(())
    }
}

struct Lesion {
    center: [f64; 3],
    radius: f64,
}

struct Subject {
    center: [f64; 3],
    axes: [f64; 3],
    lesions: Vec<Lesion>,
    waves: Vec<([f64; 3], f64)>,
}

fn subject_seed(seed: u64, i: usize, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((i as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(stream)
}

fn draw_subject(spec: &PhantomSpec, style: &DomainStyle, i: usize) -> Subject {
    let mut rng = ChaCha8Rng::seed_from_u64(subject_seed(spec.seed, i, 1));
    let (rows, cols, nz) = (spec.rows as f64, spec.cols as f64, spec.slices as f64);
    let jitter = |rng: &mut ChaCha8Rng| 1.0 + 0.05 * (2.0 * rng.random::<f64>() - 1.0);
    let axes = [0.36 * cols * jitter(&mut rng), 0.42 * rows * jitter(&mut rng), 0.65 * nz];
    let center = [
        (cols - 1.0) / 2.0 + 0.02 * cols * (2.0 * rng.random::<f64>() - 1.0),
        (rows - 1.0) / 2.0 + 0.02 * rows * (2.0 * rng.random::<f64>() - 1.0),
        (nz - 1.0) / 2.0,
    ];
    let n = rng.random_range(spec.lesion_count.0..=spec.lesion_count.1);
    let mut lesions = Vec::with_capacity(n);
    for _ in 0..n {
        let radius = rng.random_range(spec.lesion_radius.0..=spec.lesion_radius.1);
        // uniform direction in the plane, normalized radius in the white matter
        let theta = 2.0 * PI * rng.random::<f64>();
        let rho = 0.3 + 0.35 * rng.random::<f64>();
        let dz = 0.6 * (2.0 * rng.random::<f64>() - 1.0);
        lesions.push(Lesion {
            center: [
                center[0] + rho * axes[0] * theta.cos(),
                center[1] + rho * axes[1] * theta.sin(),
                center[2] + dz * (nz - 1.0) / 2.0,
            ],
            radius,
        });
    }
    // smooth texture: a few low-frequency plane waves tied to the style
    let mut trng = ChaCha8Rng::seed_from_u64(subject_seed(style.texture_seed, i, 2));
    let waves = (0..6)
        .map(|_| {
            let k = [
                2.0 * PI * trng.random_range(0.5..3.0) / cols,
                2.0 * PI * trng.random_range(0.5..3.0) / rows,
                2.0 * PI * trng.random_range(0.0..1.0) / nz.max(1.0),
            ];
            (k, 2.0 * PI * trng.random::<f64>())
        })
        .collect();
    Subject {
        center,
        axes,
        lesions,
        waves,
    }
}

/// Noise-free intensity, brain flag and lesion flag at one voxel.
fn anatomy(s: &Subject, x: f64, y: f64, z: f64) -> (f64, bool, bool) {
    let d = [(x - s.center[0]) / s.axes[0], (y - s.center[1]) / s.axes[1], (z - s.center[2]) / s.axes[2]];
    let rho = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if rho >= 1.0 {
        return (0.0, false, false);
    }
    let mut v = if rho > 0.85 { GRAY } else { WHITE };
    let vent = (d[0] / 0.12).powi(2) + (d[1] / 0.25).powi(2) + (d[2] / 0.5).powi(2);
    if vent < 1.0 {
        v = CSF;
    }
    let tex: f64 = s
        .waves
        .iter()
        .map(|(k, ph)| (k[0] * x + k[1] * y + k[2] * z + ph).cos())
        .sum::<f64>()
        / s.waves.len() as f64;
    v += 0.03 * tex;
    let mut lesion = false;
    for l in &s.lesions {
        let dz = (z - l.center[2]) * SLICE_MM;
        let dist = ((x - l.center[0]).powi(2) + (y - l.center[1]).powi(2) + dz * dz).sqrt();
        if dist < l.radius {
            lesion = true;
            v = LESION;
        } else if dist < l.radius + RIM {
            let t = (dist - l.radius) / RIM;
            let w = 1.0 - t * t * (3.0 - 2.0 * t);
            v = v.max(v + (LESION - v) * w);
        }
    }
    (v, true, lesion)
}

fn bias_field(style: &DomainStyle, cols: usize, rows: usize) -> impl Fn(f64, f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(subject_seed(style.texture_seed, 0, 3));
    let ph: [f64; 2] = [2.0 * PI * rng.random::<f64>(), 2.0 * PI * rng.random::<f64>()];
    let amp = style.bias;
    let (w, h) = (cols as f64, rows as f64);
    move |x, y| 1.0 + amp * 0.5 * ((PI * x / w + ph[0]).cos() + (PI * y / h + ph[1]).cos())
}

/// Subject volumes of one domain, normalized to [0, 1].
pub fn phantom_volumes(spec: &PhantomSpec, style: &DomainStyle) -> Result<Vec<Volume>> {
    spec.validate()?;
    style.validate()?;
    let (rows, cols, nz) = (spec.rows, spec.cols, spec.slices);
    let bias = bias_field(style, cols, rows);
    (0..spec.subjects)
        .map(|i| {
            let s = draw_subject(spec, style, i);
            let mut nrng = ChaCha8Rng::seed_from_u64(subject_seed(spec.seed ^ style.texture_seed.rotate_left(17), i, 4));
            let normal = Normal::new(0.0, style.noise.sigma().max(f64::MIN_POSITIVE)).expect("finite sigma");
            let noise = |rng: &mut ChaCha8Rng| if style.noise.sigma() > 0.0 { normal.sample(rng) } else { 0.0 };
            let n = rows * cols * nz;
            let mut vox = vec![0f32; n];
            let mut brain = vec![false; n];
            let mut lesion = vec![false; n];
            for z in 0..nz {
                for y in 0..rows {
                    for x in 0..cols {
                        let idx = (z * rows + y) * cols + x;
                        let (v, b, l) = anatomy(&s, x as f64, y as f64, z as f64);
                        if !b {
                            continue;
                        }
                        let mut v = style.contrast * v.max(0.0).powf(style.gamma) * bias(x as f64, y as f64);
                        v = match style.noise {
                            NoiseModel::Gaussian(_) => v + noise(&mut nrng),
                            NoiseModel::Rician(_) => {
                                let (a, b) = (noise(&mut nrng), noise(&mut nrng));
                                ((v + a).powi(2) + b * b).sqrt()
                            }
                        };
                        vox[idx] = v.max(0.0) as f32;
                        brain[idx] = true;
                        lesion[idx] = l;
                    }
                }
            }
            let dims = [cols, rows, nz];
            let meta = VolumeMeta {
                dataset: spec.dataset.clone(),
                vendor: spec.vendor.clone(),
                subject: format!("{}{:03}", spec.vendor, i),
            };
            let v = Volume::new(dims, [1.0, 1.0, SLICE_MM], vox, Mask3::new(dims, brain)?, Some(Mask3::new(dims, lesion)?), meta)?;
            normalize_volume(&v)
        })
        .collect()
}

/// Writes subject volumes and their slice tiles under `out`, returning the slice manifest.
///
/// Layout: `volumes/<subject>_{flair,brain,lesion}.nii`, `tiles/<subject>_<z>.{img,lab}.tile`
/// and `manifest.tsv`.
pub fn make_phantom_domain(spec: &PhantomSpec, style: &DomainStyle, out: &Path, label_use: LabelUse) -> Result<DatasetManifest> {
    let vols = phantom_volumes(spec, style)?;
    let vdir = out.join("volumes");
    std::fs::create_dir_all(&vdir).map_err(|e| Error::io(&vdir, e))?;
    for v in &vols {
        let subj = &v.meta.subject;
        write_nifti_f32(&vdir.join(format!("{subj}_flair.nii")), v.dims, v.spacing, &v.voxels)?;
        write_nifti_mask(&vdir.join(format!("{subj}_brain.nii")), &v.brain_mask, v.spacing)?;
        if let Some(l) = &v.lesion_mask {
            write_nifti_mask(&vdir.join(format!("{subj}_lesion.nii")), l, v.spacing)?;
        }
    }
    tile_volumes(&vols, out, label_use)
}

/// Source domain with training labels and target domain with validation-only labels.
pub fn make_domain_pair(
    spec_a: &PhantomSpec,
    style_a: &DomainStyle,
    spec_b: &PhantomSpec,
    style_b: &DomainStyle,
    out: &Path,
) -> Result<(DatasetManifest, DatasetManifest)> {
    let a = make_phantom_domain(spec_a, style_a, &out.join(format!("{}_{}", spec_a.dataset, spec_a.vendor)), LabelUse::Train)?;
    let b = make_phantom_domain(
        spec_b,
        style_b,
        &out.join(format!("{}_{}", spec_b.dataset, spec_b.vendor)),
        LabelUse::ValidationOnly,
    )?;
    Ok((a, b))
}

/// Mean intensity over brain (non-zero) pixels of a raster.
pub fn brain_mean(data: &[f32]) -> f64 {
    let (s, n) = data
        .iter()
        .filter(|&&v| v > 0.0)
        .fold((0.0, 0usize), |(s, n), &v| (s + v as f64, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Accuracy of the best single threshold on per-image brain means separating two sets.
pub fn threshold_separability(a: &[f64], b: &[f64]) -> f64 {
    let mut all: Vec<(f64, bool)> = a.iter().map(|&v| (v, false)).chain(b.iter().map(|&v| (v, true))).collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let n = all.len() as f64;
    let (na, nb) = (a.len(), b.len());
    let mut best: f64 = 0.0;
    // threshold after position i: left predicted one class, right the other
    let (mut left_a, mut left_b) = (0usize, 0usize);
    for i in 0..=all.len() {
        let acc_ab = (left_a + (nb - left_b)) as f64 / n;
        let acc_ba = (left_b + (na - left_a)) as f64 / n;
        best = best.max(acc_ab).max(acc_ba);
        if i < all.len() {
            if all[i].1 {
                left_b += 1;
            } else {
                left_a += 1;
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{extract_slices, DEFAULT_SLICE_FRACTION};

    fn small(vendor: &str, seed: u64) -> PhantomSpec {
        PhantomSpec {
            vendor: vendor.into(),
            subjects: 2,
            slices: 6,
            rows: 64,
            cols: 64,
            lesion_count: (2, 4),
            lesion_radius: (2.0, 4.0),
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_by_seed() {
        let s = small("A", 3);
        let a = phantom_volumes(&s, &DomainStyle::target_default()).unwrap();
        let b = phantom_volumes(&s, &DomainStyle::target_default()).unwrap();
        assert_eq!(a, b);
        let c = phantom_volumes(&small("A", 4), &DomainStyle::target_default()).unwrap();
        assert_ne!(a[0].voxels, c[0].voxels);
    }

    #[test]
    fn degenerate_styles_give_identical_images() {
        let a = phantom_volumes(&small("A", 1), &DomainStyle::clean()).unwrap();
        let b = phantom_volumes(&small("B", 1), &DomainStyle::clean()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.voxels, y.voxels);
        }
    }

    #[test]
    fn lesions_inside_brain_and_brighter() {
        let vols = phantom_volumes(&small("A", 9), &DomainStyle::clean()).unwrap();
        for v in &vols {
            let les = v.lesion_mask.as_ref().unwrap();
            assert!(les.count() > 0);
            let (mut ls, mut ln, mut bs, mut bn) = (0.0, 0, 0.0, 0);
            for i in 0..v.voxels.len() {
                if les.data()[i] {
                    assert!(v.brain_mask.data()[i]);
                    ls += v.voxels[i] as f64;
                    ln += 1;
                } else if v.brain_mask.data()[i] {
                    bs += v.voxels[i] as f64;
                    bn += 1;
                }
            }
            let lesion_min = (0..v.voxels.len())
                .filter(|&i| les.data()[i])
                .map(|i| v.voxels[i])
                .fold(f32::INFINITY, f32::min);
            assert!(lesion_min as f64 > bs / bn as f64);
            assert!(ls / ln as f64 > bs / bn as f64);
        }
    }

    #[test]
    fn oversized_lesions_are_rejected() {
        let mut s = small("A", 0);
        s.lesion_radius = (2.0, 30.0);
        assert!(phantom_volumes(&s, &DomainStyle::clean()).is_err());
    }

    #[test]
    fn every_default_slice_survives_the_filter() {
        let spec = PhantomSpec {
            subjects: 1,
            rows: 64,
            cols: 64,
            lesion_radius: (2.0, 4.0),
            ..Default::default()
        };
        let v = &phantom_volumes(&spec, &DomainStyle::source_default()).unwrap()[0];
        assert_eq!(extract_slices(v, DEFAULT_SLICE_FRACTION).unwrap().len(), 20);
    }

    #[test]
    fn separability_counts() {
        assert_eq!(threshold_separability(&[0.1, 0.2], &[0.3, 0.4]), 1.0);
        assert_eq!(threshold_separability(&[0.3, 0.4], &[0.1, 0.2]), 1.0);
        assert_eq!(threshold_separability(&[0.1, 0.3], &[0.2, 0.4]), 0.75);
    }
}
