use serde::{Deserialize, Serialize};

use super::resample::{resize_linear, resize_nearest};
use super::volume::{LabelMap, Raster, Volume, SLICE_SIZE};
use crate::error::{Error, Result};

/// Default fraction of the largest per-slice brain area a slice must reach.
pub const DEFAULT_SLICE_FRACTION: f64 = 0.10;

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset: String,
    pub vendor: String,
    pub subject: String,
    pub slice_index: usize,
}

/// One 256×256 axial slice with its optional tri-level label.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceRecord {
    pub image: Raster,
    pub label: Option<LabelMap>,
    pub provenance: Provenance,
    /// `(rows, cols)` before resampling.
    pub original_shape: (usize, usize),
}

impl SliceRecord {
    pub fn new(image: Raster, label: Option<LabelMap>, provenance: Provenance, original_shape: (usize, usize)) -> Result<Self> {
        if image.shape() != (SLICE_SIZE, SLICE_SIZE) {
            return Err(Error::Shape {
                op: "SliceRecord",
                dim: "rows",
                expected: SLICE_SIZE,
                actual: image.rows,
            });
        }
        if let Some(l) = &label {
            if (l.rows, l.cols) != image.shape() {
                return Err(Error::invalid("label raster is not aligned with the image"));
            }
        }
        Ok(Self {
            image,
            label,
            provenance,
            original_shape,
        })
    }

    /// Binary lesion target for segmentation.
    pub fn lesion_target(&self) -> Result<Vec<bool>> {
        self.label
            .as_ref()
            .map(|l| l.lesion_mask())
            .ok_or_else(|| Error::Unlabeled(self.describe()))
    }

    pub fn describe(&self) -> String {
        let p = &self.provenance;
        format!("{}:{} subject {} slice {}", p.dataset, p.vendor, p.subject, p.slice_index)
    }
}

/// Clamps negatives to zero and divides by the maximum intensity.
pub fn normalize_volume(v: &Volume) -> Result<Volume> {
    let has_signal = v
        .voxels
        .iter()
        .zip(v.brain_mask.data())
        .any(|(&x, &b)| b && x > 0.0);
    let max = v.voxels.iter().fold(0.0f32, |m, &x| m.max(x));
    if !has_signal || !(max > 0.0) || !max.is_finite() {
        return Err(Error::DegenerateVolume);
    }
    let mut out = v.clone();
    for x in out.voxels.iter_mut() {
        *x = x.max(0.0) / max;
    }
    Ok(out)
}

/// Brain-mask pixel count of every axial slice.
pub fn slice_brain_counts(v: &Volume) -> Vec<usize> {
    (0..v.slices())
        .map(|z| v.brain_mask.slice(z).iter().filter(|&&b| b).count())
        .collect()
}

/// Indices of slices that survive the brain-area filter.
pub fn kept_slices(counts: &[usize], fraction: f64) -> Vec<usize> {
    let max = counts.iter().copied().max().unwrap_or(0);
    let floor = fraction * max as f64;
    counts
        .iter()
        .enumerate()
        .filter(|&(_, &c)| c > 0 && c as f64 >= floor)
        .map(|(z, _)| z)
        .collect()
}

/// Axial slices resampled to 256×256, dropping near-empty slices.
pub fn extract_slices(v: &Volume, fraction: f64) -> Result<Vec<SliceRecord>> {
    let keep = kept_slices(&slice_brain_counts(v), fraction);
    if keep.is_empty() {
        return Err(Error::EmptyAfterFilter);
    }
    let (rows, cols) = (v.rows(), v.cols());
    keep.into_iter()
        .map(|z| {
            let image = resize_linear(v.slice(z), rows, cols, SLICE_SIZE, SLICE_SIZE, true);
            let label = v.lesion_mask.as_ref().map(|lesion| {
                let native = LabelMap::from_masks(rows, cols, v.brain_mask.slice(z), Some(lesion.slice(z)));
                LabelMap {
                    rows: SLICE_SIZE,
                    cols: SLICE_SIZE,
                    data: resize_nearest(&native.data, rows, cols, SLICE_SIZE, SLICE_SIZE),
                }
            });
            let provenance = Provenance {
                dataset: v.meta.dataset.clone(),
                vendor: v.meta.vendor.clone(),
                subject: v.meta.subject.clone(),
                slice_index: z,
            };
            SliceRecord::new(Raster::new(SLICE_SIZE, SLICE_SIZE, image)?, label, provenance, (rows, cols))
        })
        .collect()
}

/// Resamples a 256×256 raster back to the record's original shape.
pub fn restore_shape(s: &SliceRecord, image: &Raster) -> Result<Raster> {
    let (r, c) = s.original_shape;
    Raster::new(r, c, resize_linear(&image.data, image.rows, image.cols, r, c, true))
}

/// Nearest-neighbour counterpart of [`restore_shape`] for binary masks.
pub fn restore_mask(s: &SliceRecord, mask: &[bool], rows: usize, cols: usize) -> Vec<bool> {
    let (r, c) = s.original_shape;
    resize_nearest(mask, rows, cols, r, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::volume::{Mask3, VolumeMeta};
    use rand::{Rng, SeedableRng};

    fn vol(dims: [usize; 3], voxels: Vec<f32>) -> Volume {
        Volume::from_voxels(dims, [1.0; 3], voxels).unwrap()
    }

    #[test]
    fn normalize_examples() {
        let v = vol([3, 1, 1], vec![0.0, 5.0, 10.0]);
        assert_eq!(normalize_volume(&v).unwrap().voxels, vec![0.0, 0.5, 1.0]);
        let n = normalize_volume(&v).unwrap();
        assert_eq!(normalize_volume(&n).unwrap(), n);
        assert!(matches!(normalize_volume(&vol([2, 1, 1], vec![0.0, 0.0])), Err(Error::DegenerateVolume)));
    }

    #[test]
    fn normalize_keeps_argmax_and_order() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let data: Vec<f32> = (0..60).map(|_| rng.random_range(0.0..100.0)).collect();
            let v = vol([5, 4, 3], data.clone());
            let n = normalize_volume(&v).unwrap();
            let argmax = |d: &[f32]| d.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            assert_eq!(argmax(&data), argmax(&n.voxels));
            assert_eq!(n.voxels.iter().cloned().fold(0.0, f32::max), 1.0);
            for i in 0..60 {
                for j in 0..60 {
                    if data[i] < data[j] {
                        assert!(n.voxels[i] <= n.voxels[j]);
                    }
                }
            }
        }
    }

    #[test]
    fn threshold_rule_on_counts() {
        assert_eq!(kept_slices(&[1000, 500, 50], 0.10), vec![0, 1]);
        assert_eq!(kept_slices(&[0, 10, 1], 0.10), vec![1, 2]);
        assert_eq!(kept_slices(&[0, 0], 0.10), Vec::<usize>::new());
    }

    fn disc_volume(rows: usize, cols: usize, radii: &[f64]) -> Volume {
        let nz = radii.len();
        let mut vox = vec![0f32; rows * cols * nz];
        for (z, &rad) in radii.iter().enumerate() {
            for r in 0..rows {
                for c in 0..cols {
                    let dr = r as f64 - rows as f64 / 2.0;
                    let dc = c as f64 - cols as f64 / 2.0;
                    if (dr * dr + dc * dc).sqrt() < rad {
                        vox[(z * rows + r) * cols + c] = 0.5 + 0.5 * (c as f32 / cols as f32);
                    }
                }
            }
        }
        let brain = Mask3::new([cols, rows, nz], vox.iter().map(|&v| v > 0.0).collect()).unwrap();
        Volume::new([cols, rows, nz], [1.0; 3], vox, brain, None, VolumeMeta::default()).unwrap()
    }

    #[test]
    fn empty_top_slice_is_dropped_and_output_is_256() {
        let v = disc_volume(128, 128, &[40.0, 50.0, 3.0, 0.0]);
        let s = extract_slices(&v, DEFAULT_SLICE_FRACTION).unwrap();
        let idx: Vec<_> = s.iter().map(|r| r.provenance.slice_index).collect();
        assert_eq!(idx, vec![0, 1]);
        assert!(s.iter().all(|r| r.image.shape() == (256, 256) && r.original_shape == (128, 128)));
        assert!(matches!(extract_slices(&disc_volume(8, 8, &[0.0]), 0.1), Err(Error::EmptyAfterFilter)));
    }

    #[test]
    fn restore_shape_contract_and_round_trip() {
        let v = disc_volume(232, 256, &[90.0]);
        let s = &extract_slices(&v, 0.1).unwrap()[0];
        let back = restore_shape(s, &s.image).unwrap();
        assert_eq!(back.shape(), (232, 256));
        let again = resize_linear(&back.data, 232, 256, 256, 256, true);
        let mad: f64 = again.iter().zip(&s.image.data).map(|(a, b)| (a - b).abs() as f64).sum::<f64>() / again.len() as f64;
        assert!(mad < 0.05, "mean abs diff {mad}");

        let square = disc_volume(256, 256, &[90.0]);
        let s = &extract_slices(&square, 0.1).unwrap()[0];
        assert_eq!(restore_shape(s, &s.image).unwrap(), s.image);
    }
}
