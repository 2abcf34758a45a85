//! Voxel-overlap and lesion-wise segmentation metrics.

use crate::error::{Error, Result};
use crate::imaging::volume::Mask3;

fn same_shape(op: &'static str, a: &Mask3, b: &Mask3) -> Result<()> {
    for (axis, (x, y)) in a.dims().iter().zip(b.dims()).enumerate() {
        if *x != y {
            return Err(Error::Shape {
                op,
                dim: ["x", "y", "z"][axis],
                expected: *x,
                actual: y,
            });
        }
    }
    Ok(())
}

fn count(m: &Mask3) -> usize {
    m.count()
}

fn intersection(a: &Mask3, b: &Mask3) -> usize {
    a.data().iter().zip(b.data()).filter(|(x, y)| **x && **y).count()
}

/// `2|P∩G| / (|P| + |G|)`, 1 when both are empty.
pub fn dice(pred: &Mask3, gt: &Mask3) -> Result<f64> {
    same_shape("dice", pred, gt)?;
    let (p, g) = (count(pred), count(gt));
    if p + g == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * intersection(pred, gt) as f64 / (p + g) as f64)
}

/// Absolute volume difference as a percentage of the reference volume.
pub fn avd(pred: &Mask3, gt: &Mask3) -> Result<f64> {
    same_shape("avd", pred, gt)?;
    let g = count(gt) as f64;
    if g == 0.0 {
        return Err(Error::Undefined("avd"));
    }
    Ok((count(pred) as f64 - g).abs() / g * 100.0)
}

/// False positives among in-brain non-lesion voxels, as a percentage.
pub fn fpr(pred: &Mask3, gt: &Mask3, brain: &Mask3) -> Result<f64> {
    same_shape("fpr", pred, gt)?;
    same_shape("fpr", pred, brain)?;
    let mut negatives = 0usize;
    let mut fp = 0usize;
    for ((&p, &g), &b) in pred.data().iter().zip(gt.data()).zip(brain.data()) {
        if b && !g {
            negatives += 1;
            fp += p as usize;
        }
    }
    if negatives == 0 {
        return Err(Error::Undefined("fpr"));
    }
    Ok(fp as f64 / negatives as f64 * 100.0)
}

/// Neighbourhood used to group voxels into lesions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Connectivity {
    /// Shared faces only: 6 in 3D, 4 in 2D.
    Face,
    /// Faces, edges and corners: 26 in 3D, 8 in 2D.
    #[default]
    Full,
}

/// Connected-component labelling: `labels[i]` is 0 for background and
/// `1..=count` otherwise, numbered in scan order of first voxel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Components {
    pub labels: Vec<u32>,
    pub count: usize,
}

struct UnionFind(Vec<u32>);

impl UnionFind {
    fn find(&mut self, mut x: u32) -> u32 {
        while self.0[x as usize] != x {
            let parent = self.0[x as usize];
            self.0[x as usize] = self.0[parent as usize];
            x = parent;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.0[hi as usize] = lo;
        }
    }
}

/// Neighbour offsets that precede a voxel in raster order.
fn backward_offsets(c: Connectivity) -> Vec<(isize, isize, isize)> {
    let mut out = Vec::new();
    for dz in -1..=0isize {
        for dy in -1..=1isize {
            for dx in -1..=1isize {
                let before = dz < 0 || (dz == 0 && (dy < 0 || (dy == 0 && dx < 0)));
                if !before {
                    continue;
                }
                let manhattan = dx.abs() + dy.abs() + dz.abs();
                if c == Connectivity::Face && manhattan != 1 {
                    continue;
                }
                out.push((dx, dy, dz));
            }
        }
    }
    out
}

/// Two-pass union-find labelling.
pub fn lesion_components(mask: &Mask3, connectivity: Connectivity) -> Components {
    let [nx, ny, nz] = mask.dims();
    let offsets = backward_offsets(connectivity);
    let mut provisional = vec![0u32; mask.data().len()];
    let mut uf = UnionFind(vec![0]);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = mask.index(x, y, z);
                if !mask.data()[i] {
                    continue;
                }
                let mut label = 0u32;
                for &(dx, dy, dz) in &offsets {
                    let (xx, yy, zz) = (x as isize + dx, y as isize + dy, z as isize + dz);
                    if xx < 0 || yy < 0 || zz < 0 || xx >= nx as isize || yy >= ny as isize {
                        continue;
                    }
                    let j = mask.index(xx as usize, yy as usize, zz as usize);
                    let l = provisional[j];
                    if l == 0 {
                        continue;
                    }
                    if label == 0 {
                        label = l;
                    } else {
                        uf.union(label, l);
                    }
                }
                if label == 0 {
                    label = uf.0.len() as u32;
                    uf.0.push(label);
                }
                provisional[i] = label;
            }
        }
    }
    let mut dense = vec![0u32; uf.0.len()];
    let mut count = 0;
    let labels = provisional
        .iter()
        .map(|&l| {
            if l == 0 {
                return 0;
            }
            let root = uf.find(l) as usize;
            if dense[root] == 0 {
                count += 1;
                dense[root] = count as u32;
            }
            dense[root]
        })
        .collect();
    Components { labels, count }
}

/// Fraction of components of `of` that share at least one voxel with `by`.
fn hit_fraction(of: &Components, by: &Mask3) -> Option<f64> {
    if of.count == 0 {
        return None;
    }
    let mut hit = vec![false; of.count + 1];
    for (&l, &b) in of.labels.iter().zip(by.data()) {
        if l > 0 && b {
            hit[l as usize] = true;
        }
    }
    Some(hit.iter().filter(|&&h| h).count() as f64 / of.count as f64)
}

/// Fraction of reference lesions touched by the prediction.
pub fn lesion_recall(pred: &Mask3, gt: &Mask3) -> Result<f64> {
    same_shape("lesion_recall", pred, gt)?;
    hit_fraction(&lesion_components(gt, Connectivity::Full), pred).ok_or(Error::Undefined("lesion_recall"))
}

/// Harmonic mean of lesion recall and lesion precision (predicted lesions
/// touching the reference). An empty prediction has precision 0.
pub fn lesion_f1(pred: &Mask3, gt: &Mask3) -> Result<f64> {
    let recall = lesion_recall(pred, gt)?;
    let precision = hit_fraction(&lesion_components(pred, Connectivity::Full), gt).unwrap_or(0.0);
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}
