//! Percentile Hausdorff distance between mask boundaries via an exact
//! Euclidean distance transform.

use crate::error::{Error, Result};
use crate::imaging::volume::Mask3;

/// Default percentile of the modified Hausdorff distance.
pub const DEFAULT_PERCENTILE: f64 = 95.0;

/// Voxels of `m` with a face neighbour outside the mask. Leaving the grid
/// counts as outside, except along axes of extent 1 (2D masks).
pub fn boundary(m: &Mask3) -> Mask3 {
    let [nx, ny, nz] = m.dims();
    let mut out = Mask3::empty(m.dims());
    let dims = [nx, ny, nz];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if !m.get(x, y, z) {
                    continue;
                }
                let p = [x, y, z];
                let mut edge = false;
                for axis in 0..3 {
                    if dims[axis] == 1 {
                        continue;
                    }
                    for step in [-1isize, 1] {
                        let c = p[axis] as isize + step;
                        if c < 0 || c >= dims[axis] as isize {
                            edge = true;
                            continue;
                        }
                        let mut q = p;
                        q[axis] = c as usize;
                        if !m.get(q[0], q[1], q[2]) {
                            edge = true;
                        }
                    }
                }
                if edge {
                    let i = m.index(x, y, z);
                    out.data_mut()[i] = true;
                }
            }
        }
    }
    out
}

/// Lower envelope of parabolas `f(p) + (x_q − x_p)²` along one line with
/// sample positions `p · spacing`.
fn edt_1d(f: &[f64], spacing: f64, out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    v.clear();
    z.clear();
    let pos = |i: usize| i as f64 * spacing;
    for (q, &fq) in f.iter().enumerate() {
        if !fq.is_finite() {
            continue;
        }
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let s = ((fq + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
                    if s <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < pos(q) {
            k += 1;
        }
        let d = pos(q) - pos(v[k]);
        *o = d * d + f[v[k]];
    }
}

/// Squared Euclidean distance (in spacing units) from every voxel to the
/// nearest set voxel of `features`; infinite when `features` is empty.
pub fn squared_edt(features: &Mask3, spacing: [f64; 3]) -> Vec<f64> {
    let dims = features.dims();
    let mut d: Vec<f64> = features.data().iter().map(|&b| if b { 0.0 } else { f64::INFINITY }).collect();
    let (mut v, mut z) = (Vec::new(), Vec::new());
    let stride = [1, dims[0], dims[0] * dims[1]];
    for axis in 0..3 {
        let n = dims[axis];
        if n == 1 {
            continue;
        }
        let mut line = vec![0.0; n];
        let mut out = vec![0.0; n];
        let others: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
        for a in 0..dims[others[0]] {
            for b in 0..dims[others[1]] {
                let base = a * stride[others[0]] + b * stride[others[1]];
                for (i, l) in line.iter_mut().enumerate() {
                    *l = d[base + i * stride[axis]];
                }
                edt_1d(&line, spacing[axis], &mut out, &mut v, &mut z);
                for (i, o) in out.iter().enumerate() {
                    d[base + i * stride[axis]] = *o;
                }
            }
        }
    }
    d
}

/// Linear-interpolation percentile (`p` in 0..=100) of unsorted values.
pub fn percentile(values: &mut [f64], p: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let rank = p / 100.0 * (values.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    values[lo] + (values[hi] - values[lo]) * (rank - lo as f64)
}

fn directed(from: &Mask3, to_edt: &[f64]) -> Vec<f64> {
    from.data()
        .iter()
        .zip(to_edt)
        .filter(|(b, _)| **b)
        .map(|(_, d)| d.sqrt())
        .collect()
}

/// Symmetric percentile Hausdorff distance in millimetres; `percentile`
/// 100 gives the classical maximum.
pub fn hausdorff(pred: &Mask3, gt: &Mask3, spacing: [f64; 3], percentile_p: f64) -> Result<f64> {
    if pred.dims() != gt.dims() {
        return Err(Error::invalid("hausdorff masks differ in shape"));
    }
    if !(0.0..=100.0).contains(&percentile_p) {
        return Err(Error::invalid(format!("percentile {percentile_p} outside 0..=100")));
    }
    if pred.count() == 0 || gt.count() == 0 {
        return Err(Error::Undefined("hausdorff"));
    }
    let (bp, bg) = (boundary(pred), boundary(gt));
    let mut pg = directed(&bp, &squared_edt(&bg, spacing));
    let mut gp = directed(&bg, &squared_edt(&bp, spacing));
    Ok(percentile(&mut pg, percentile_p).max(percentile(&mut gp, percentile_p)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m2(rows: usize, cols: usize, on: &[(usize, usize)]) -> Mask3 {
        let mut d = vec![false; rows * cols];
        for &(r, c) in on {
            d[r * cols + c] = true;
        }
        Mask3::from_2d(rows, cols, d).unwrap()
    }

    /// Independent reference: boundary by explicit 4-neighbour test, all
    /// pairwise distances, nearest-rank interpolation written out.
    fn oracle(p: &[bool], g: &[bool], n: usize, q: f64) -> f64 {
        let at = |m: &[bool], r: isize, c: isize| r >= 0 && c >= 0 && r < n as isize && c < n as isize && m[r as usize * n + c as usize];
        let edge = |m: &[bool]| -> Vec<(f64, f64)> {
            let mut out = Vec::new();
            for r in 0..n as isize {
                for c in 0..n as isize {
                    if at(m, r, c) && !(at(m, r - 1, c) && at(m, r + 1, c) && at(m, r, c - 1) && at(m, r, c + 1)) {
                        out.push((r as f64, c as f64));
                    }
                }
            }
            out
        };
        let (ep, eg) = (edge(p), edge(g));
        let dir = |a: &[(f64, f64)], b: &[(f64, f64)]| -> f64 {
            let mut d: Vec<f64> = a
                .iter()
                .map(|x| b.iter().map(|y| ((x.0 - y.0).powi(2) + (x.1 - y.1).powi(2)).sqrt()).fold(f64::INFINITY, f64::min))
                .collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let pos = q / 100.0 * (d.len() as f64 - 1.0);
            let i = pos as usize;
            if i + 1 >= d.len() {
                d[d.len() - 1]
            } else {
                d[i] * (1.0 - (pos - i as f64)) + d[i + 1] * (pos - i as f64)
            }
        };
        dir(&ep, &eg).max(dir(&eg, &ep))
    }

    #[test]
    fn examples() {
        let a = m2(5, 5, &[(1, 1)]);
        let b = m2(5, 5, &[(1, 4)]);
        assert_eq!(hausdorff(&a, &b, [1.0; 3], 100.0).unwrap(), 3.0);
        assert_eq!(hausdorff(&a, &a, [1.0; 3], 95.0).unwrap(), 0.0);
        assert_eq!(hausdorff(&a, &b, [2.0, 1.0, 1.0], 100.0).unwrap(), 6.0);
        assert!(matches!(hausdorff(&a, &m2(5, 5, &[]), [1.0; 3], 95.0), Err(Error::Undefined(_))));
    }

    #[test]
    fn matches_all_pairs_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 32;
        let mut checked = 0;
        while checked < 1000 {
            let blobs = |rng: &mut ChaCha8Rng| -> Vec<bool> {
                let mut m = vec![false; n * n];
                for _ in 0..rng.random_range(1..4) {
                    let (r0, c0) = (rng.random_range(0..n), rng.random_range(0..n));
                    let (h, w) = (rng.random_range(1..10), rng.random_range(1..10));
                    for r in r0..(r0 + h).min(n) {
                        for c in c0..(c0 + w).min(n) {
                            m[r * n + c] = rng.random::<f64>() < 0.85;
                        }
                    }
                }
                m
            };
            let (p, g) = (blobs(&mut rng), blobs(&mut rng));
            if !p.contains(&true) || !g.contains(&true) {
                continue;
            }
            let q = [95.0, 100.0][checked % 2];
            let got = hausdorff(&Mask3::from_2d(n, n, p.clone()).unwrap(), &Mask3::from_2d(n, n, g.clone()).unwrap(), [1.0; 3], q).unwrap();
            let want = oracle(&p, &g, n, q);
            assert!((got - want).abs() < 1e-9, "case {checked}: {got} vs {want}");
            checked += 1;
        }
    }

    #[test]
    fn edt_matches_brute_force_in_3d() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let dims = [7, 5, 4];
        let sp = [0.7, 1.3, 3.0];
        for _ in 0..30 {
            let data: Vec<bool> = (0..140).map(|_| rng.random::<f64>() < 0.05).collect();
            let m = Mask3::new(dims, data).unwrap();
            let d = squared_edt(&m, sp);
            for (i, &got) in d.iter().enumerate() {
                let (x, y, z) = (i % 7, (i / 7) % 5, i / 35);
                let mut best = f64::INFINITY;
                for (j, &b) in m.data().iter().enumerate() {
                    if b {
                        let (a, bb, c) = (j % 7, (j / 7) % 5, j / 35);
                        let dd = ((x as f64 - a as f64) * sp[0]).powi(2) + ((y as f64 - bb as f64) * sp[1]).powi(2) + ((z as f64 - c as f64) * sp[2]).powi(2);
                        best = best.min(dd);
                    }
                }
                assert!((got - best).abs() < 1e-9 || (got.is_infinite() && best.is_infinite()));
            }
        }
    }

    #[test]
    fn invariant_under_translation() {
        let a = m2(12, 12, &[(2, 2), (2, 3), (3, 2), (5, 7)]);
        let b = m2(12, 12, &[(2, 4), (4, 4), (6, 6)]);
        let shift = |m: &Mask3| {
            let mut d = vec![false; 144];
            for (i, &v) in m.data().iter().enumerate() {
                if v {
                    d[i + 12 * 3 + 2] = true;
                }
            }
            Mask3::from_2d(12, 12, d).unwrap()
        };
        for q in [95.0, 100.0] {
            assert_eq!(hausdorff(&a, &b, [1.0; 3], q).unwrap(), hausdorff(&shift(&a), &shift(&b), [1.0; 3], q).unwrap());
        }
    }
}
