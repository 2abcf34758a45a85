//! 2D resizing in the style of the common scientific-imaging default:
//! Gaussian anti-alias prefilter on downsampled axes, then bilinear
//! interpolation with pixel-centre alignment. Labels use nearest neighbour.

/// Sigma used to prefilter an axis shrunk by `factor` (> 1).
fn antialias_sigma(factor: f64) -> f64 {
    ((factor - 1.0) / 2.0).max(0.0)
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma + 0.5) as usize;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let x = i as f64 - radius as f64;
            (-0.5 * x * x / (sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Mirror an out-of-range index back into `0..n` (half-sample symmetric).
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// Separable Gaussian blur with reflective borders; a zero sigma skips that axis.
pub fn gaussian_blur(src: &[f32], rows: usize, cols: usize, sigma_r: f64, sigma_c: f64) -> Vec<f32> {
    let mut buf: Vec<f64> = src.iter().map(|&v| v as f64).collect();
    if sigma_c > 0.0 {
        let k = gaussian_kernel(sigma_c);
        let rad = (k.len() / 2) as isize;
        let mut out = vec![0.0; buf.len()];
        for r in 0..rows {
            let row = &buf[r * cols..(r + 1) * cols];
            for c in 0..cols {
                let mut acc = 0.0;
                for (j, w) in k.iter().enumerate() {
                    acc += w * row[reflect(c as isize + j as isize - rad, cols)];
                }
                out[r * cols + c] = acc;
            }
        }
        buf = out;
    }
    if sigma_r > 0.0 {
        let k = gaussian_kernel(sigma_r);
        let rad = (k.len() / 2) as isize;
        let mut out = vec![0.0; buf.len()];
        for r in 0..rows {
            for (j, w) in k.iter().enumerate() {
                let sr = reflect(r as isize + j as isize - rad, rows);
                let src_row = &buf[sr * cols..(sr + 1) * cols];
                let dst = &mut out[r * cols..(r + 1) * cols];
                for (d, s) in dst.iter_mut().zip(src_row) {
                    *d += w * s;
                }
            }
        }
        buf = out;
    }
    buf.into_iter().map(|v| v as f32).collect()
}

/// Source coordinate of output index `i` and the two neighbouring taps.
#[inline]
fn taps(i: usize, scale: f64, n_src: usize) -> (usize, usize, f64) {
    let x = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_src - 1) as f64);
    let x0 = x.floor() as usize;
    let x1 = (x0 + 1).min(n_src - 1);
    (x0, x1, x - x0 as f64)
}

/// Bilinear resize with optional anti-aliasing on downsampled axes.
pub fn resize_linear(src: &[f32], rows: usize, cols: usize, out_rows: usize, out_cols: usize, anti_alias: bool) -> Vec<f32> {
    assert_eq!(src.len(), rows * cols, "raster length");
    if rows == out_rows && cols == out_cols {
        return src.to_vec();
    }
    let fr = rows as f64 / out_rows as f64;
    let fc = cols as f64 / out_cols as f64;
    let filtered;
    let src = if anti_alias && (fr > 1.0 || fc > 1.0) {
        filtered = gaussian_blur(src, rows, cols, antialias_sigma(fr), antialias_sigma(fc));
        &filtered[..]
    } else {
        src
    };
    let col_taps: Vec<_> = (0..out_cols).map(|c| taps(c, fc, cols)).collect();
    let mut out = Vec::with_capacity(out_rows * out_cols);
    for r in 0..out_rows {
        let (r0, r1, wr) = taps(r, fr, rows);
        let row0 = &src[r0 * cols..(r0 + 1) * cols];
        let row1 = &src[r1 * cols..(r1 + 1) * cols];
        for &(c0, c1, wc) in &col_taps {
            let top = row0[c0] as f64 * (1.0 - wc) + row0[c1] as f64 * wc;
            let bot = row1[c0] as f64 * (1.0 - wc) + row1[c1] as f64 * wc;
            out.push((top * (1.0 - wr) + bot * wr) as f32);
        }
    }
    out
}

/// Nearest-neighbour resize with pixel-centre alignment.
pub fn resize_nearest<T: Copy>(src: &[T], rows: usize, cols: usize, out_rows: usize, out_cols: usize) -> Vec<T> {
    assert_eq!(src.len(), rows * cols, "raster length");
    let idx = |i: usize, n_out: usize, n_src: usize| (((i as f64 + 0.5) * n_src as f64 / n_out as f64) as usize).min(n_src - 1);
    let col_idx: Vec<usize> = (0..out_cols).map(|c| idx(c, out_cols, cols)).collect();
    let mut out = Vec::with_capacity(out_rows * out_cols);
    for r in 0..out_rows {
        let sr = idx(r, out_rows, rows);
        out.extend(col_idx.iter().map(|&sc| src[sr * cols + sc]));
    }
    out
}
