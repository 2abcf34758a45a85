//! Fréchet distance between Gaussian fits of feature sets.

use super::features::FeatureExtractor;
use super::linalg::{gemm, matrix_sqrt, symmetric_eigen, trace_sqrt, Matrix};
use crate::error::{Error, Result};
use crate::imaging::manifest::{DatasetManifest, LabelAccess};
use crate::imaging::volume::Raster;

/// Ridge added to covariances estimated from fewer samples than dimensions.
pub const SHRINKAGE: f64 = 1e-6;

/// Mean and unbiased covariance of a feature set.
#[derive(Clone, Debug)]
pub struct FeatureStats {
    /// Feature length.
    pub tap: usize,
    pub n: usize,
    pub mean: Vec<f64>,
    /// Includes `shrinkage · I`.
    pub cov: Matrix,
    pub shrinkage: f64,
    /// Centered samples `(n, tap)`, kept so FID can work in the sample span.
    pub centered: Option<Matrix>,
}

impl FeatureStats {
    /// Statistics of the rows of `features`.
    pub fn from_features(features: &Matrix) -> Result<Self> {
        let (n, d) = (features.rows, features.cols);
        if n < 2 {
            return Err(Error::invalid(format!("feature statistics need at least 2 samples, got {n}")));
        }
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(features.row(i)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut centered = features.clone();
        for i in 0..n {
            for (j, m) in mean.iter().enumerate() {
                centered[(i, j)] -= m;
            }
        }
        let mut cov = gemm(&centered, true, &centered, false)?;
        for v in &mut cov.data {
            *v /= (n - 1) as f64;
        }
        let mut cov = cov.symmetrized();
        let shrinkage = if n < d { SHRINKAGE } else { 0.0 };
        cov.add_diag(shrinkage);
        Ok(Self {
            tap: d,
            n,
            mean,
            cov,
            shrinkage,
            centered: Some(centered),
        })
    }

    /// Statistics given directly as moments (no samples retained).
    pub fn from_moments(mean: Vec<f64>, cov: Matrix, n: usize) -> Result<Self> {
        if cov.rows != mean.len() || cov.cols != mean.len() {
            return Err(Error::invalid("covariance does not match the mean's length"));
        }
        Ok(Self {
            tap: mean.len(),
            n,
            mean,
            cov,
            shrinkage: 0.0,
            centered: None,
        })
    }
}

/// Extracts features of `images` at `tap` and fits their statistics.
pub fn image_stats(fx: &FeatureExtractor, images: &[&Raster], tap: usize) -> Result<FeatureStats> {
    if images.len() < 2 {
        return Err(Error::invalid(format!("feature statistics need at least 2 images, got {}", images.len())));
    }
    FeatureStats::from_features(&fx.features(images, tap)?)
}

/// Image statistics of every manifest entry (labels are never read).
pub fn feature_stats(m: &DatasetManifest, fx: &FeatureExtractor, tap: usize) -> Result<FeatureStats> {
    let recs = m.load_all(LabelAccess::ImagesOnly)?;
    let imgs: Vec<&Raster> = recs.iter().map(|r| &r.image).collect();
    image_stats(fx, &imgs, tap)
}

/// `|m_a − m_b|² + Tr(C_a + C_b − 2 (C_a^{1/2} C_b C_a^{1/2})^{1/2})`.
pub fn fid(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    if a.tap != b.tap {
        return Err(Error::invalid(format!("FID between taps {} and {}", a.tap, b.tap)));
    }
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y) * (x - y)).sum();
    let trace_term = match (&a.centered, &b.centered) {
        (Some(xa), Some(xb)) if a.tap > a.n + b.n => sample_span_trace(a, xa, b, xb)?,
        _ => {
            let ra = matrix_sqrt(&a.cov)?;
            let inner = ra.matmul(&b.cov)?.matmul(&ra)?;
            a.cov.trace() + b.cov.trace() - 2.0 * trace_sqrt(&inner)?
        }
    };
    let d = mean_term + trace_term;
    Ok(if d < 0.0 && d >= -1e-6 { 0.0 } else { d })
}

/// The trace term evaluated in an orthonormal basis of the pooled sample
/// span. Outside that span both covariances reduce to their shrinkage
/// ridge, which contributes in closed form.
fn sample_span_trace(a: &FeatureStats, xa: &Matrix, b: &FeatureStats, xb: &Matrix) -> Result<f64> {
    let (na, nb, d) = (xa.rows, xb.rows, a.tap);
    let mut y = Matrix::zeros(na + nb, d);
    y.data[..na * d].copy_from_slice(&xa.data);
    y.data[na * d..].copy_from_slice(&xb.data);
    // Gram = Y Yᵀ = V Λ Vᵀ; basis q_i = Yᵀ v_i / √λ_i, and Y q_i = √λ_i v_i.
    let gram = gemm(&y, false, &y, true)?.symmetrized();
    let eig = symmetric_eigen(&gram, true)?;
    let vecs = eig.vectors.expect("vectors requested");
    let top = eig.values.iter().fold(0.0f64, |m, v| m.max(*v));
    let keep: Vec<usize> = (0..eig.values.len()).filter(|&i| eig.values[i] > top * 1e-12 && top > 0.0).collect();
    let r = keep.len();
    // Coordinates of every sample in the basis.
    let mut coords = Matrix::zeros(na + nb, r);
    for (c, &i) in keep.iter().enumerate() {
        let s = eig.values[i].sqrt();
        for row in 0..na + nb {
            coords[(row, c)] = s * vecs[(row, i)];
        }
    }
    let block = |lo: usize, hi: usize, ridge: f64| -> Result<Matrix> {
        let sub = Matrix::from_vec(hi - lo, r, coords.data[lo * r..hi * r].to_vec())?;
        let mut m = gemm(&sub, true, &sub, false)?;
        for v in &mut m.data {
            *v /= (hi - lo - 1) as f64;
        }
        let mut m = m.symmetrized();
        m.add_diag(ridge);
        Ok(m)
    };
    let ma = block(0, na, a.shrinkage)?;
    let mb = block(na, na + nb, b.shrinkage)?;
    let ra = matrix_sqrt(&ma)?;
    let inner = ra.matmul(&mb)?.matmul(&ra)?;
    let outside = (d - r) as f64;
    let tr_a = ma.trace() + outside * a.shrinkage;
    let tr_b = mb.trace() + outside * b.shrinkage;
    let cross = trace_sqrt(&inner)? + outside * (a.shrinkage * b.shrinkage).sqrt();
    Ok(tr_a + tr_b - 2.0 * cross)
}
