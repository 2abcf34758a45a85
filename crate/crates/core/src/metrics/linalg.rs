//! Dense f64 matrices and the symmetric eigensolver behind the matrix
//! square root, FID and PCA.

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "Matrix::from_vec",
                dim: "elements",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged rows"));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        gemm(self, false, other, false)
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    /// Largest `|a_ij − a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in i + 1..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn symmetrized(&self) -> Self {
        let mut s = self.clone();
        for i in 0..self.rows {
            for j in i + 1..self.cols {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        s
    }

    pub fn add_diag(&mut self, v: f64) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += v;
        }
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// `op(a) · op(b)` where `op` optionally transposes.
pub fn gemm(a: &Matrix, ta: bool, b: &Matrix, tb: bool) -> Result<Matrix> {
    let (m, k) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (k2, n) = if tb { (b.cols, b.rows) } else { (b.rows, b.cols) };
    if k != k2 {
        return Err(Error::Shape {
            op: "matmul",
            dim: "inner",
            expected: k,
            actual: k2,
        });
    }
    let mut c = Matrix::zeros(m, n);
    let (ars, acs) = if ta { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (brs, bcs) = if tb { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    if m > 0 && n > 0 && k > 0 {
        // SAFETY: strides describe the row-major buffers of `a`, `b`, `c`,
        // whose lengths match the (m, k), (k, n), (m, n) shapes checked above.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.data.as_ptr(),
                ars,
                acs,
                b.data.as_ptr(),
                brs,
                bcs,
                0.0,
                c.data.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
    Ok(c)
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    /// Ascending.
    pub values: Vec<f64>,
    /// Column `j` is the eigenvector of `values[j]`; `None` when only
    /// eigenvalues were requested.
    pub vectors: Option<Matrix>,
}

/// Householder tridiagonalization followed by implicit QL iterations.
/// Only the lower triangle of `a` is read after symmetrization checks.
pub fn symmetric_eigen(a: &Matrix, want_vectors: bool) -> Result<SymmetricEigen> {
    if !a.is_square() {
        return Err(Error::Shape {
            op: "symmetric_eigen",
            dim: "cols",
            expected: a.rows,
            actual: a.cols,
        });
    }
    let n = a.rows;
    if n == 0 {
        return Ok(SymmetricEigen {
            values: Vec::new(),
            vectors: want_vectors.then(|| Matrix::zeros(0, 0)),
        });
    }
    if a.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    let mut v = a.symmetrized();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tred2(n, &mut v, &mut d, &mut e);
    tql2(n, &mut v, &mut d, &mut e, want_vectors)?;
    Ok(SymmetricEigen {
        values: d,
        vectors: want_vectors.then_some(v),
    })
}

fn tred2(n: usize, v: &mut Matrix, d: &mut [f64], e: &mut [f64]) {
    for j in 0..n {
        d[j] = v[(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for k in 0..i {
            scale += d[k].abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[(i - 1, j)];
                v[(i, j)] = 0.0;
                v[(j, i)] = 0.0;
            }
        } else {
            for k in 0..i {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for x in e.iter_mut().take(i) {
                *x = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v[(j, i)] = f;
                g = e[j] + v[(j, j)] * f;
                for k in j + 1..i {
                    g += v[(k, j)] * d[k];
                    e[k] += v[(k, j)] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[(i - 1, j)];
                v[(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }
    for i in 0..n - 1 {
        v[(n - 1, i)] = v[(i, i)];
        v[(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[(k, i + 1)] * v[(k, j)];
                }
                for k in 0..=i {
                    v[(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[(n - 1, j)];
        v[(n - 1, j)] = 0.0;
    }
    v[(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

fn tql2(n: usize, v: &mut Matrix, d: &mut [f64], e: &mut [f64], want_vectors: bool) -> Result<()> {
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > 200 {
                    return Err(Error::invalid("eigenvalue iteration did not converge"));
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for x in d.iter_mut().skip(l + 2) {
                    *x -= h;
                }
                f += h;
                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    if want_vectors {
                        for k in 0..n {
                            let h = v[(k, i + 1)];
                            v[(k, i + 1)] = s * v[(k, i)] + c * h;
                            v[(k, i)] = c * v[(k, i)] - s * h;
                        }
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    // selection sort keeps vectors paired with values
    for i in 0..n.saturating_sub(1) {
        let mut k = i;
        let mut p = d[i];
        for (j, &dj) in d.iter().enumerate().skip(i + 1) {
            if dj < p {
                k = j;
                p = dj;
            }
        }
        if k != i {
            d[k] = d[i];
            d[i] = p;
            if want_vectors {
                for j in 0..n {
                    let t = v[(j, i)];
                    v[(j, i)] = v[(j, k)];
                    v[(j, k)] = t;
                }
            }
        }
    }
    Ok(())
}

/// Absolute asymmetry tolerated by [`matrix_sqrt`].
pub const SYMMETRY_TOL: f64 = 1e-8;
/// Eigenvalues down to `−PSD_TOL · max(1, λ_max)` are clamped to zero.
pub const PSD_TOL: f64 = 1e-8;

fn clamp_psd(values: &[f64]) -> Result<Vec<f64>> {
    let top = values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    values
        .iter()
        .map(|&l| {
            if l < -PSD_TOL * top {
                Err(Error::invalid(format!("matrix is not positive semidefinite (eigenvalue {l:e})")))
            } else {
                Ok(l.max(0.0))
            }
        })
        .collect()
}

/// Principal square root of a symmetric PSD matrix by spectral decomposition.
pub fn matrix_sqrt(a: &Matrix) -> Result<Matrix> {
    let asym = a.asymmetry();
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(asym));
    }
    let eig = symmetric_eigen(a, true)?;
    let roots: Vec<f64> = clamp_psd(&eig.values)?.into_iter().map(f64::sqrt).collect();
    let q = eig.vectors.expect("vectors requested");
    // Q · diag(√λ) · Qᵀ
    let mut qs = q.clone();
    for i in 0..qs.rows {
        for (j, r) in roots.iter().enumerate() {
            qs[(i, j)] *= r;
        }
    }
    Ok(gemm(&qs, false, &q, true)?.symmetrized())
}

/// `Σ √λ_i` over the eigenvalues of a symmetric PSD matrix.
pub fn trace_sqrt(a: &Matrix) -> Result<f64> {
    let eig = symmetric_eigen(a, false)?;
    Ok(clamp_psd(&eig.values)?.into_iter().map(f64::sqrt).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_psd(n: usize, rank: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let x = Matrix::from_vec(rank, n, (0..rank * n).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap();
        gemm(&x, true, &x, false).unwrap()
    }

    #[test]
    fn eigen_matches_nalgebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [1, 2, 3, 7, 20] {
            let a = random_psd(n, n + 2, &mut rng);
            let mut b = a.clone();
            b.add_diag(-0.3);
            let ours = symmetric_eigen(&b, true).unwrap();
            let na = nalgebra::DMatrix::from_row_slice(n, n, &b.data);
            let mut theirs: Vec<f64> = na.symmetric_eigen().eigenvalues.iter().copied().collect();
            theirs.sort_by(f64::total_cmp);
            for (x, y) in ours.values.iter().zip(&theirs) {
                assert!((x - y).abs() < 1e-10, "{x} vs {y}");
            }
            // A·v = λ·v
            let q = ours.vectors.unwrap();
            let aq = b.matmul(&q).unwrap();
            for j in 0..n {
                for i in 0..n {
                    assert!((aq[(i, j)] - ours.values[j] * q[(i, j)]).abs() < 1e-10);
                }
            }
            let eigvals_only = symmetric_eigen(&b, false).unwrap().values;
            for (x, y) in eigvals_only.iter().zip(&ours.values) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sqrt_examples() {
        assert_eq!(matrix_sqrt(&Matrix::identity(4)).unwrap(), Matrix::identity(4));
        let s = matrix_sqrt(&Matrix::from_diag(&[4.0, 9.0])).unwrap();
        assert!(s.sub(&Matrix::from_diag(&[2.0, 3.0])).frobenius() < 1e-12);
        let mut bad = Matrix::identity(2);
        bad[(0, 1)] = 1e-6;
        assert!(matches!(matrix_sqrt(&bad), Err(Error::NotSymmetric(_))));
        assert!(matrix_sqrt(&Matrix::from_diag(&[1.0, -0.5])).is_err());
    }

    #[test]
    fn sqrt_reconstructs_random_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for i in 0..100 {
            let rank = if i % 3 == 0 { 8 } else { 40 };
            let a = random_psd(32, rank, &mut rng);
            let s = matrix_sqrt(&a).unwrap();
            let err = s.matmul(&s).unwrap().sub(&a).frobenius();
            assert!(err < 1e-6, "case {i}: {err}");
        }
    }

    #[test]
    fn transposed_products() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let ata = gemm(&a, true, &a, false).unwrap();
        assert_eq!(ata, a.transpose().matmul(&a).unwrap());
        let aat = gemm(&a, false, &a, true).unwrap();
        assert_eq!(aat.data, vec![14.0, 32.0, 32.0, 77.0]);
        assert!(a.matmul(&a).is_err());
    }

    proptest! {
        #[test]
        fn trace_sqrt_equals_trace_of_root(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_psd(6, 4, &mut rng);
            let t = trace_sqrt(&a).unwrap();
            prop_assert!((t - matrix_sqrt(&a).unwrap().trace()).abs() < 1e-9);
        }
    }
}
