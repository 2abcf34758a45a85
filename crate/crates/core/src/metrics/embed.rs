//! PCA reduction and exact t-SNE for feature visualisation.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::linalg::{gemm, symmetric_eigen, Matrix};
use crate::error::{Error, Result};

/// Principal-component projection of a data matrix.
#[derive(Clone, Debug)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `(dim, k)`, orthonormal columns.
    pub components: Matrix,
    /// Variance along each component, descending.
    pub explained_variance: Vec<f64>,
    /// `(n, k)` coordinates of the input rows.
    pub scores: Matrix,
}

impl Pca {
    /// Maps scores back into the input space.
    pub fn reconstruct(&self) -> Result<Matrix> {
        let mut out = gemm(&self.scores, false, &self.components, true)?;
        for i in 0..out.rows {
            for (j, m) in self.mean.iter().enumerate() {
                out[(i, j)] += m;
            }
        }
        Ok(out)
    }
}

/// Projects rows of `x` onto their top `k` principal directions. The
/// eigenproblem is solved on whichever of the Gram or covariance matrix is
/// smaller.
pub fn pca(x: &Matrix, k: usize) -> Result<Pca> {
    let (n, d) = (x.rows, x.cols);
    if n < 2 {
        return Err(Error::invalid("PCA needs at least 2 rows"));
    }
    if k == 0 || k > (n - 1).min(d) {
        return Err(Error::invalid(format!("PCA rank {k} outside 1..={}", (n - 1).min(d))));
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v / n as f64;
        }
    }
    let mut xc = x.clone();
    for i in 0..n {
        for (j, m) in mean.iter().enumerate() {
            xc[(i, j)] -= m;
        }
    }
    let mut components = Matrix::zeros(d, k);
    let mut explained = Vec::with_capacity(k);
    if n <= d {
        // Xc Xcᵀ u = λ u  ⇒  direction Xcᵀ u / √λ.
        let eig = symmetric_eigen(&gemm(&xc, false, &xc, true)?.symmetrized(), true)?;
        let u = eig.vectors.expect("vectors requested");
        for c in 0..k {
            let idx = n - 1 - c;
            let lambda = eig.values[idx].max(0.0);
            explained.push(lambda / (n - 1) as f64);
            if lambda <= 0.0 {
                continue;
            }
            let s = lambda.sqrt();
            for j in 0..d {
                let mut acc = 0.0;
                for i in 0..n {
                    acc += xc[(i, j)] * u[(i, idx)];
                }
                components[(j, c)] = acc / s;
            }
        }
    } else {
        let eig = symmetric_eigen(&gemm(&xc, true, &xc, false)?.symmetrized(), true)?;
        let v = eig.vectors.expect("vectors requested");
        for c in 0..k {
            let idx = d - 1 - c;
            explained.push(eig.values[idx].max(0.0) / (n - 1) as f64);
            for j in 0..d {
                components[(j, c)] = v[(j, idx)];
            }
        }
    }
    let scores = gemm(&xc, false, &components, false)?;
    Ok(Pca {
        mean,
        components,
        explained_variance: explained,
        scores,
    })
}

/// Scores of the top `k` principal directions, `(n, k)`.
pub fn pca_reduce(x: &Matrix, k: usize) -> Result<Matrix> {
    Ok(pca(x, k)?.scores)
}

/// Rows of `conditional` sum to 1; `entropy[i]` is the Shannon entropy
/// (nats) reached for row `i`.
#[derive(Clone, Debug)]
pub struct Affinities {
    pub conditional: Matrix,
    pub entropy: Vec<f64>,
}

/// Gaussian conditionals whose entropies match `ln(perplexity)`, found by
/// bisection on the precision of each row.
pub fn perplexity_affinities(dist2: &Matrix, perplexity: f64) -> Result<Affinities> {
    let n = dist2.rows;
    if perplexity <= 0.0 || perplexity >= n as f64 {
        return Err(Error::invalid(format!("perplexity {perplexity} infeasible for {n} points")));
    }
    let target = perplexity.ln();
    let mut p = Matrix::zeros(n, n);
    let mut entropy = vec![0.0; n];
    let mut row = vec![0.0; n];
    for i in 0..n {
        let d_min = (0..n).filter(|&j| j != i).map(|j| dist2[(i, j)]).fold(f64::INFINITY, f64::min);
        let eval = |beta: f64, row: &mut [f64]| -> f64 {
            let mut sum = 0.0;
            let mut weighted = 0.0;
            for j in 0..n {
                if j == i {
                    row[j] = 0.0;
                    continue;
                }
                let shifted = dist2[(i, j)] - d_min;
                let w = (-beta * shifted).exp();
                row[j] = w;
                sum += w;
                weighted += w * shifted;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
            sum.ln() + beta * weighted / sum
        };
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        let mut beta = 1.0;
        let mut h = eval(beta, &mut row);
        for _ in 0..200 {
            if (h - target).abs() < 1e-10 {
                break;
            }
            if h > target {
                lo = beta;
                beta = if hi.is_finite() { 0.5 * (lo + hi) } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = 0.5 * (lo + hi);
            }
            h = eval(beta, &mut row);
        }
        entropy[i] = h;
        for j in 0..n {
            p[(i, j)] = row[j];
        }
    }
    Ok(Affinities { conditional: p, entropy })
}

#[derive(Clone, Debug)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            seed: 0,
        }
    }
}

/// Two-dimensional coordinates with a domain tag per input row.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingResult {
    pub coords: Vec<[f64; 2]>,
    pub tags: Vec<String>,
    /// KL divergence after each iteration.
    pub kl: Vec<f64>,
}

impl EmbeddingResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y,domain\n");
        for (c, t) in self.coords.iter().zip(&self.tags) {
            let _ = writeln!(s, "{},{},{}", c[0], c[1], t);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn pairwise_sq(x: &Matrix) -> Result<Matrix> {
    let g = gemm(x, false, x, true)?;
    let n = x.rows;
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            d[(i, j)] = (g[(i, i)] + g[(j, j)] - 2.0 * g[(i, j)]).max(0.0);
        }
        d[(i, i)] = 0.0;
    }
    Ok(d)
}

/// Exact t-SNE of the rows of `x` (no tree approximation).
pub fn tsne_embed(x: &Matrix, tags: &[String], cfg: &TsneConfig) -> Result<EmbeddingResult> {
    let n = x.rows;
    if tags.len() != n {
        return Err(Error::invalid(format!("{} tags for {n} rows", tags.len())));
    }
    if (n as f64) <= 3.0 * cfg.perplexity {
        return Err(Error::invalid(format!(
            "perplexity {} needs more than {} points, got {n}",
            cfg.perplexity,
            3.0 * cfg.perplexity
        )));
    }
    let cond = perplexity_affinities(&pairwise_sq(x)?, cfg.perplexity)?.conditional;
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = ((cond[(i, j)] + cond[(j, i)]) / (2.0 * n as f64)).max(1e-12);
        }
        p[i * n + i] = 0.0;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = Normal::new(0.0, 1e-2).expect("valid normal");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [init.sample(&mut rng), init.sample(&mut rng)]).collect();
    let mut vel = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut num = vec![0.0; n * n];
    let mut kl = Vec::with_capacity(cfg.iterations);

    for it in 0..cfg.iterations {
        let exag = if it < cfg.exaggeration_iters { cfg.exaggeration } else { 1.0 };
        let momentum = if it < cfg.exaggeration_iters { 0.5 } else { 0.8 };
        let mut z = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    num[i * n + j] = 0.0;
                    continue;
                }
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                let v = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = v;
                z += v;
            }
        }
        for i in 0..n {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = num[i * n + j] / z;
                let m = (exag * p[i * n + j] - q) * num[i * n + j];
                g[0] += 4.0 * m * (y[i][0] - y[j][0]);
                g[1] += 4.0 * m * (y[i][1] - y[j][1]);
            }
            for a in 0..2 {
                gains[i][a] = if (g[a] > 0.0) != (vel[i][a] > 0.0) {
                    gains[i][a] + 0.2
                } else {
                    (gains[i][a] * 0.8).max(0.01)
                };
                vel[i][a] = momentum * vel[i][a] - cfg.learning_rate * gains[i][a] * g[a];
            }
        }
        let mut centre = [0.0; 2];
        for (yi, vi) in y.iter_mut().zip(&vel) {
            yi[0] += vi[0];
            yi[1] += vi[1];
            centre[0] += yi[0] / n as f64;
            centre[1] += yi[1] / n as f64;
        }
        for yi in &mut y {
            yi[0] -= centre[0];
            yi[1] -= centre[1];
        }
        kl.push(kl_divergence(&p, &y));
    }
    Ok(EmbeddingResult {
        coords: y,
        tags: tags.to_vec(),
        kl,
    })
}

fn kl_divergence(p: &[f64], y: &[[f64; 2]]) -> f64 {
    let n = y.len();
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let d = (y[i][0] - y[j][0]).powi(2) + (y[i][1] - y[j][1]).powi(2);
                z += 1.0 / (1.0 + d);
            }
        }
    }
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            let pij = p[i * n + j];
            if i != j && pij > 0.0 {
                let d = (y[i][0] - y[j][0]).powi(2) + (y[i][1] - y[j][1]).powi(2);
                kl += pij * (pij / (1.0 / (1.0 + d) / z)).ln();
            }
        }
    }
    kl
}
