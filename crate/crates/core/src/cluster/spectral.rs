//! Spectral clustering: Gaussian affinity, symmetric normalized Laplacian,
//! cyclic Jacobi eigensolver, k-means on the row-normalized embedding.

use rand::RngCore;

use super::{kmeans, sq_dist, Segmentation};
use crate::data_io::FeatureMatrix;
use crate::error::{Result, TsaError};

/// Stop once the off-diagonal Frobenius norm falls below this.
pub const JACOBI_TOLERANCE: f64 = 1e-10;
const JACOBI_MAX_SWEEPS: usize = 100;
/// Added to every off-diagonal affinity so no frame is isolated.
const AFFINITY_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    /// Ascending.
    pub values: Vec<f64>,
    /// `n x n` row-major; column `j` is the eigenvector of `values[j]`.
    pub vectors: Vec<f64>,
}

fn off_diagonal_norm(a: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for p in 0..n {
        for q in 0..n {
            if p != q {
                s += a[p * n + q] * a[p * n + q];
            }
        }
    }
    s.sqrt()
}

/// Eigen-decomposition of a dense symmetric `n x n` matrix by cyclic Jacobi
/// rotations.
pub fn jacobi_eigen(matrix: &[f64], n: usize) -> Result<SymmetricEigen> {
    if matrix.len() != n * n || n == 0 {
        return Err(TsaError::DimensionMismatch(format!(
            "{} entries for a {n}x{n} matrix",
            matrix.len()
        )));
    }
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_diagonal_norm(&a, n) < JACOBI_TOLERANCE {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[x * n + x].total_cmp(&a[y * n + y]).then(x.cmp(&y)));
    let values = order.iter().map(|&j| a[j * n + j]).collect();
    let mut vectors = vec![0.0; n * n];
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[k * n + dst] = v[k * n + src];
        }
    }
    Ok(SymmetricEigen { values, vectors })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// Gaussian affinity with bandwidth equal to the median pairwise distance.
pub fn gaussian_affinity(m: &FeatureMatrix) -> Vec<f64> {
    let n = m.rows();
    let mut d2 = vec![0.0; n * n];
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let d = sq_dist(m.row(i), m.row(j));
            d2[i * n + j] = d;
            d2[j * n + i] = d;
            dists.push(d.sqrt());
        }
    }
    let sigma = if dists.is_empty() { 1.0 } else { median(dists) };
    let sigma = if sigma > 0.0 { sigma } else { 1.0 };
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                a[i * n + j] = (-d2[i * n + j] / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    a
}

pub fn spectral<R: RngCore + ?Sized>(m: &FeatureMatrix, k: usize, rng: &mut R) -> Result<Segmentation> {
    let n = m.rows();
    if k < 2 || k > n {
        return Err(TsaError::InvalidArgument(format!("k = {k} must be in [2, {n}]")));
    }
    if k == n {
        return Segmentation::new((0..n).collect(), n);
    }
    spectral_from_affinity(&gaussian_affinity(m), n, k, rng)
}

/// Clusters a symmetric non-negative affinity (diagonal ignored).
pub fn spectral_from_affinity<R: RngCore + ?Sized>(
    affinity: &[f64],
    n: usize,
    k: usize,
    rng: &mut R,
) -> Result<Segmentation> {
    if affinity.len() != n * n {
        return Err(TsaError::DimensionMismatch("affinity is not n x n".into()));
    }
    if k < 2 || k > n {
        return Err(TsaError::InvalidArgument(format!("k = {k} must be in [2, {n}]")));
    }
    if k == n {
        return Segmentation::new((0..n).collect(), n);
    }
    let mut a = affinity.to_vec();
    for i in 0..n {
        a[i * n + i] = 0.0;
        for j in 0..n {
            if i != j {
                a[i * n + j] += AFFINITY_FLOOR;
            }
        }
    }
    let inv_sqrt_deg: Vec<f64> = a
        .chunks_exact(n)
        .map(|row| 1.0 / row.iter().sum::<f64>().sqrt())
        .collect();
    let mut lap = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let norm = a[i * n + j] * inv_sqrt_deg[i] * inv_sqrt_deg[j];
            lap[i * n + j] = if i == j { 1.0 - norm } else { -norm };
        }
    }
    let eig = jacobi_eigen(&lap, n)?;
    let embedding = spectral_embedding(&eig, n, k);
    kmeans(&FeatureMatrix::new(n, k, embedding)?, k, rng)
}

/// Rows of the `k` lowest eigenvectors, each scaled to unit length.
fn spectral_embedding(eig: &SymmetricEigen, n: usize, k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * k);
    for i in 0..n {
        let row: Vec<f64> = (0..k).map(|j| eig.vectors[i * n + j]).collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            out.extend(row.iter().map(|v| v / norm));
        } else {
            out.extend(row);
        }
    }
    out
}
