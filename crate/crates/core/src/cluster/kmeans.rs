//! Lloyd's algorithm with k-means++ seeding and best-of-restarts selection.

use rand::{Rng, RngCore};

use super::{sq_dist, Segmentation};
use crate::data_io::FeatureMatrix;
use crate::error::{Result, TsaError};

pub const DEFAULT_MAX_ITER: usize = 300;
pub const DEFAULT_RESTARTS: usize = 10;

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub segmentation: Segmentation,
    /// `k x dims` row-major.
    pub centroids: Vec<f64>,
    /// Within-cluster sum of squares of the returned partition.
    pub wcss: f64,
    /// WCSS after each assignment step of the winning restart.
    pub history: Vec<f64>,
    /// Clusters that ended with no members.
    pub empty_clusters: usize,
}

pub fn kmeans<R: RngCore + ?Sized>(m: &FeatureMatrix, k: usize, rng: &mut R) -> Result<Segmentation> {
    Ok(kmeans_fit(m, k, DEFAULT_MAX_ITER, DEFAULT_RESTARTS, rng)?.segmentation)
}

pub fn kmeans_fit<R: RngCore + ?Sized>(
    m: &FeatureMatrix,
    k: usize,
    max_iter: usize,
    restarts: usize,
    rng: &mut R,
) -> Result<KMeansFit> {
    let n = m.rows();
    if k == 0 || k > n {
        return Err(TsaError::InvalidArgument(format!("k = {k} must be in [1, {n}]")));
    }
    let mut best: Option<KMeansFit> = None;
    for _ in 0..restarts.max(1) {
        let fit = lloyd(m, k, max_iter, plus_plus(m, k, rng));
        if best.as_ref().is_none_or(|b| fit.wcss < b.wcss) {
            best = Some(fit);
        }
    }
    Ok(best.unwrap())
}

fn plus_plus<R: RngCore + ?Sized>(m: &FeatureMatrix, k: usize, rng: &mut R) -> Vec<f64> {
    let n = m.rows();
    let mut centroids = Vec::with_capacity(k * m.cols());
    centroids.extend_from_slice(m.row(rng.random_range(0..n)));
    let mut nearest: Vec<f64> = m.iter_rows().map(|r| sq_dist(r, &centroids)).collect();
    for _ in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            nearest
                .iter()
                .position(|&d| {
                    acc += d;
                    target < acc
                })
                .unwrap_or(n - 1)
        } else {
            rng.random_range(0..n)
        };
        let c = m.row(pick).to_vec();
        for (d, r) in nearest.iter_mut().zip(m.iter_rows()) {
            *d = d.min(sq_dist(r, &c));
        }
        centroids.extend(c);
    }
    centroids
}

fn assign(m: &FeatureMatrix, centroids: &[f64], labels: &mut [usize]) -> f64 {
    let dims = m.cols();
    let mut wcss = 0.0;
    for (l, r) in labels.iter_mut().zip(m.iter_rows()) {
        let (best, dist) = centroids
            .chunks_exact(dims)
            .map(|c| sq_dist(r, c))
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (c, d)| if d < acc.1 { (c, d) } else { acc });
        *l = best;
        wcss += dist;
    }
    wcss
}

fn lloyd(m: &FeatureMatrix, k: usize, max_iter: usize, mut centroids: Vec<f64>) -> KMeansFit {
    let (n, dims) = (m.rows(), m.cols());
    let mut labels = vec![usize::MAX; n];
    let mut next = vec![0; n];
    let mut history: Vec<f64> = Vec::new();
    for _ in 0..max_iter.max(1) {
        let wcss = assign(m, &centroids, &mut next);
        if let Some(&prev) = history.last() {
            assert!(
                wcss <= prev + 1e-9 * prev.max(1.0),
                "k-means objective increased from {prev} to {wcss}"
            );
        }
        history.push(wcss);
        if next == labels {
            break;
        }
        labels.copy_from_slice(&next);
        let mut sums = vec![0.0; k * dims];
        let mut counts = vec![0usize; k];
        for (&l, r) in labels.iter().zip(m.iter_rows()) {
            counts[l] += 1;
            for (s, v) in sums[l * dims..(l + 1) * dims].iter_mut().zip(r) {
                *s += v;
            }
        }
        for c in 0..k {
            // empty clusters keep their centroid
            if counts[c] > 0 {
                for d in 0..dims {
                    centroids[c * dims + d] = sums[c * dims + d] / counts[c] as f64;
                }
            }
        }
    }
    let mut counts = vec![0usize; k];
    for &l in &labels {
        counts[l] += 1;
    }
    KMeansFit {
        segmentation: Segmentation::new(labels, k).expect("labels below k"),
        wcss: *history.last().unwrap(),
        centroids,
        history,
        empty_clusters: counts.iter().filter(|&&c| c == 0).count(),
    }
}
