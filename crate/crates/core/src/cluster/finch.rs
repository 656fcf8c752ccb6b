//! First-integer-neighbor clustering: link every point to its nearest
//! neighbor (cosine), take connected components, repeat on cluster means.

use super::Segmentation;
use crate::data_io::FeatureMatrix;
use crate::error::{Result, TsaError};
use crate::similarity::dot;

fn unit(v: &[f64]) -> Vec<f64> {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        v.iter().map(|x| x / norm).collect()
    } else {
        vec![0.0; v.len()]
    }
}

/// Index of each row's most cosine-similar other row (ties to the smaller
/// index).
pub fn first_neighbors(points: &[Vec<f64>]) -> Vec<usize> {
    let units: Vec<Vec<f64>> = points.iter().map(|p| unit(p)).collect();
    (0..units.len())
        .map(|i| {
            let mut best = usize::MAX;
            let mut best_sim = f64::NEG_INFINITY;
            for (j, u) in units.iter().enumerate() {
                if j == i {
                    continue;
                }
                let s = dot(&units[i], u);
                if s > best_sim {
                    best_sim = s;
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Connected components of the first-neighbor graph, numbered by first
/// appearance. Linking `i` to `nn(i)` covers the `nn(i) == nn(j)` edges too.
fn components(neighbors: &[usize]) -> (Vec<usize>, usize) {
    let mut parent: Vec<usize> = (0..neighbors.len()).collect();
    for (i, &j) in neighbors.iter().enumerate() {
        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut ids = vec![usize::MAX; neighbors.len()];
    let mut count = 0;
    let labels = (0..neighbors.len())
        .map(|i| {
            let root = find(&mut parent, i);
            if ids[root] == usize::MAX {
                ids[root] = count;
                count += 1;
            }
            ids[root]
        })
        .collect();
    (labels, count)
}

fn cluster_means(m: &FeatureMatrix, labels: &[usize], k: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; m.cols()]; k];
    let mut counts = vec![0usize; k];
    for (&l, r) in labels.iter().zip(m.iter_rows()) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(r) {
            *s += v;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        for v in s.iter_mut() {
            *v /= c as f64;
        }
    }
    sums
}

/// Every partition level, finest first, ending with a single cluster. Level
/// sizes strictly decrease.
pub fn finch_hierarchy(m: &FeatureMatrix) -> Result<Vec<Segmentation>> {
    let n = m.rows();
    if n < 2 {
        return Err(TsaError::InvalidArgument("FINCH needs at least 2 frames".into()));
    }
    let points: Vec<Vec<f64>> = m.iter_rows().map(<[f64]>::to_vec).collect();
    let (mut labels, mut count) = components(&first_neighbors(&points));
    let mut levels = vec![Segmentation::new(labels.clone(), count)?];
    while count > 1 {
        let means = cluster_means(m, &labels, count);
        let (merged, next_count) = components(&first_neighbors(&means));
        if next_count >= count {
            break;
        }
        labels = labels.iter().map(|&l| merged[l]).collect();
        let relabeled = Segmentation::from_raw(&labels);
        labels = relabeled.labels().to_vec();
        count = next_count;
        levels.push(relabeled);
    }
    Ok(levels)
}

/// Exactly `k` clusters: start from the coarsest level that still has at least
/// `k` clusters, then repeatedly merge the two clusters whose means are most
/// cosine-similar (a mutually nearest pair).
pub fn finch_k(m: &FeatureMatrix, k: usize) -> Result<Segmentation> {
    let n = m.rows();
    if k == 0 || k > n {
        return Err(TsaError::InvalidArgument(format!("k = {k} must be in [1, {n}]")));
    }
    if k == n {
        return Segmentation::new((0..n).collect(), n);
    }
    let levels = finch_hierarchy(m)?;
    let start = levels
        .iter()
        .filter(|l| l.k() >= k)
        .min_by_key(|l| l.k())
        .cloned()
        .unwrap_or_else(|| Segmentation::new((0..n).collect(), n).unwrap());
    let mut labels = start.labels().to_vec();
    let mut count = start.k();
    while count > k {
        let means: Vec<Vec<f64>> = cluster_means(m, &labels, count).iter().map(|v| unit(v)).collect();
        let mut best = (0, 1, f64::NEG_INFINITY);
        for a in 0..count {
            for b in a + 1..count {
                let s = dot(&means[a], &means[b]);
                if s > best.2 {
                    best = (a, b, s);
                }
            }
        }
        let (a, b, _) = best;
        for l in labels.iter_mut() {
            if *l == b {
                *l = a;
            } else if *l > b {
                *l -= 1;
            }
        }
        count -= 1;
    }
    Ok(Segmentation::from_raw(&labels))
}

/// The full hierarchy, or only the exact-`k` partition when `required_k` is set.
pub fn finch(m: &FeatureMatrix, required_k: Option<usize>) -> Result<Vec<Segmentation>> {
    match required_k {
        Some(k) => Ok(vec![finch_k(m, k)?]),
        None => finch_hierarchy(m),
    }
}
