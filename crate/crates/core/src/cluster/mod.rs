//! Frame partitions from feature matrices.

mod finch;
mod kmeans;
mod spectral;

pub use finch::{finch, finch_hierarchy, finch_k, first_neighbors};
pub use kmeans::{kmeans, kmeans_fit, KMeansFit};
pub use spectral::{jacobi_eigen, spectral, spectral_from_affinity, SymmetricEigen};

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data_io::{FeatureMatrix, LabelSequence};
use crate::error::{Result, TsaError};

/// Per-frame cluster labels in `[0, k)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    labels: Vec<usize>,
    k: usize,
}

/// Maximal run of one label, `end` exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub label: usize,
}

impl Segmentation {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if let Some(&l) = labels.iter().find(|&&l| l >= k) {
            return Err(TsaError::InvalidArgument(format!("label {l} outside [0, {k})")));
        }
        Ok(Segmentation { labels, k })
    }

    /// Renumbers labels by first appearance; `k` becomes the number of
    /// distinct labels.
    pub fn from_raw(raw: &[usize]) -> Self {
        let mut map = std::collections::HashMap::new();
        let labels = raw
            .iter()
            .map(|&l| {
                let next = map.len();
                *map.entry(l).or_insert(next)
            })
            .collect();
        Segmentation { labels, k: map.len() }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn segments(&self) -> Vec<Segment> {
        run_lengths(&self.labels)
    }

    pub fn to_label_sequence(&self) -> LabelSequence {
        LabelSequence {
            labels: self.labels.clone(),
            names: (0..self.k).map(|c| c.to_string()).collect(),
            background_id: None,
        }
    }
}

pub fn run_lengths(labels: &[usize]) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        match out.last_mut() {
            Some(seg) if seg.label == l => seg.end = i + 1,
            _ => out.push(Segment {
                start: i,
                end: i + 1,
                label: l,
            }),
        }
    }
    out
}

/// `k` contiguous runs; the first `n mod k` are one frame longer.
pub fn equal_split(n: usize, k: usize) -> Result<Segmentation> {
    if k == 0 || k > n {
        return Err(TsaError::InvalidArgument(format!("k = {k} must be in [1, {n}]")));
    }
    let (base, extra) = (n / k, n % k);
    let mut labels = Vec::with_capacity(n);
    for c in 0..k {
        let len = base + usize::from(c < extra);
        labels.extend(std::iter::repeat_n(c, len));
    }
    Segmentation::new(labels, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    KMeans,
    Finch,
    Spectral,
    Equal,
}

impl FromStr for Method {
    type Err = TsaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kmeans" => Ok(Method::KMeans),
            "finch" => Ok(Method::Finch),
            "spectral" => Ok(Method::Spectral),
            "equal" => Ok(Method::Equal),
            other => Err(TsaError::InvalidArgument(format!(
                "unknown method {other:?} (expected kmeans, finch, spectral or equal)"
            ))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::KMeans => "kmeans",
            Method::Finch => "finch",
            Method::Spectral => "spectral",
            Method::Equal => "equal",
        })
    }
}

/// Segments `m` into `k` clusters with the chosen method.
pub fn segment(m: &FeatureMatrix, method: Method, k: usize, seed: u64) -> Result<Segmentation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match method {
        Method::KMeans => kmeans(m, k, &mut rng),
        Method::Finch => finch_k(m, k),
        Method::Spectral => spectral(m, k, &mut rng),
        Method::Equal => equal_split(m.rows(), k),
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
