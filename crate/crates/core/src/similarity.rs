//! Semantic, temporal and combined similarity distributions. Every row of an
//! [`AffinityMatrix`] is a probability distribution over frames.

use crate::config::SemanticKernel;
use crate::data_io::FeatureMatrix;
use crate::error::{Result, TsaError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AffinityKind {
    Semantic,
    Temporal,
    Combined,
}

/// Read access to PDF rows, whether stored densely or only for a few frames.
pub trait PdfRows {
    fn size(&self) -> usize;
    fn pdf_row(&self, i: usize) -> &[f64];
}

/// `N x N` row-stochastic matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    size: usize,
    kind: AffinityKind,
    data: Vec<f64>,
}

impl AffinityMatrix {
    /// Wraps rows that are already normalized.
    pub fn from_rows(size: usize, kind: AffinityKind, data: Vec<f64>) -> Result<Self> {
        if data.len() != size * size || size == 0 {
            return Err(TsaError::DimensionMismatch(format!(
                "{} entries for a {size}x{size} affinity",
                data.len()
            )));
        }
        Ok(AffinityMatrix { size, kind, data })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn kind(&self) -> AffinityKind {
        self.kind
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.size..(i + 1) * self.size]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.size + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Exports the matrix as an `N x N` feature matrix for plotting.
    pub fn to_feature_matrix(&self) -> FeatureMatrix {
        FeatureMatrix::new(self.size, self.size, self.data.clone())
            .expect("affinity entries are finite")
    }
}

impl PdfRows for AffinityMatrix {
    fn size(&self) -> usize {
        self.size
    }

    fn pdf_row(&self, i: usize) -> &[f64] {
        self.row(i)
    }
}

/// Temporal weight `w(d) = -1 + 2 exp(-d / beta)` with `beta` chosen so that
/// `w(L/2) = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemporalKernel {
    window: usize,
    beta: f64,
}

impl TemporalKernel {
    pub fn new(window: usize) -> Result<Self> {
        if window == 0 {
            return Err(TsaError::InvalidArgument("L must be positive".into()));
        }
        let beta = -(window as f64) / (2.0 * 0.5f64.ln());
        Ok(TemporalKernel { window, beta })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn weight(&self, d: f64) -> f64 {
        -1.0 + 2.0 * (-d / self.beta).exp()
    }
}

pub fn temporal_weight(d: f64, kernel: &TemporalKernel) -> f64 {
    kernel.weight(d)
}

/// Clipped temporal weights `max(0, w(d))` for `d = 0..n`.
fn clipped_weights(n: usize, kernel: &TemporalKernel) -> Vec<f64> {
    (0..n).map(|d| kernel.weight(d as f64).max(0.0)).collect()
}

/// Row `i` of the temporal distribution over `n` frames.
pub(crate) fn temporal_row_from(weights: &[f64], i: usize, out: &mut [f64]) {
    let mut sum = 0.0;
    for (j, o) in out.iter_mut().enumerate() {
        *o = weights[i.abs_diff(j)];
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Temporal rows computed on demand without materializing `N x N`.
#[derive(Debug, Clone)]
pub(crate) struct TemporalRows {
    weights: Vec<f64>,
    // prefix[k] = sum of weights[0..=k]
    prefix: Vec<f64>,
}

impl TemporalRows {
    pub fn new(n: usize, kernel: &TemporalKernel) -> Self {
        let weights = clipped_weights(n, kernel);
        let prefix = weights
            .iter()
            .scan(0.0, |acc, w| {
                *acc += w;
                Some(*acc)
            })
            .collect();
        TemporalRows { weights, prefix }
    }

    pub fn row(&self, i: usize, out: &mut [f64]) {
        temporal_row_from(&self.weights, i, out);
    }

    pub fn diagonal(&self, i: usize) -> f64 {
        let n = self.weights.len();
        let sum = self.prefix[i] + self.prefix[n - 1 - i] - self.weights[0];
        self.weights[0] / sum
    }
}

pub fn temporal_distribution(n: usize, kernel: &TemporalKernel) -> Result<AffinityMatrix> {
    if n < 2 {
        return Err(TsaError::InvalidArgument(format!(
            "temporal distribution needs at least 2 frames, got {n}"
        )));
    }
    let weights = clipped_weights(n, kernel);
    let mut data = vec![0.0; n * n];
    for (i, row) in data.chunks_exact_mut(n).enumerate() {
        temporal_row_from(&weights, i, row);
    }
    AffinityMatrix::from_rows(n, AffinityKind::Temporal, data)
}

/// Unit-normalized rows of `m`. Norms below `floor` are replaced by `floor`.
pub(crate) fn unit_rows(m: &FeatureMatrix, floor: f64) -> (Vec<f64>, Vec<f64>) {
    let mut units = Vec::with_capacity(m.as_slice().len());
    let mut norms = Vec::with_capacity(m.rows());
    for row in m.iter_rows() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(floor);
        units.extend(row.iter().map(|v| v / norm));
        norms.push(norm);
    }
    (units, norms)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Unnormalized semantic weight for a cosine similarity.
pub(crate) fn semantic_weight(sim: f64, bandwidth: f64, kernel: SemanticKernel) -> f64 {
    match kernel {
        SemanticKernel::Similarity => (-(1.0 - sim) / bandwidth).exp(),
        SemanticKernel::Literal => (-sim / bandwidth).exp(),
    }
}

/// `d weight / d sim` expressed through the weight itself.
pub(crate) fn semantic_weight_slope(weight: f64, bandwidth: f64, kernel: SemanticKernel) -> f64 {
    match kernel {
        SemanticKernel::Similarity => weight / bandwidth,
        SemanticKernel::Literal => -weight / bandwidth,
    }
}

/// Unnormalized semantic row `i` (weights against every frame) from unit rows.
pub(crate) fn semantic_weights_row(
    units: &[f64],
    dims: usize,
    i: usize,
    bandwidth: f64,
    kernel: SemanticKernel,
    out: &mut [f64],
) {
    let ui = &units[i * dims..(i + 1) * dims];
    for (j, o) in out.iter_mut().enumerate() {
        let sim = dot(ui, &units[j * dims..(j + 1) * dims]);
        *o = semantic_weight(sim, bandwidth, kernel);
    }
}

pub fn semantic_distribution(m: &FeatureMatrix, h: f64) -> Result<AffinityMatrix> {
    semantic_distribution_with(m, h, SemanticKernel::Similarity)
}

pub fn semantic_distribution_with(
    m: &FeatureMatrix,
    h: f64,
    kernel: SemanticKernel,
) -> Result<AffinityMatrix> {
    if !(h > 0.0) {
        return Err(TsaError::InvalidArgument(format!("bandwidth h = {h}")));
    }
    for (i, row) in m.iter_rows().enumerate() {
        if row.iter().all(|&v| v == 0.0) {
            return Err(TsaError::ZeroNorm(i));
        }
    }
    let n = m.rows();
    let (units, _) = unit_rows(m, 0.0);
    let mut data = vec![0.0; n * n];
    for (i, row) in data.chunks_exact_mut(n).enumerate() {
        semantic_weights_row(&units, m.cols(), i, h, kernel, row);
        let sum: f64 = row.iter().sum();
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    AffinityMatrix::from_rows(n, AffinityKind::Semantic, data)
}

/// Row-wise mixture `alpha_i * ft_i + (1 - alpha_i) * fs_i`, smoothed and
/// renormalized so that every entry is strictly positive.
pub(crate) fn combine_row(fs: &[f64], ft: &[f64], alpha: f64, smoothing: f64, out: &mut [f64]) -> f64 {
    let mut sum = 0.0;
    for ((o, &s), &t) in out.iter_mut().zip(fs).zip(ft) {
        *o = alpha * t + (1.0 - alpha) * s + smoothing;
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    sum
}

pub fn combine(
    fs: &AffinityMatrix,
    ft: &AffinityMatrix,
    alpha: &[f64],
    smoothing: f64,
) -> Result<AffinityMatrix> {
    let n = fs.size();
    if ft.size() != n || alpha.len() != n {
        return Err(TsaError::DimensionMismatch(format!(
            "fs {n}, ft {}, alpha {}",
            ft.size(),
            alpha.len()
        )));
    }
    if let Some(a) = alpha.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(TsaError::InvalidArgument(format!("alpha {a} outside [0, 1]")));
    }
    if !(smoothing > 0.0) {
        return Err(TsaError::InvalidArgument("smoothing must be positive".into()));
    }
    let mut data = vec![0.0; n * n];
    for (i, row) in data.chunks_exact_mut(n).enumerate() {
        combine_row(fs.row(i), ft.row(i), alpha[i], smoothing, row);
    }
    AffinityMatrix::from_rows(n, AffinityKind::Combined, data)
}
