//! Anchor downsampling and positive/negative selection from the rows of the
//! temporal-semantic distribution.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::PoolMode;
use crate::error::{Result, TsaError};
use crate::similarity::{AffinityMatrix, PdfRows};

/// Anchor candidates: one frame per contiguous window of `batch` frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DownsampleSet {
    pub indices: Vec<usize>,
    pub batch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Samples one index per window with probability proportional to `weight`
/// (the self-affinity `f_ts(i, i)`), or uniformly.
pub fn pool_windows<R: Rng + ?Sized>(
    weight: &[f64],
    batch: usize,
    mode: PoolMode,
    rng: &mut R,
) -> Result<DownsampleSet> {
    let n = weight.len();
    if batch == 0 || batch > n {
        return Err(TsaError::InvalidArgument(format!(
            "batch size {batch} must be in [1, {n}]"
        )));
    }
    let mut indices = Vec::with_capacity(n.div_ceil(batch));
    for start in (0..n).step_by(batch) {
        let end = (start + batch).min(n);
        let window = &weight[start..end];
        let total: f64 = window.iter().sum();
        let pick = match mode {
            PoolMode::Uniform => rng.random_range(0..window.len()),
            PoolMode::SelfAffinity if !(total > 0.0) => rng.random_range(0..window.len()),
            PoolMode::SelfAffinity => {
                let target = rng.random::<f64>() * total;
                let mut acc = 0.0;
                let mut pick = window.len() - 1;
                for (k, &w) in window.iter().enumerate() {
                    acc += w;
                    if target < acc {
                        pick = k;
                        break;
                    }
                }
                pick
            }
        };
        indices.push(start + pick);
    }
    Ok(DownsampleSet { indices, batch })
}

pub fn stochastic_pool<R: Rng + ?Sized>(
    f_ts: &AffinityMatrix,
    batch: usize,
    rng: &mut R,
) -> Result<DownsampleSet> {
    let diag: Vec<f64> = (0..f_ts.size()).map(|i| f_ts.get(i, i)).collect();
    pool_windows(&diag, batch, PoolMode::SelfAffinity, rng)
}

/// Number of positives for a video of `n` frames.
pub fn positive_count(n: usize, fraction: f64) -> usize {
    // the small offset keeps 0.05 * 100 from rounding up to 6
    let k = (fraction * n as f64 - 1e-9).ceil().max(1.0) as usize;
    k.min(n.saturating_sub(2).max(1))
}

/// The frames `j != i` with the largest `row[j]`; ties go to the temporally
/// closer frame, then the smaller index.
pub fn positive_set(row: &[f64], i: usize, fraction: f64) -> Vec<usize> {
    let k = positive_count(row.len(), fraction);
    let mut candidates: Vec<usize> = (0..row.len()).filter(|&j| j != i).collect();
    candidates.sort_by(|&a, &b| {
        row[b]
            .total_cmp(&row[a])
            .then(i.abs_diff(a).cmp(&i.abs_diff(b)))
            .then(a.cmp(&b))
    });
    candidates.truncate(k);
    candidates
}

/// Off-diagonal mean and population standard deviation of a row.
pub fn row_stats(row: &[f64], i: usize) -> (f64, f64) {
    let m = (row.len() - 1) as f64;
    let mean = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, v)| v)
        .sum::<f64>()
        / m;
    let var = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, v)| (v - mean) * (v - mean))
        .sum::<f64>()
        / m;
    (mean, var.sqrt())
}

/// Frames whose similarity to `i` lies in `[mean, mean + std]`, excluding `i`
/// and anything in `exclude`. Falls back to the single allowed frame closest
/// to the mean when the band is empty.
pub fn negative_set(row: &[f64], i: usize, exclude: &[usize]) -> Vec<usize> {
    let (mean, std) = row_stats(row, i);
    let allowed = |j: usize| j != i && !exclude.contains(&j);
    let band: Vec<usize> = (0..row.len())
        .filter(|&j| allowed(j) && row[j] >= mean && row[j] <= mean + std)
        .collect();
    if !band.is_empty() {
        return band;
    }
    (0..row.len())
        .filter(|&j| allowed(j))
        .min_by(|&a, &b| (row[a] - mean).abs().total_cmp(&(row[b] - mean).abs()))
        .into_iter()
        .collect()
}

/// Anchor-specific generator, so the draw for an anchor does not depend on
/// the order anchors are visited in.
fn anchor_rng(base: u64, anchor: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(anchor as u64);
    rng
}

pub fn sample_triplets<F: PdfRows + ?Sized, R: RngCore + ?Sized>(
    f_ts: &F,
    anchors: &DownsampleSet,
    per_anchor: usize,
    fraction: f64,
    rng: &mut R,
) -> Result<Vec<Triplet>> {
    if per_anchor == 0 {
        return Err(TsaError::InvalidArgument("per_anchor must be positive".into()));
    }
    if f_ts.size() < 3 {
        return Err(TsaError::InvalidArgument(
            "triplets need at least 3 frames".into(),
        ));
    }
    let base = rng.next_u64();
    let mut out = Vec::with_capacity(anchors.indices.len() * per_anchor);
    for &anchor in &anchors.indices {
        let row = f_ts.pdf_row(anchor);
        let pos = positive_set(row, anchor, fraction);
        let neg = negative_set(row, anchor, &pos);
        let mut r = anchor_rng(base, anchor);
        for _ in 0..per_anchor {
            out.push(Triplet {
                anchor,
                positive: pos[r.random_range(0..pos.len())],
                negative: neg[r.random_range(0..neg.len())],
            });
        }
    }
    Ok(out)
}

/// One `anchor positive negative` line per triplet.
pub fn format_triplets(triplets: &[Triplet]) -> String {
    let mut s = String::from("anchor positive negative\n");
    for t in triplets {
        s.push_str(&format!("{} {} {}\n", t.anchor, t.positive, t.negative));
    }
    s
}
