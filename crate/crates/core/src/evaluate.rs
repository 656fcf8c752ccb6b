//! Video-level Hungarian matching of predicted clusters to ground-truth
//! classes and the frame-wise MoF, IoU and F1 scores.

use rand::seq::index::sample;
use rand::RngCore;

use crate::data_io::LabelSequence;
use crate::error::{Result, TsaError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    /// `mapping[p]` is the ground-truth class matched to predicted label `p`.
    pub mapping: Vec<Option<usize>>,
    /// `overlap[p][g]` counts frames predicted `p` with ground truth `g`.
    pub overlap: Vec<Vec<u64>>,
    /// Total overlap of the matched pairs.
    pub value: u64,
}

/// Minimum-cost assignment of every row of a square matrix to a distinct
/// column (shortest augmenting paths with potentials).
fn min_cost_assignment(cost: &[Vec<i64>]) -> Vec<usize> {
    let n = cost.len();
    const INF: i64 = i64::MAX / 4;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![INF; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = INF;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// One-to-one matching maximizing the total overlap.
pub fn hungarian(overlap: &[Vec<u64>]) -> Result<MatchResult> {
    let rows = overlap.len();
    let cols = overlap.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Err(TsaError::InvalidArgument("empty overlap matrix".into()));
    }
    if overlap.iter().any(|r| r.len() != cols) {
        return Err(TsaError::DimensionMismatch("ragged overlap matrix".into()));
    }
    let size = rows.max(cols);
    let cost: Vec<Vec<i64>> = (0..size)
        .map(|p| {
            (0..size)
                .map(|g| {
                    if p < rows && g < cols {
                        -(overlap[p][g] as i64)
                    } else {
                        0
                    }
                })
                .collect()
        })
        .collect();
    let assignment = min_cost_assignment(&cost);
    let mapping: Vec<Option<usize>> = (0..rows)
        .map(|p| Some(assignment[p]).filter(|&g| g < cols))
        .collect();
    let value = mapping
        .iter()
        .enumerate()
        .filter_map(|(p, g)| g.map(|g| overlap[p][g]))
        .sum();
    Ok(MatchResult {
        mapping,
        overlap: overlap.to_vec(),
        value,
    })
}

pub fn contingency(pred: &[usize], gt: &[usize], k_pred: usize, k_gt: usize) -> Vec<Vec<u64>> {
    let mut table = vec![vec![0u64; k_gt]; k_pred];
    for (&p, &g) in pred.iter().zip(gt) {
        table[p][g] += 1;
    }
    table
}

/// Matches `pred` against `gt` over the label ids that actually occur.
pub fn match_labels(pred: &[usize], gt: &[usize]) -> Result<MatchResult> {
    if pred.len() != gt.len() {
        return Err(TsaError::DimensionMismatch(format!(
            "{} predicted frames, {} ground-truth frames",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(TsaError::InvalidArgument("no frames to evaluate".into()));
    }
    let k_pred = pred.iter().max().unwrap() + 1;
    let k_gt = gt.iter().max().unwrap() + 1;
    hungarian(&contingency(pred, gt, k_pred, k_gt))
}

fn check_lengths(pred: &[usize], gt: &[usize]) -> Result<()> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(TsaError::DimensionMismatch(format!(
            "{} predicted frames, {} ground-truth frames",
            pred.len(),
            gt.len()
        )));
    }
    Ok(())
}

/// Per ground-truth class that occurs: (matched overlap, predicted size,
/// ground-truth size). Unmatched classes have zero overlap and size.
fn class_counts(m: &MatchResult) -> Vec<(f64, f64, f64)> {
    let k_gt = m.overlap[0].len();
    let pred_sizes: Vec<u64> = m.overlap.iter().map(|r| r.iter().sum()).collect();
    (0..k_gt)
        .filter_map(|g| {
            let gt_size: u64 = m.overlap.iter().map(|r| r[g]).sum();
            if gt_size == 0 {
                return None;
            }
            let matched = m.mapping.iter().position(|&x| x == Some(g));
            let (inter, psize) = matched.map_or((0, 0), |p| (m.overlap[p][g], pred_sizes[p]));
            Some((inter as f64, psize as f64, gt_size as f64))
        })
        .collect()
}

/// Fraction of frames whose mapped prediction equals the ground truth.
pub fn mof(pred: &[usize], gt: &[usize], m: &MatchResult) -> Result<f64> {
    check_lengths(pred, gt)?;
    let hits = pred
        .iter()
        .zip(gt)
        .filter(|&(&p, &g)| m.mapping.get(p).copied().flatten() == Some(g))
        .count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Jaccard index per ground-truth class, averaged over the classes present.
pub fn iou(pred: &[usize], gt: &[usize], m: &MatchResult) -> Result<f64> {
    check_lengths(pred, gt)?;
    let classes = class_counts(m);
    let total: f64 = classes
        .iter()
        .map(|&(inter, p, g)| inter / (p + g - inter))
        .sum();
    Ok(total / classes.len() as f64)
}

/// Frame-level F1 per ground-truth class, averaged over the classes present.
pub fn f1(pred: &[usize], gt: &[usize], m: &MatchResult) -> Result<f64> {
    check_lengths(pred, gt)?;
    let classes = class_counts(m);
    let total: f64 = classes
        .iter()
        .map(|&(inter, p, g)| {
            if inter == 0.0 {
                return 0.0;
            }
            let (precision, recall) = (inter / p, inter / g);
            2.0 * precision * recall / (precision + recall)
        })
        .sum();
    Ok(total / classes.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scores {
    pub mof: f64,
    pub iou: f64,
    pub f1: f64,
    pub n_frames: usize,
    pub k_pred: usize,
    pub k_gt: usize,
}

impl Scores {
    pub fn to_json(&self) -> String {
        format!(
            "{{\"mof\":{:?},\"iou\":{:?},\"f1\":{:?},\"n_frames\":{},\"k_pred\":{},\"k_gt\":{}}}",
            self.mof, self.iou, self.f1, self.n_frames, self.k_pred, self.k_gt
        )
    }
}

fn distinct(v: &[usize]) -> usize {
    let mut s = v.to_vec();
    s.sort_unstable();
    s.dedup();
    s.len()
}

pub fn score(pred: &[usize], gt: &[usize]) -> Result<Scores> {
    let m = match_labels(pred, gt)?;
    Ok(Scores {
        mof: mof(pred, gt, &m)?,
        iou: iou(pred, gt, &m)?,
        f1: f1(pred, gt, &m)?,
        n_frames: pred.len(),
        k_pred: distinct(pred),
        k_gt: distinct(gt),
    })
}

/// Frames kept after dropping `floor(tau * #background)` background frames
/// chosen uniformly at random. Indices are ascending.
pub fn background_keep<R: RngCore + ?Sized>(
    gt: &LabelSequence,
    tau: f64,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let bg = gt.background_id.ok_or(TsaError::MissingBackground)?;
    if !(0.0..=1.0).contains(&tau) {
        return Err(TsaError::InvalidArgument(format!("tau = {tau} outside [0, 1]")));
    }
    let background: Vec<usize> = (0..gt.len()).filter(|&i| gt.labels[i] == bg).collect();
    let drop_count = (tau * background.len() as f64 + 1e-9).floor() as usize;
    let drop_count = drop_count.min(background.len());
    let mut dropped = vec![false; gt.len()];
    for k in sample(rng, background.len(), drop_count) {
        dropped[background[k]] = true;
    }
    Ok((0..gt.len()).filter(|&i| !dropped[i]).collect())
}

/// Drops background frames from both sequences; returns the filtered
/// prediction, filtered ground truth and the kept indices.
pub fn remove_background<R: RngCore + ?Sized>(
    pred: &[usize],
    gt: &LabelSequence,
    tau: f64,
    rng: &mut R,
) -> Result<(Vec<usize>, LabelSequence, Vec<usize>)> {
    check_lengths(pred, &gt.labels)?;
    let keep = background_keep(gt, tau, rng)?;
    let pred_kept = keep.iter().map(|&i| pred[i]).collect();
    Ok((pred_kept, gt.select(&keep), keep))
}
