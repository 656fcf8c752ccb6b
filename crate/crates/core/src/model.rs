//! The learnable map from input features to temporal-semantic aware features,
//! the KL triplet loss on temporal-semantic distributions, its analytic
//! gradient and the training loop.
//!
//! The semantic distribution inside the loss is rebuilt from the current
//! output `Z`, so the gradient flows through the cosine kernel, the row
//! normalization and the per-frame mixing weights into the network. The
//! temporal distribution is a constant. Triplet selection uses the same
//! epoch-start distribution but is not differentiated.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{LossKind, LossOrientation, Mixing, RunConfig, SemanticKernel};
use crate::data_io::FeatureMatrix;
use crate::error::{Result, TsaError};
use crate::similarity::{
    combine_row, dot, semantic_weight_slope, semantic_weights_row, unit_rows, PdfRows,
    TemporalKernel, TemporalRows,
};
use crate::triplet::{pool_windows, sample_triplets, Triplet};

/// Norms below this are treated as constant when normalizing learned rows.
const NORM_FLOOR: f64 = 1e-12;

/// Fully connected layer, `weight` is `outputs x inputs` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn uniform<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Dense {
            inputs,
            outputs,
            weight: (0..inputs * outputs)
                .map(|_| rng.random_range(-bound..bound))
                .collect(),
            bias: vec![0.0; outputs],
        }
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for ((o, w), b) in out
            .iter_mut()
            .zip(self.weight.chunks_exact(self.inputs))
            .zip(&self.bias)
        {
            *o = dot(w, x) + b;
        }
    }
}

/// MLP with ReLU hidden layers and a linear output of the input's width, plus
/// the unconstrained per-frame mixing parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TsaModel {
    pub layers: Vec<Dense>,
    /// `alpha = logistic(alpha_raw)`, one per frame.
    pub alpha_raw: Vec<f64>,
}

fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

impl TsaModel {
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases and
    /// `alpha = 0.5` for every frame.
    pub fn new<R: Rng + ?Sized>(
        dims: usize,
        frames: usize,
        hidden_width: usize,
        hidden_layers: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if dims == 0 || hidden_width == 0 || hidden_layers == 0 {
            return Err(TsaError::InvalidArgument(
                "model dimensions must be positive".into(),
            ));
        }
        let mut layers = Vec::with_capacity(hidden_layers + 1);
        let mut width = dims;
        for _ in 0..hidden_layers {
            layers.push(Dense::uniform(width, hidden_width, rng));
            width = hidden_width;
        }
        layers.push(Dense::uniform(width, dims, rng));
        Ok(TsaModel {
            layers,
            alpha_raw: vec![0.0; frames],
        })
    }

    /// Model with explicit single-hidden-layer parameters.
    pub fn from_parts(
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: Vec<f64>,
        alpha_raw: Vec<f64>,
    ) -> Result<Self> {
        let hidden = b1.len();
        let dims = b2.len();
        if hidden == 0 || dims == 0 || w1.len() != hidden * dims || w2.len() != dims * hidden {
            return Err(TsaError::DimensionMismatch("layer shapes".into()));
        }
        Ok(TsaModel {
            layers: vec![
                Dense {
                    inputs: dims,
                    outputs: hidden,
                    weight: w1,
                    bias: b1,
                },
                Dense {
                    inputs: hidden,
                    outputs: dims,
                    weight: w2,
                    bias: b2,
                },
            ],
            alpha_raw,
        })
    }

    pub fn input_dims(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dims(&self) -> usize {
        self.layers.last().unwrap().outputs
    }

    pub fn alpha(&self, mixing: Mixing) -> Vec<f64> {
        match mixing {
            Mixing::Combined => self.alpha_raw.iter().map(|&a| logistic(a)).collect(),
            Mixing::SemanticOnly => vec![0.0; self.alpha_raw.len()],
            Mixing::TemporalOnly => vec![1.0; self.alpha_raw.len()],
        }
    }

    /// Parameter blocks in a fixed order: each layer's weight then bias, then
    /// `alpha_raw`.
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out.push(&self.alpha_raw);
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.alpha_raw);
        out
    }

    pub fn block_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for k in 1..=self.layers.len() {
            out.push(format!("W{k}"));
            out.push(format!("b{k}"));
        }
        out.push("alpha_raw".into());
        out
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &FeatureMatrix) -> Result<()> {
        if x.cols() != self.input_dims() {
            return Err(TsaError::DimensionMismatch(format!(
                "features have {} columns, model expects {}",
                x.cols(),
                self.input_dims()
            )));
        }
        Ok(())
    }

    /// Activations of every layer (`acts[0]` is the input) and pre-activations.
    fn forward_cached(&self, x: &FeatureMatrix) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let n = x.rows();
        let mut acts = vec![x.as_slice().to_vec()];
        let mut pres = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let input = &acts[k];
            let mut pre = vec![0.0; n * layer.outputs];
            for (xi, out) in input
                .chunks_exact(layer.inputs)
                .zip(pre.chunks_exact_mut(layer.outputs))
            {
                layer.apply(xi, out);
            }
            let act = if k == last {
                pre.clone()
            } else {
                pre.iter().map(|&v| v.max(0.0)).collect()
            };
            pres.push(pre);
            acts.push(act);
        }
        (acts, pres)
    }
}

pub fn forward(model: &TsaModel, x: &FeatureMatrix) -> Result<FeatureMatrix> {
    model.check_input(x)?;
    let (mut acts, _) = model.forward_cached(x);
    FeatureMatrix::new(x.rows(), model.output_dims(), acts.pop().unwrap())
}

/// Gradients laid out like [`TsaModel::blocks`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub blocks: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(model: &TsaModel) -> Self {
        Gradients {
            blocks: model.blocks().iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.blocks.iter().all(|b| b.iter().all(|&v| v == 0.0))
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(TsaError::DimensionMismatch(format!(
            "KL of lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    if let Some(k) = p.iter().chain(q).position(|&v| !(v > 0.0)) {
        return Err(TsaError::NonPositive(k % p.len()));
    }
    Ok(kl_unchecked(p, q))
}

fn kl_unchecked(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(&a, &b)| a * (a / b).ln()).sum()
}

/// `+1` when the hinge is `KL(a||pos) - KL(a||neg)`.
fn orientation_sign(o: LossOrientation) -> f64 {
    match o {
        LossOrientation::Standard => 1.0,
        LossOrientation::Literal => -1.0,
    }
}

/// Mean hinge over triplets of the KL triplet loss on PDF rows.
pub fn triplet_loss<F: PdfRows + ?Sized>(
    f_ts: &F,
    triplets: &[Triplet],
    orientation: LossOrientation,
) -> Result<f64> {
    if triplets.is_empty() {
        return Err(TsaError::EmptyTriplets);
    }
    let s = orientation_sign(orientation);
    let mut total = 0.0;
    for t in triplets {
        let a = f_ts.pdf_row(t.anchor);
        let pos = kl_divergence(a, f_ts.pdf_row(t.positive))?;
        let neg = kl_divergence(a, f_ts.pdf_row(t.negative))?;
        total += (s * (pos - neg)).max(0.0);
    }
    Ok(total / triplets.len() as f64)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Triplet hinge on squared Euclidean distances between feature rows.
pub fn raw_triplet_loss(
    z: &FeatureMatrix,
    triplets: &[Triplet],
    orientation: LossOrientation,
) -> Result<f64> {
    if triplets.is_empty() {
        return Err(TsaError::EmptyTriplets);
    }
    let s = orientation_sign(orientation);
    let total: f64 = triplets
        .iter()
        .map(|t| {
            let a = z.row(t.anchor);
            (s * (sq_dist(a, z.row(t.positive)) - sq_dist(a, z.row(t.negative)))).max(0.0)
        })
        .sum();
    Ok(total / triplets.len() as f64)
}

/// Semantic and combined rows for a subset of frames, computed from unit rows.
struct LossRows {
    n: usize,
    slot: Vec<Option<usize>>,
    frames: Vec<usize>,
    /// unnormalized semantic weights
    weights: Vec<f64>,
    weight_sums: Vec<f64>,
    fs: Vec<f64>,
    ft: Vec<f64>,
    fts: Vec<f64>,
    mix_sums: Vec<f64>,
    bandwidth: f64,
    kernel: SemanticKernel,
}

struct RowInputs<'a> {
    units: &'a [f64],
    dims: usize,
    alpha: &'a [f64],
    temporal: &'a TemporalRows,
    bandwidth: f64,
    kernel: SemanticKernel,
    smoothing: f64,
}

impl LossRows {
    fn build(inp: &RowInputs<'_>, frames: Vec<usize>) -> Self {
        let n = inp.alpha.len();
        let m = frames.len();
        let mut slot = vec![None; n];
        for (s, &f) in frames.iter().enumerate() {
            slot[f] = Some(s);
        }
        let mut rows = LossRows {
            n,
            slot,
            weights: vec![0.0; m * n],
            weight_sums: vec![0.0; m],
            fs: vec![0.0; m * n],
            ft: vec![0.0; m * n],
            fts: vec![0.0; m * n],
            mix_sums: vec![0.0; m],
            frames,
            bandwidth: inp.bandwidth,
            kernel: inp.kernel,
        };
        for s in 0..m {
            let i = rows.frames[s];
            let range = s * n..(s + 1) * n;
            let w = &mut rows.weights[range.clone()];
            semantic_weights_row(inp.units, inp.dims, i, inp.bandwidth, inp.kernel, w);
            let sum: f64 = w.iter().sum();
            rows.weight_sums[s] = sum;
            for (f, &wv) in rows.fs[range.clone()].iter_mut().zip(w.iter()) {
                *f = wv / sum;
            }
            inp.temporal.row(i, &mut rows.ft[range.clone()]);
            rows.mix_sums[s] = combine_row(
                &rows.fs[range.clone()],
                &rows.ft[range.clone()],
                inp.alpha[i],
                inp.smoothing,
                &mut rows.fts[range],
            );
        }
        rows
    }

    fn slot_of(&self, i: usize) -> usize {
        self.slot[i].expect("row was not materialized")
    }
}

impl PdfRows for LossRows {
    fn size(&self) -> usize {
        self.n
    }

    fn pdf_row(&self, i: usize) -> &[f64] {
        let s = self.slot_of(i);
        &self.fts[s * self.n..(s + 1) * self.n]
    }
}

fn triplet_frames(triplets: &[Triplet]) -> Vec<usize> {
    let mut frames: Vec<usize> = triplets
        .iter()
        .flat_map(|t| [t.anchor, t.positive, t.negative])
        .collect();
    frames.sort_unstable();
    frames.dedup();
    frames
}

/// Shared state of one evaluation of the loss at the current parameters.
struct Evaluation {
    acts: Vec<Vec<f64>>,
    pres: Vec<Vec<f64>>,
    units: Vec<f64>,
    norms: Vec<f64>,
    alpha: Vec<f64>,
}

impl Evaluation {
    fn new(model: &TsaModel, x: &FeatureMatrix, mixing: Mixing) -> Result<Self> {
        model.check_input(x)?;
        if model.alpha_raw.len() != x.rows() {
            return Err(TsaError::DimensionMismatch(format!(
                "{} mixing weights for {} frames",
                model.alpha_raw.len(),
                x.rows()
            )));
        }
        let (acts, pres) = model.forward_cached(x);
        let z = FeatureMatrix::new(x.rows(), model.output_dims(), acts.last().unwrap().clone())
            .map_err(|_| TsaError::Diverged {
                epoch: 0,
                what: "non-finite network output".into(),
            })?;
        let (units, norms) = unit_rows(&z, NORM_FLOOR);
        Ok(Evaluation {
            acts,
            pres,
            units,
            norms,
            alpha: model.alpha(mixing),
        })
    }

    fn z(&self) -> &[f64] {
        self.acts.last().unwrap()
    }

    fn row_inputs<'a>(
        &'a self,
        dims: usize,
        temporal: &'a TemporalRows,
        cfg: &RunConfig,
    ) -> RowInputs<'a> {
        RowInputs {
            units: &self.units,
            dims,
            alpha: &self.alpha,
            temporal,
            bandwidth: cfg.bandwidth,
            kernel: cfg.semantic_kernel,
            smoothing: cfg.kl_smoothing,
        }
    }
}

fn loss_and_grad(
    model: &TsaModel,
    x: &FeatureMatrix,
    triplets: &[Triplet],
    cfg: &RunConfig,
    temporal: &TemporalRows,
    want_grad: bool,
) -> Result<(f64, Option<Gradients>)> {
    if triplets.is_empty() {
        return Err(TsaError::EmptyTriplets);
    }
    let n = x.rows();
    let dims = model.output_dims();
    let eval = Evaluation::new(model, x, cfg.mixing)?;
    let s = orientation_sign(cfg.loss_orientation);
    let scale = 1.0 / triplets.len() as f64;
    let mut d_alpha = vec![0.0; n];
    let mut dz = vec![0.0; n * dims];

    let loss = match cfg.loss_kind {
        LossKind::Pdf => {
            let inputs = eval.row_inputs(dims, temporal, cfg);
            let rows = LossRows::build(&inputs, triplet_frames(triplets));
            let loss = triplet_loss(&rows, triplets, cfg.loss_orientation)?;
            if want_grad && loss > 0.0 {
                pdf_backward(&rows, &eval, triplets, s * scale, dims, &mut d_alpha, &mut dz);
            }
            loss
        }
        LossKind::RawFeature => {
            let z = eval.z();
            let row = |i: usize| &z[i * dims..(i + 1) * dims];
            let mut total = 0.0;
            for t in triplets {
                let (a, p, q) = (row(t.anchor), row(t.positive), row(t.negative));
                let term = s * (sq_dist(a, p) - sq_dist(a, q));
                if term <= 0.0 {
                    continue;
                }
                total += term;
                if want_grad {
                    let g = 2.0 * s * scale;
                    for k in 0..dims {
                        let (av, pv, qv) = (a[k], p[k], q[k]);
                        dz[t.anchor * dims + k] += g * (qv - pv);
                        dz[t.positive * dims + k] -= g * (av - pv);
                        dz[t.negative * dims + k] += g * (av - qv);
                    }
                }
            }
            total * scale
        }
    };
    if !loss.is_finite() {
        return Err(TsaError::Diverged {
            epoch: 0,
            what: format!("loss is {loss}"),
        });
    }
    if !want_grad {
        return Ok((loss, None));
    }

    let mut grads = Gradients::zeros_like(model);
    backprop_network(model, &eval, dz, &mut grads);
    if cfg.mixing == Mixing::Combined {
        let g = grads.blocks.last_mut().unwrap();
        for ((gi, &da), &a) in g.iter_mut().zip(&d_alpha).zip(&eval.alpha) {
            *gi = da * a * (1.0 - a);
        }
    }
    if !grads.is_finite() {
        return Err(TsaError::Diverged {
            epoch: 0,
            what: "non-finite gradient".into(),
        });
    }
    Ok((loss, Some(grads)))
}

/// Gradient of the KL hinge with respect to `alpha` and the learned features.
/// `coef` is the orientation sign over the number of triplets.
fn pdf_backward(
    rows: &LossRows,
    eval: &Evaluation,
    triplets: &[Triplet],
    coef: f64,
    dims: usize,
    d_alpha: &mut [f64],
    dz: &mut [f64],
) {
    let n = rows.n;
    let m = rows.frames.len();
    let mut d_fts = vec![0.0; m * n];
    let s = coef.signum();
    for t in triplets {
        let a = rows.pdf_row(t.anchor);
        let p = rows.pdf_row(t.positive);
        let q = rows.pdf_row(t.negative);
        if s * (kl_unchecked(a, p) - kl_unchecked(a, q)) <= 0.0 {
            continue;
        }
        let (sa, sp, sq) = (
            rows.slot_of(t.anchor),
            rows.slot_of(t.positive),
            rows.slot_of(t.negative),
        );
        for k in 0..n {
            // d/da [KL(a||p) - KL(a||q)] = ln(q/p); d/dp = -a/p; d/dq = a/q
            d_fts[sa * n + k] += coef * (q[k] / p[k]).ln();
            d_fts[sp * n + k] -= coef * a[k] / p[k];
            d_fts[sq * n + k] += coef * a[k] / q[k];
        }
    }

    // back through the mixture, the row normalization and the kernel to the
    // cosine similarities, then to the unit rows
    let mut d_units = vec![0.0; n * dims];
    let mut g_row = vec![0.0; n];
    for (slot, &i) in rows.frames.iter().enumerate() {
        let range = slot * n..(slot + 1) * n;
        let dp = &d_fts[range.clone()];
        if dp.iter().all(|&v| v == 0.0) {
            continue;
        }
        let alpha = eval.alpha[i];
        let fs = &rows.fs[range.clone()];
        let ft = &rows.ft[range.clone()];
        let w = &rows.weights[range];
        // the mixture sums to 1 + N * smoothing regardless of the parameters
        let inv_sum = 1.0 / rows.mix_sums[slot];
        let mut da = 0.0;
        let mut proj = 0.0;
        for k in 0..n {
            let dc = dp[k] * inv_sum;
            da += dc * (ft[k] - fs[k]);
            g_row[k] = dc * (1.0 - alpha);
            proj += g_row[k] * fs[k];
        }
        d_alpha[i] += da;
        let inv_w = 1.0 / rows.weight_sums[slot];
        for k in 0..n {
            let dw = (g_row[k] - proj) * inv_w;
            g_row[k] = dw * semantic_weight_slope(w[k], rows.bandwidth, rows.kernel);
        }
        let ui = &eval.units[i * dims..(i + 1) * dims];
        let mut acc = vec![0.0; dims];
        for (j, &g) in g_row.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let uj = &eval.units[j * dims..(j + 1) * dims];
            for k in 0..dims {
                acc[k] += g * uj[k];
                d_units[j * dims + k] += g * ui[k];
            }
        }
        for k in 0..dims {
            d_units[i * dims + k] += acc[k];
        }
    }

    for i in 0..n {
        let du = &d_units[i * dims..(i + 1) * dims];
        let u = &eval.units[i * dims..(i + 1) * dims];
        let r = eval.norms[i];
        let out = &mut dz[i * dims..(i + 1) * dims];
        if r <= NORM_FLOOR {
            for k in 0..dims {
                out[k] += du[k] / r;
            }
        } else {
            let along = dot(u, du);
            for k in 0..dims {
                out[k] += (du[k] - u[k] * along) / r;
            }
        }
    }
}

fn backprop_network(model: &TsaModel, eval: &Evaluation, dz: Vec<f64>, grads: &mut Gradients) {
    let last = model.layers.len() - 1;
    let mut delta = dz;
    for (k, layer) in model.layers.iter().enumerate().rev() {
        if k != last {
            for (d, &p) in delta.iter_mut().zip(&eval.pres[k]) {
                if p <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        let input = &eval.acts[k];
        let (gw, rest) = grads.blocks[2 * k..].split_at_mut(1);
        let (gw, gb) = (&mut gw[0], &mut rest[0]);
        let mut upstream = vec![0.0; input.len()];
        for ((d_row, x_row), up_row) in delta
            .chunks_exact(layer.outputs)
            .zip(input.chunks_exact(layer.inputs))
            .zip(upstream.chunks_exact_mut(layer.inputs))
        {
            for (o, &d) in d_row.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let w = &layer.weight[o * layer.inputs..(o + 1) * layer.inputs];
                let g = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                for c in 0..layer.inputs {
                    g[c] += d * x_row[c];
                    up_row[c] += d * w[c];
                }
            }
        }
        delta = upstream;
    }
}

fn temporal_rows_for(x: &FeatureMatrix, cfg: &RunConfig) -> Result<TemporalRows> {
    Ok(TemporalRows::new(x.rows(), &TemporalKernel::new(cfg.window)?))
}

/// Loss of `model` on fixed triplets, with the distributions rebuilt from the
/// model's output.
pub fn loss(
    model: &TsaModel,
    x: &FeatureMatrix,
    triplets: &[Triplet],
    cfg: &RunConfig,
) -> Result<f64> {
    let temporal = temporal_rows_for(x, cfg)?;
    Ok(loss_and_grad(model, x, triplets, cfg, &temporal, false)?.0)
}

/// Analytic gradient of [`loss`]. At a hinge boundary the subgradient 0 is
/// used.
pub fn backward(
    model: &TsaModel,
    x: &FeatureMatrix,
    triplets: &[Triplet],
    cfg: &RunConfig,
) -> Result<Gradients> {
    let temporal = temporal_rows_for(x, cfg)?;
    Ok(loss_and_grad(model, x, triplets, cfg, &temporal, true)?
        .1
        .expect("gradient requested"))
}

/// One descent step with L2 weight decay: `p <- p * (1 - 2 lr wd) - lr g`.
pub fn apply_update(model: &mut TsaModel, grads: &Gradients, lr: f64, weight_decay: f64) {
    let shrink = 1.0 - 2.0 * lr * weight_decay;
    for (p, g) in model.blocks_mut().into_iter().zip(&grads.blocks) {
        for (pv, gv) in p.iter_mut().zip(g) {
            *pv = *pv * shrink - lr * gv;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    Converged,
    /// Non-finite loss or gradient; the model is the last finite one.
    Diverged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    /// Mean post-update loss of each completed epoch.
    pub loss_history: Vec<f64>,
    /// Loss before the first update, the reference for the first epoch.
    pub initial_loss: f64,
    /// Learning rate of the next epoch, `lr0 * decay^epoch`.
    pub lr: f64,
    /// Consecutive epochs whose loss changed by less than `epsilon_stop`.
    pub bad_steps: usize,
    pub stop: StopReason,
    pub diagnostic: Option<String>,
}

/// What a caller sees after every epoch.
#[derive(Debug)]
pub struct EpochReport<'a> {
    pub epoch: usize,
    pub loss: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
    /// Triplets of the epoch's last step.
    pub triplets: &'a [Triplet],
}

impl EpochReport<'_> {
    pub fn log_line(&self) -> String {
        format!("epoch {} loss {} lr {}", self.epoch, self.loss, self.lr)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TsaModel,
    pub z: FeatureMatrix,
    pub state: TrainState,
}

/// Draws anchors and triplets from the current model's temporal-semantic
/// distribution.
fn select_triplets(
    eval: &Evaluation,
    dims: usize,
    temporal: &TemporalRows,
    cfg: &RunConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Triplet>> {
    let n = eval.alpha.len();
    let inputs = eval.row_inputs(dims, temporal, cfg);
    // f_ts(i, i); the semantic self-weight is exp(-(1 - u_i.u_i)/h)
    let mut w = vec![0.0; n];
    let mixed_sum = 1.0 + n as f64 * cfg.kl_smoothing;
    let diag: Vec<f64> = (0..n)
        .map(|i| {
            semantic_weights_row(eval.units.as_slice(), dims, i, cfg.bandwidth, cfg.semantic_kernel, &mut w);
            let fs_ii = w[i] / w.iter().sum::<f64>();
            let a = eval.alpha[i];
            (a * temporal.diagonal(i) + (1.0 - a) * fs_ii + cfg.kl_smoothing) / mixed_sum
        })
        .collect();
    let anchors = pool_windows(&diag, cfg.batch_size.min(n), cfg.pool_mode, rng)?;
    let rows = LossRows::build(&inputs, anchors.indices.clone());
    sample_triplets(&rows, &anchors, cfg.per_anchor, cfg.positive_fraction, rng)
}

pub fn train(x: &FeatureMatrix, cfg: &RunConfig) -> Result<TrainOutcome> {
    train_with(x, cfg, |_| {})
}

/// Trains from a fresh model and calls `observe` after every epoch.
pub fn train_with<F>(x: &FeatureMatrix, cfg: &RunConfig, mut observe: F) -> Result<TrainOutcome>
where
    F: FnMut(&EpochReport<'_>),
{
    cfg.validate()?;
    let n = x.rows();
    if n < 3 {
        return Err(TsaError::InvalidArgument(format!(
            "training needs at least 3 frames, got {n}"
        )));
    }
    let dims = x.cols();
    let hidden = if cfg.hidden_width == 0 { dims } else { cfg.hidden_width };
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = TsaModel::new(dims, n, hidden, cfg.hidden_layers, &mut init_rng)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let temporal = temporal_rows_for(x, cfg)?;

    let mut state = TrainState {
        epoch: 0,
        loss_history: Vec::new(),
        initial_loss: f64::NAN,
        lr: cfg.learning_rate,
        bad_steps: 0,
        stop: StopReason::MaxEpochs,
        diagnostic: None,
    };

    'epochs: while state.epoch < cfg.max_epochs {
        let lr = state.lr;
        let mut epoch_loss = 0.0;
        let mut last_triplets = Vec::new();
        for _ in 0..cfg.steps_per_epoch {
            let step = (|| -> Result<(f64, Vec<Triplet>, TsaModel)> {
                let eval = Evaluation::new(&model, x, cfg.mixing)?;
                let triplets = select_triplets(&eval, dims, &temporal, cfg, &mut rng)?;
                let (before, grads) = loss_and_grad(&model, x, &triplets, cfg, &temporal, true)?;
                if state.initial_loss.is_nan() {
                    state.initial_loss = before;
                }
                let mut next = model.clone();
                apply_update(&mut next, &grads.unwrap(), lr, cfg.weight_decay);
                if !next.is_finite() {
                    return Err(TsaError::Diverged {
                        epoch: state.epoch + 1,
                        what: "non-finite parameters".into(),
                    });
                }
                let after = loss_and_grad(&next, x, &triplets, cfg, &temporal, false)?.0;
                Ok((after, triplets, next))
            })();
            match step {
                Ok((after, triplets, next)) => {
                    model = next;
                    epoch_loss += after;
                    last_triplets = triplets;
                }
                Err(TsaError::Diverged { what, .. }) => {
                    state.stop = StopReason::Diverged;
                    state.diagnostic = Some(format!("epoch {}: {what}", state.epoch + 1));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        epoch_loss /= cfg.steps_per_epoch as f64;
        let previous = state
            .loss_history
            .last()
            .copied()
            .unwrap_or(state.initial_loss);
        state.epoch += 1;
        state.loss_history.push(epoch_loss);
        state.lr = lr * cfg.lr_decay;
        if (epoch_loss - previous).abs() < cfg.epsilon_stop {
            state.bad_steps += 1;
        } else {
            state.bad_steps = 0;
        }
        observe(&EpochReport {
            epoch: state.epoch,
            loss: epoch_loss,
            lr,
            triplets: &last_triplets,
        });
        if state.epoch >= cfg.min_epochs && state.bad_steps >= cfg.patience {
            state.stop = StopReason::Converged;
            break;
        }
    }

    let z = forward(&model, x)?;
    Ok(TrainOutcome { model, z, state })
}

/// Text serialization of a model: a `layers` header, then each layer as
/// `inputs outputs` followed by its weight and bias rows, then `alpha_raw`.
pub fn format_model(model: &TsaModel) -> String {
    let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
    let mut out = format!("layers {}\n", model.layers.len());
    for l in &model.layers {
        out.push_str(&format!("{} {}\n", l.inputs, l.outputs));
        for row in l.weight.chunks_exact(l.inputs) {
            out.push_str(&join(row));
            out.push('\n');
        }
        out.push_str(&join(&l.bias));
        out.push('\n');
    }
    out.push_str(&format!("alpha_raw {}\n", model.alpha_raw.len()));
    out.push_str(&join(&model.alpha_raw));
    out.push('\n');
    out
}

pub fn parse_model(text: &str) -> Result<TsaModel> {
    let bad = |m: &str| TsaError::MalformedHeader(format!("model file: {m}"));
    let mut lines = text.lines();
    let mut next = || lines.next().ok_or_else(|| bad("truncated"));
    let nums = |line: &str| -> Result<Vec<f64>> {
        line.split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| bad(t)))
            .collect()
    };
    let count: usize = next()?
        .strip_prefix("layers ")
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| bad("layers header"))?;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let shape = nums(next()?)?;
        let [inputs, outputs] = shape[..] else {
            return Err(bad("layer shape"));
        };
        let (inputs, outputs) = (inputs as usize, outputs as usize);
        let mut weight = Vec::with_capacity(inputs * outputs);
        for _ in 0..outputs {
            weight.extend(nums(next()?)?);
        }
        let bias = nums(next()?)?;
        if weight.len() != inputs * outputs || bias.len() != outputs {
            return Err(bad("layer size"));
        }
        layers.push(Dense {
            inputs,
            outputs,
            weight,
            bias,
        });
    }
    let alpha_len: usize = next()?
        .strip_prefix("alpha_raw ")
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| bad("alpha header"))?;
    let alpha_raw = if alpha_len == 0 { Vec::new() } else { nums(next()?)? };
    if alpha_raw.len() != alpha_len || layers.is_empty() {
        return Err(bad("alpha size"));
    }
    Ok(TsaModel { layers, alpha_raw })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::{combine, semantic_distribution_with, temporal_distribution};
    use rand::Rng;

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> FeatureMatrix {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        FeatureMatrix::new(rows, cols, data).unwrap()
    }

    fn random_triplets(n: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<Triplet> {
        (0..count)
            .map(|_| {
                let mut t = [0usize; 3];
                while t[0] == t[1] || t[0] == t[2] || t[1] == t[2] {
                    t = [rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0..n)];
                }
                Triplet { anchor: t[0], positive: t[1], negative: t[2] }
            })
            .collect()
    }

    /// The loss rebuilt from whole matrices through the public API.
    fn full_loss(model: &TsaModel, x: &FeatureMatrix, triplets: &[Triplet], cfg: &RunConfig) -> f64 {
        let z = forward(model, x).unwrap();
        let fs = semantic_distribution_with(&z, cfg.bandwidth, cfg.semantic_kernel).unwrap();
        let ft = temporal_distribution(x.rows(), &TemporalKernel::new(cfg.window).unwrap()).unwrap();
        let f = combine(&fs, &ft, &model.alpha(cfg.mixing), cfg.kl_smoothing).unwrap();
        triplet_loss(&f, triplets, cfg.loss_orientation).unwrap()
    }

    fn check_gradients(cfg: &RunConfig, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, d) = (20, 8);
        let x = random_matrix(n, d, &mut rng);
        let mut model = TsaModel::new(d, n, d, 1, &mut rng).unwrap();
        for a in model.alpha_raw.iter_mut() {
            *a = rng.random_range(-2.0..2.0);
        }
        let triplets = random_triplets(n, 12, &mut rng);
        let grads = backward(&model, &x, &triplets, cfg).unwrap();
        let analytic_loss = loss(&model, &x, &triplets, cfg).unwrap();
        assert!((analytic_loss - full_loss(&model, &x, &triplets, cfg)).abs() < 1e-12);

        let step = 1e-5;
        let mut worst: f64 = 0.0;
        let sizes: Vec<usize> = model.blocks().iter().map(|b| b.len()).collect();
        for (b, &len) in sizes.iter().enumerate() {
            for k in 0..len {
                let orig = model.blocks()[b][k];
                model.blocks_mut()[b][k] = orig + step;
                let up = full_loss(&model, &x, &triplets, cfg);
                model.blocks_mut()[b][k] = orig - step;
                let down = full_loss(&model, &x, &triplets, cfg);
                model.blocks_mut()[b][k] = orig;
                let fd = (up - down) / (2.0 * step);
                let a = grads.blocks[b][k];
                worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6));
            }
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = RunConfig::default();
        for seed in 0..5 {
            let err = check_gradients(&cfg, seed);
            assert!(err < 1e-4, "seed {seed}: relative error {err}");
        }
    }

    #[test]
    fn gradient_variants_match_finite_differences() {
        let variants = [
            ("loss_orientation", "literal"),
            ("semantic_kernel", "literal"),
            ("mixing", "semantic"),
            ("h", "0.3"),
        ];
        for (key, value) in variants {
            let mut cfg = RunConfig::default();
            cfg.set(key, value).unwrap();
            let err = check_gradients(&cfg, 11);
            assert!(err < 1e-4, "{key}={value}: relative error {err}");
        }
    }

    #[test]
    fn raw_feature_gradient() {
        let cfg = RunConfig { loss_kind: LossKind::RawFeature, ..RunConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_matrix(10, 4, &mut rng);
        let mut model = TsaModel::new(4, 10, 4, 1, &mut rng).unwrap();
        let triplets = random_triplets(10, 8, &mut rng);
        let grads = backward(&model, &x, &triplets, &cfg).unwrap();
        let raw = |m: &TsaModel| raw_triplet_loss(&forward(m, &x).unwrap(), &triplets, cfg.loss_orientation).unwrap();
        assert!((raw(&model) - loss(&model, &x, &triplets, &cfg).unwrap()).abs() < 1e-12);
        for k in 0..model.layers[0].weight.len() {
            let orig = model.layers[0].weight[k];
            model.layers[0].weight[k] = orig + 1e-6;
            let up = raw(&model);
            model.layers[0].weight[k] = orig - 1e-6;
            let down = raw(&model);
            model.layers[0].weight[k] = orig;
            let fd = (up - down) / 2e-6;
            assert!((fd - grads.blocks[0][k]).abs() < 1e-6 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn forward_examples() {
        // identity layers, positive input passes through the ReLU untouched
        let id = vec![1.0, 0.0, 0.0, 1.0];
        let m = TsaModel::from_parts(id.clone(), vec![0.0; 2], id.clone(), vec![0.0; 2], vec![]).unwrap();
        let x = FeatureMatrix::from_rows(&[vec![1.0, 2.0], vec![1.0, -1.0]]).unwrap();
        let z = forward(&TsaModel { alpha_raw: vec![0.0; 2], ..m.clone() }, &x).unwrap();
        assert_eq!(z.row(0), &[1.0, 2.0]);
        assert_eq!(z.row(1), &[1.0, 0.0]);
        let zero = TsaModel::from_parts(vec![0.0; 4], vec![0.0; 2], vec![0.0; 4], vec![0.5, -3.0], vec![0.0; 2]).unwrap();
        let z = forward(&zero, &x).unwrap();
        assert_eq!(z.row(0), &[0.5, -3.0]);
        assert_eq!(z.row(1), &[0.5, -3.0]);
        assert!(forward(&zero, &FeatureMatrix::zeros(2, 3).unwrap()).is_err());
    }

    #[test]
    fn kl_examples() {
        let p = [0.5, 0.5];
        let q = [0.25, 0.75];
        let expected = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((kl_divergence(&p, &q).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.143841).abs() < 1e-6);
        assert!((kl_divergence(&q, &p).unwrap() - expected).abs() > 1e-3);
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        assert!(kl_divergence(&p, &[1.0, 0.0]).is_err());
        assert!(kl_divergence(&p, &[1.0]).is_err());
    }

    #[test]
    fn loss_on_hand_built_rows() {
        let rows = [0.6, 0.3, 0.1, 0.3, 0.6, 0.1, 0.1, 0.1, 0.8];
        let f = crate::similarity::AffinityMatrix::from_rows(3, crate::similarity::AffinityKind::Combined, rows.to_vec()).unwrap();
        let t = [Triplet { anchor: 0, positive: 1, negative: 2 }];
        let kl = |p: &[f64], q: &[f64]| -> f64 { p.iter().zip(q).map(|(a, b)| a * (a / b).ln()).sum() };
        let d = kl(&rows[0..3], &rows[3..6]) - kl(&rows[0..3], &rows[6..9]);
        assert!(d < 0.0);
        assert_eq!(triplet_loss(&f, &t, LossOrientation::Standard).unwrap(), 0.0);
        assert!((triplet_loss(&f, &t, LossOrientation::Literal).unwrap() + d).abs() < 1e-15);
        assert!(matches!(triplet_loss(&f, &[], LossOrientation::Standard), Err(TsaError::EmptyTriplets)));
    }

    #[test]
    fn weight_decay_alone_shrinks_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut model = TsaModel::new(4, 6, 4, 1, &mut rng).unwrap();
        let before = model.clone();
        let zero = Gradients::zeros_like(&model);
        assert!(zero.is_zero());
        apply_update(&mut model, &zero, 0.5, 1e-3);
        let factor = 1.0 - 2.0 * 0.5 * 1e-3;
        for (a, b) in model.blocks().iter().zip(before.blocks()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(*x, y * factor);
            }
        }
    }

    #[test]
    fn alpha_saturates_cleanly() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = TsaModel::new(2, 3, 2, 1, &mut rng).unwrap();
        model.alpha_raw = vec![-800.0, 0.0, 800.0];
        assert_eq!(model.alpha(Mixing::Combined), vec![0.0, 0.5, 1.0]);
        assert_eq!(model.alpha(Mixing::SemanticOnly), vec![0.0; 3]);
        assert_eq!(model.alpha(Mixing::TemporalOnly), vec![1.0; 3]);
    }

    #[test]
    fn training_bounds_and_determinism() {
        let (x, _) = crate::synth::generate(&crate::synth::SynthSpec { seed: 4, ..Default::default() }).unwrap();
        let mut cfg = RunConfig { min_epochs: 2, max_epochs: 2, epsilon_stop: 10.0, ..RunConfig::default() };
        let a = train(&x, &cfg).unwrap();
        assert_eq!(a.state.epoch, 2);
        assert_eq!(a.state.loss_history.len(), 2);
        let b = train(&x, &cfg).unwrap();
        assert_eq!(a.z, b.z);
        assert_eq!(a.model, b.model);
        cfg.seed = 1;
        assert_ne!(train(&x, &cfg).unwrap().z, a.z);
    }

    #[test]
    fn constant_video_stops_at_min_epochs() {
        let x = FeatureMatrix::new(30, 3, [0.2, -0.4, 0.9].repeat(30)).unwrap();
        let cfg = RunConfig { min_epochs: 3, max_epochs: 20, ..RunConfig::default() };
        let mut lines = Vec::new();
        let out = train_with(&x, &cfg, |r| lines.push(r.log_line())).unwrap();
        assert_eq!(out.state.loss_history[0], 0.0);
        assert_eq!(out.state.epoch, 3);
        assert_eq!(out.state.stop, StopReason::Converged);
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("epoch 1 loss 0 lr "));
    }

    #[test]
    fn model_text_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut model = TsaModel::new(3, 5, 4, 2, &mut rng).unwrap();
        model.alpha_raw = vec![0.1, -1.0 / 3.0, 2.5e-300, 0.0, 7.0];
        let text = format_model(&model);
        assert_eq!(parse_model(&text).unwrap(), model);
        assert!(parse_model("layers 1\n2 2\n1 2\n").is_err());
    }
}
