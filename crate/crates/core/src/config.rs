//! Training configuration and its line-oriented `key = value` file format.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Result, TsaError};

/// Operand order of the KL hinge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossOrientation {
    /// `max(0, KL(a||pos) - KL(a||neg))`: pulls anchors toward positives.
    Standard,
    /// `max(0, KL(a||neg) - KL(a||pos))`.
    Literal,
}

/// How cosine similarity enters the semantic kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SemanticKernel {
    /// `exp(-(1 - cos_sim)/h)`: similar frames weigh more.
    Similarity,
    /// `exp(-(1 - cos_dist)/h) = exp(-cos_sim/h)`.
    Literal,
}

/// Which distributions form the per-frame mixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mixing {
    /// Learned per-frame `alpha`.
    Combined,
    /// `alpha = 0` (semantic only).
    SemanticOnly,
    /// `alpha = 1` (temporal only).
    TemporalOnly,
}

/// What the triplet hinge compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// KL divergences between rows of the temporal-semantic distribution.
    Pdf,
    /// Squared Euclidean distances between learned feature vectors.
    RawFeature,
}

/// How one anchor is drawn from each downsampling window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    /// Probability proportional to the frame's self-affinity.
    SelfAffinity,
    Uniform,
}

macro_rules! keyword_enum {
    ($ty:ident { $($variant:ident => $kw:literal),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = TsaError;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($kw => Ok($ty::$variant),)+
                    other => Err(TsaError::Config(format!(
                        "unknown {} {other:?}", stringify!($ty)
                    ))),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $kw,)+ })
            }
        }
    };
}

keyword_enum!(LossOrientation { Standard => "standard", Literal => "literal" });
keyword_enum!(SemanticKernel { Similarity => "similarity", Literal => "literal" });
keyword_enum!(Mixing { Combined => "combined", SemanticOnly => "semantic", TemporalOnly => "temporal" });
keyword_enum!(LossKind { Pdf => "pdf", RawFeature => "raw" });
keyword_enum!(PoolMode { SelfAffinity => "self_affinity", Uniform => "uniform" });

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Temporal window `L`; the temporal weight crosses zero at `L/2`.
    pub window: usize,
    /// Semantic kernel bandwidth `h`.
    pub bandwidth: f64,
    /// Downsampling window length, which is also the batch size.
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Per-epoch multiplicative learning-rate decay.
    pub lr_decay: f64,
    pub weight_decay: f64,
    /// Early-stop threshold on the change of the epoch loss.
    pub epsilon_stop: f64,
    pub patience: usize,
    pub min_epochs: usize,
    pub max_epochs: usize,
    /// Gradient steps per epoch, each on freshly pooled anchors.
    pub steps_per_epoch: usize,
    pub seed: u64,
    pub positive_fraction: f64,
    pub kl_smoothing: f64,
    pub loss_orientation: LossOrientation,
    pub semantic_kernel: SemanticKernel,
    pub mixing: Mixing,
    pub loss_kind: LossKind,
    pub pool_mode: PoolMode,
    pub per_anchor: usize,
    /// Hidden layer width; 0 means "same as the input".
    pub hidden_width: usize,
    pub hidden_layers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            window: 6,
            bandwidth: 1.0,
            batch_size: 32,
            learning_rate: 0.051,
            lr_decay: 0.3,
            weight_decay: 1e-3,
            epsilon_stop: 0.032,
            patience: 2,
            min_epochs: 2,
            max_epochs: 50,
            steps_per_epoch: 1,
            seed: 0,
            positive_fraction: 0.05,
            kl_smoothing: 1e-8,
            loss_orientation: LossOrientation::Standard,
            semantic_kernel: SemanticKernel::Similarity,
            mixing: Mixing::Combined,
            loss_kind: LossKind::Pdf,
            pool_mode: PoolMode::SelfAffinity,
            per_anchor: 1,
            hidden_width: 0,
            hidden_layers: 1,
        }
    }
}

/// Config keys in canonical order.
pub const CONFIG_KEYS: &[&str] = &[
    "L",
    "h",
    "batch_size",
    "learning_rate",
    "lr_decay",
    "weight_decay",
    "epsilon_stop",
    "patience",
    "min_epochs",
    "max_epochs",
    "steps_per_epoch",
    "seed",
    "positive_fraction",
    "kl_smoothing",
    "loss_orientation",
    "semantic_kernel",
    "mixing",
    "loss_kind",
    "pool_mode",
    "per_anchor",
    "hidden_width",
    "hidden_layers",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| TsaError::Config(format!("{key}: cannot parse {value:?}")))
}

impl RunConfig {
    /// Settings used for Breakfast-style videos.
    pub fn breakfast() -> Self {
        RunConfig {
            window: 6,
            batch_size: 128,
            learning_rate: 0.051,
            epsilon_stop: 0.032,
            ..RunConfig::default()
        }
    }

    /// Settings used for instructional videos with heavy background.
    pub fn inria() -> Self {
        RunConfig {
            window: 9,
            batch_size: 12,
            learning_rate: 0.403,
            epsilon_stop: 0.892,
            ..RunConfig::default()
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "L" => self.window = parse(key, value)?,
            "h" => self.bandwidth = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "lr_decay" => self.lr_decay = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "epsilon_stop" => self.epsilon_stop = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "min_epochs" => self.min_epochs = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "steps_per_epoch" => self.steps_per_epoch = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "positive_fraction" => self.positive_fraction = parse(key, value)?,
            "kl_smoothing" => self.kl_smoothing = parse(key, value)?,
            "loss_orientation" => self.loss_orientation = value.parse()?,
            "semantic_kernel" => self.semantic_kernel = value.parse()?,
            "mixing" => self.mixing = value.parse()?,
            "loss_kind" => self.loss_kind = value.parse()?,
            "pool_mode" => self.pool_mode = value.parse()?,
            "per_anchor" => self.per_anchor = parse(key, value)?,
            "hidden_width" => self.hidden_width = parse(key, value)?,
            "hidden_layers" => self.hidden_layers = parse(key, value)?,
            other => return Err(TsaError::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a `key = value` document on top of `self`. `#` starts a comment.
    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| TsaError::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| TsaError::io(path, e))?;
        let mut cfg = RunConfig::default();
        cfg.apply_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "L" => self.window.to_string(),
            "h" => self.bandwidth.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "lr_decay" => self.lr_decay.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "epsilon_stop" => self.epsilon_stop.to_string(),
            "patience" => self.patience.to_string(),
            "min_epochs" => self.min_epochs.to_string(),
            "max_epochs" => self.max_epochs.to_string(),
            "steps_per_epoch" => self.steps_per_epoch.to_string(),
            "seed" => self.seed.to_string(),
            "positive_fraction" => self.positive_fraction.to_string(),
            "kl_smoothing" => self.kl_smoothing.to_string(),
            "loss_orientation" => self.loss_orientation.to_string(),
            "semantic_kernel" => self.semantic_kernel.to_string(),
            "mixing" => self.mixing.to_string(),
            "loss_kind" => self.loss_kind.to_string(),
            "pool_mode" => self.pool_mode.to_string(),
            "per_anchor" => self.per_anchor.to_string(),
            "hidden_width" => self.hidden_width.to_string(),
            "hidden_layers" => self.hidden_layers.to_string(),
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(TsaError::Config(msg.to_string()));
        if self.window == 0 {
            return fail("L must be positive");
        }
        if !(self.bandwidth > 0.0) {
            return fail("h must be positive");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return fail("learning_rate must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return fail("lr_decay must be in (0, 1]");
        }
        if !(self.weight_decay >= 0.0) {
            return fail("weight_decay must be non-negative");
        }
        if !(self.epsilon_stop > 0.0) {
            return fail("epsilon_stop must be positive");
        }
        if self.patience == 0 || self.min_epochs == 0 || self.steps_per_epoch == 0 {
            return fail("patience, min_epochs and steps_per_epoch must be positive");
        }
        if self.min_epochs > self.max_epochs {
            return fail("min_epochs must not exceed max_epochs");
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return fail("positive_fraction must be in (0, 1)");
        }
        if !(self.kl_smoothing > 0.0) {
            return fail("kl_smoothing must be positive");
        }
        if self.per_anchor == 0 || self.hidden_layers == 0 {
            return fail("per_anchor and hidden_layers must be positive");
        }
        Ok(())
    }
}

impl fmt::Display for RunConfig {
    /// Every key with its resolved value, one `key = value` per line.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for key in CONFIG_KEYS {
            writeln!(f, "{key} = {}", self.get(key).unwrap())?;
        }
        Ok(())
    }
}
