//! Temporal-semantic aware (TSA) frame representations for unsupervised
//! action segmentation of a single video.
//!
//! A small MLP maps per-frame features `X` to `Z`. It is trained with a
//! triplet hinge on KL divergences between rows of a per-frame mixture of a
//! temporal and a semantic similarity distribution. Generic clustering of `Z`
//! then gives the segmentation, which is scored against ground truth after
//! Hungarian matching.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cluster;
pub mod config;
pub mod data_io;
pub mod error;
pub mod evaluate;
pub mod model;
pub mod plot;
pub mod similarity;
pub mod synth;
pub mod triplet;

pub use cluster::{Method, Segmentation};
pub use config::RunConfig;
pub use data_io::{FeatureFormat, FeatureMatrix, LabelSequence};
pub use error::{Result, TsaError};
pub use evaluate::Scores;
pub use model::{train, TrainOutcome, TsaModel};
pub use similarity::{AffinityMatrix, TemporalKernel};
