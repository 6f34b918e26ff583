//! Optimization, checkpoints, evaluation and saliency.

mod adam;
mod checkpoint;
mod config;
mod saliency;
mod trainer;

pub use adam::{AdamHyper, AdamState};
pub use checkpoint::{Checkpoint, Predictor, Progress, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::TrainConfig;
pub use saliency::{saliency, ResidueScore, SaliencyReport};
pub use trainer::{
    batch_gradients, evaluate, evaluation_loss, train, EpochRecord, StopReason, TrainOptions, TrainOutcome,
};

use crate::data::DataError;
use crate::metrics::MetricError;
use crate::model::ModelError;
use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },
    #[error("training diverged at epoch {epoch}, step {step}: {reason}")]
    Diverged { epoch: u64, step: u64, reason: String, last_good: Box<Checkpoint> },
    #[error("{} record(s) could not be encoded; first: {}", .0.len(), .0.first().map(|(i, m)| format!("record {i}: {m}")).unwrap_or_default())]
    Encode(Vec<(usize, String)>),
    #[error("{0} set is empty")]
    EmptyDataset(&'static str),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;
