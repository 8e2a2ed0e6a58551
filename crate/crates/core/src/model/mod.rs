//! The cross-attention scorer: configuration, parameters, forward and
//! reverse passes, ranking losses, training and checkpoints.

mod checkpoint;
mod config;
mod forward;
mod loss;
mod params;
mod train;

pub use checkpoint::{Checkpoint, CheckpointHeader};
pub use config::{LossKind, ModelConfig, PositionalMode};
pub use forward::{CraftModel, ForwardPass, Gradients, Mode};
pub use loss::{bce_loss, bce_loss_grad, bpr_loss, bpr_loss_grad, pair_loss};
pub use params::{CraftParams, IntervalParams, LayerParams, ProjectionParams};
pub use train::{batch_loss, train_epoch, EpochStats, TrainContext};

use thiserror::Error;

use crate::dataprep::DataError;
use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("query {query} has no history before its timestamp and cannot be scored")]
    ColdSource { query: usize },
    #[error("malformed batch: {0}")]
    BatchShape(String),
    #[error("non-finite loss in batch {batch}")]
    NonFiniteLoss { batch: usize },
    #[error("non-finite parameters after batch {batch}")]
    NonFiniteParams { batch: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
