//! Model parameters, datasets, local training and evaluation.

mod data;
pub mod mnist;
mod model;
mod param;
pub mod synthetic;
mod train;

pub use data::{orbit_labels, partition_indices, partition_non_iid, LabeledDataset};
pub use model::{ModelKind, ModelLayout};
pub use param::ParamVector;
pub use train::{evaluate, local_loss, predict, train_local, Evaluation, TrainConfig};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite gradient in epoch {epoch}, batch {batch}")]
    NonFiniteGradient { epoch: usize, batch: usize },
    #[error("partition error: {0}")]
    Partition(String),
    #[error("malformed IDX data: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(String),
}
