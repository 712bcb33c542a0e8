//! The classifier, its training loop and persistence.

mod block;
mod checkpoint;
mod config;
mod dataset;
mod metrics;
mod model;
mod optim;
mod train;

pub use block::{FrontConv, GrasensBlock};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{BlockConfig, BlockToggles, DataConfig, InputShape, ModelConfig, TrainConfig, ABLATION_TOKENS};
pub use dataset::{Dataset, Sample};
pub use metrics::{accuracy, fmt_metric, precision, Metrics};
pub use model::{argmax, mean_cross_entropy, Evaluation, Model};
pub use optim::Sgd;
pub use train::{evaluate, metrics_csv, train, EpochRecord, TrainOutcome, METRICS_HEADER};
