//! Dataset ingestion, subsampling and checkpoint files.

mod checkpoint;
mod dataset;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, SCHEMA_VERSION};
pub use dataset::{load_dataset, parse_dataset, subsample, DatasetError};
