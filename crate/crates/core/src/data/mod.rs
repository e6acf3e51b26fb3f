//! Dataset ingestion, synthetic generators and the checkpoint container.

pub mod checkpoint;
pub mod dataset;
pub mod idx;
pub mod synthetic;

pub use checkpoint::{CheckpointContainer, CheckpointKind, NamedBlob};
pub use dataset::{Batch, Dataset};
pub use idx::load_idx;
pub use synthetic::{make_synthetic, make_synthetic_with, SyntheticKind, SyntheticSpec};
