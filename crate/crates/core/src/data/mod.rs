//! Datasets, configuration and on-disk artifact formats.

pub mod artifacts;
pub mod config;
pub mod dataset;
pub mod idx;

pub use config::{load_config, parse_config, DataSource, ExperimentConfig, Task};
pub use dataset::{gen_blobs, Dataset};
pub use idx::load_idx;
