//! Epoch skipping through Gaussian-sampled parameter updates.

pub mod gauss;
pub mod strategy;
pub mod train;

pub use gauss::{
    apply_sampled_update, compute_error, fit_layer_gaussians, sample_update, EpochError,
    GaussParams, LayerGauss, DEFAULT_EPSILON,
};
pub use strategy::{schedule, should_sample, SamplingStrategy, MIN_HISTORY};
pub use train::{train_with_gradsamp, EpochRecord, RunReport, TrainRunConfig};
