//! Neural-network training with Gaussian-sampled epoch skipping.
//!
//! The crate provides a small deterministic dense-network engine ([`nn`]),
//! the epoch-skipping training loop ([`sampler`]), normality diagnostics for
//! parameter deltas ([`stats`]), a FLOPs model ([`flops`]), a federated
//! simulator with round skipping ([`fedsim`]), data and artifact I/O
//! ([`data`]) and the command-line driver ([`cli`]).

pub mod cli;
pub mod data;
pub mod error;
pub mod fedsim;
pub mod flops;
pub mod nn;
pub mod rng;
pub mod sampler;
pub mod stats;

pub use error::{Error, Result};
