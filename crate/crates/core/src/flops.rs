//! Integer FLOPs model for backprop and sampled epochs.
//!
//! Backward is counted as twice the forward cost. A parameter update costs
//! 3 ops per parameter per optimizer step; a sampled epoch costs 4 ops per
//! parameter (fit, draw, add). Savings are reported as the fraction of the
//! all-backprop training cost that sampled epochs avoided.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{Layer, ModelSpec};

pub const BACKWARD_FACTOR: u64 = 2;
pub const UPDATE_OPS_PER_PARAM: u64 = 3;
pub const SAMPLE_OPS_PER_PARAM: u64 = 4;
pub const HEAD_OPS_PER_CLASS: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EpochMode {
    Backprop,
    Sampled,
}

impl EpochMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EpochMode::Backprop => "backprop",
            EpochMode::Sampled => "sampled",
        }
    }
}

impl fmt::Display for EpochMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EpochMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "backprop" => Ok(EpochMode::Backprop),
            "sampled" => Ok(EpochMode::Sampled),
            other => Err(Error::InvalidArgument(format!(
                "unknown epoch mode `{other}`"
            ))),
        }
    }
}

/// Forward FLOPs of one layer over `batch` samples. `width` is the layer's input width.
pub fn layer_forward_flops(layer: &Layer, width: usize, batch: u64) -> u64 {
    match *layer {
        Layer::Dense {
            input,
            output,
            bias,
        } => {
            let (i, o) = (input as u64, output as u64);
            batch * (2 * i * o + if bias { o } else { 0 })
        }
        Layer::Relu => batch * width as u64,
        Layer::SoftmaxCrossEntropyHead { classes } => batch * HEAD_OPS_PER_CLASS * classes as u64,
    }
}

pub fn forward_flops_per_sample(spec: &ModelSpec) -> u64 {
    spec.layers()
        .iter()
        .zip(spec.input_widths())
        .map(|(layer, width)| layer_forward_flops(layer, width, 1))
        .sum()
}

/// Training FLOPs of one epoch over `n_samples` in minibatches of `batch_size`.
pub fn epoch_flops(spec: &ModelSpec, n_samples: usize, batch_size: usize, mode: EpochMode) -> u64 {
    let params = spec.param_count() as u64;
    match mode {
        EpochMode::Backprop => {
            let steps = n_samples.div_ceil(batch_size.max(1)) as u64;
            n_samples as u64 * (1 + BACKWARD_FACTOR) * forward_flops_per_sample(spec)
                + UPDATE_OPS_PER_PARAM * params * steps
        }
        EpochMode::Sampled => SAMPLE_OPS_PER_PARAM * params,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LedgerEntry {
    pub epoch: usize,
    pub mode: EpochMode,
    pub flops: u64,
}

/// Per-epoch FLOPs with a running total.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlopsLedger {
    entries: Vec<LedgerEntry>,
    cumulative: u64,
    /// Cost of one backprop epoch; the baseline that sampled epochs avoid.
    backprop_epoch: u64,
}

impl FlopsLedger {
    pub fn new(backprop_epoch: u64) -> Self {
        Self {
            entries: Vec::new(),
            cumulative: 0,
            backprop_epoch,
        }
    }

    /// Appends an entry and returns the new cumulative total.
    pub fn record(&mut self, epoch: usize, mode: EpochMode, flops: u64) -> u64 {
        self.entries.push(LedgerEntry { epoch, mode, flops });
        self.cumulative += flops;
        self.cumulative
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn cumulative(&self) -> u64 {
        self.cumulative
    }

    pub fn backprop_epoch_flops(&self) -> u64 {
        self.backprop_epoch
    }

    pub fn count(&self, mode: EpochMode) -> usize {
        self.entries.iter().filter(|e| e.mode == mode).count()
    }

    /// Training FLOPs actually spent on backprop epochs.
    pub fn training_flops(&self) -> u64 {
        self.entries
            .iter()
            .filter(|e| e.mode == EpochMode::Backprop)
            .map(|e| e.flops)
            .sum()
    }

    /// Skipped backprop FLOPs over the all-backprop total.
    pub fn savings_fraction(&self) -> Result<f64> {
        if self.entries.is_empty() {
            return Err(Error::Empty("flops ledger"));
        }
        let skipped = self.count(EpochMode::Sampled) as u64 * self.backprop_epoch;
        let total = self.entries.len() as u64 * self.backprop_epoch;
        if total == 0 {
            return Ok(0.0);
        }
        Ok(skipped as f64 / total as f64)
    }
}
