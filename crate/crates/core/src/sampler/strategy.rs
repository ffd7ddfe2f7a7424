use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};

/// Number of backprop epochs that must precede the first sampled one.
pub const MIN_HISTORY: usize = 2;

/// When to replace a backprop epoch with a sampled update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum SamplingStrategy {
    #[default]
    Never,
    /// Every `period`-th epoch (1-based) is sampled.
    Periodic { period: usize },
    /// Each epoch is sampled with probability `p`.
    Probabilistic { p: f64 },
    /// `Periodic` restricted to the second half of training.
    DelayedPeriodic { period: usize },
    /// `Probabilistic` restricted to the second half of training.
    DelayedRandom { p: f64 },
}

impl SamplingStrategy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SamplingStrategy::Never => Ok(()),
            SamplingStrategy::Periodic { period }
            | SamplingStrategy::DelayedPeriodic { period } => {
                if period < 2 {
                    return Err(Error::InvalidArgument(format!(
                        "period must be >= 2, got {period}"
                    )));
                }
                Ok(())
            }
            SamplingStrategy::Probabilistic { p } | SamplingStrategy::DelayedRandom { p } => {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::InvalidArgument(format!(
                        "p must lie in [0, 1], got {p}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Short label used for output directories: `never`, `pe5`, `pr0.5`, `dp10`, `dr0.7`.
    pub fn tag(&self) -> String {
        match *self {
            SamplingStrategy::Never => "never".into(),
            SamplingStrategy::Periodic { period } => format!("pe{period}"),
            SamplingStrategy::Probabilistic { p } => format!("pr{p}"),
            SamplingStrategy::DelayedPeriodic { period } => format!("dp{period}"),
            SamplingStrategy::DelayedRandom { p } => format!("dr{p}"),
        }
    }

    fn uses_coin(&self) -> bool {
        matches!(
            self,
            SamplingStrategy::Probabilistic { .. } | SamplingStrategy::DelayedRandom { .. }
        )
    }
}

impl fmt::Display for SamplingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

/// Decides whether epoch `epoch` (0-based) of `total` is sampled.
///
/// Random strategies draw exactly one coin per call, even when the history
/// guard or the delay forces `false`, so the schedule prefix does not depend
/// on `total`.
pub fn should_sample<R: Rng + ?Sized>(
    strategy: &SamplingStrategy,
    epoch: usize,
    total: usize,
    coin: &mut R,
) -> bool {
    let heads = if strategy.uses_coin() {
        let p = match *strategy {
            SamplingStrategy::Probabilistic { p } | SamplingStrategy::DelayedRandom { p } => p,
            _ => unreachable!(),
        };
        Some(coin.random::<f64>() < p)
    } else {
        None
    };
    if epoch < MIN_HISTORY {
        return false;
    }
    let delayed = epoch < total / 2;
    match *strategy {
        SamplingStrategy::Never => false,
        SamplingStrategy::Periodic { period } => (epoch + 1).is_multiple_of(period),
        SamplingStrategy::DelayedPeriodic { period } => {
            !delayed && (epoch + 1).is_multiple_of(period)
        }
        SamplingStrategy::Probabilistic { .. } => heads == Some(true),
        SamplingStrategy::DelayedRandom { .. } => !delayed && heads == Some(true),
    }
}

/// The full schedule for `total` epochs.
pub fn schedule<R: Rng + ?Sized>(
    strategy: &SamplingStrategy,
    total: usize,
    coin: &mut R,
) -> Vec<bool> {
    (0..total)
        .map(|k| should_sample(strategy, k, total, coin))
        .collect()
}
