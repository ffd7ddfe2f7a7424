//! Training loop that replaces scheduled backprop epochs with sampled updates.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::flops::{epoch_flops, EpochMode, FlopsLedger};
use crate::nn::{
    backprop_epoch, evaluate, init_params, ModelSpec, ParamVector, SgdHyper, SgdState,
};
use crate::rng::{self, RunSeeds};

use super::gauss::{
    apply_sampled_update, compute_error, fit_layer_gaussians, sample_update, EpochError,
    LayerGauss, DEFAULT_EPSILON,
};
use super::strategy::{should_sample, SamplingStrategy};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRunConfig {
    pub epochs: usize,
    pub strategy: SamplingStrategy,
    pub hyper: SgdHyper,
    pub batch_size: usize,
    /// Variance floor added to every fitted layer variance.
    pub epsilon: f64,
    pub seeds: RunSeeds,
    /// Epochs whose parameter delta is kept in [`RunReport::captured`].
    pub capture_errors: Vec<usize>,
}

impl TrainRunConfig {
    pub fn new(epochs: usize, strategy: SamplingStrategy, master_seed: u64) -> Self {
        Self {
            epochs,
            strategy,
            hyper: SgdHyper::default(),
            batch_size: 32,
            epsilon: DEFAULT_EPSILON,
            seeds: RunSeeds::from_master(master_seed),
            capture_errors: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 3 {
            return Err(Error::InvalidArgument(format!(
                "epochs must be >= 3, got {}",
                self.epochs
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        self.strategy.validate()?;
        self.hyper.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mode: EpochMode,
    /// Absent on sampled epochs, which run no training forward pass.
    pub train_loss: Option<f64>,
    pub val_acc: f64,
    pub epoch_flops: u64,
    pub cum_flops: u64,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub records: Vec<EpochRecord>,
    pub final_params: ParamVector,
    /// Epoch at which a non-finite loss or parameter stopped the run.
    pub diverged_at: Option<usize>,
    pub ledger: FlopsLedger,
    /// Parameter deltas of the epochs listed in `capture_errors`.
    pub captured: Vec<EpochError>,
    /// The fit used on each sampled epoch.
    pub sampled_fits: Vec<(usize, LayerGauss)>,
}

impl RunReport {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    pub fn final_val_acc(&self) -> Option<f64> {
        self.records.last().map(|r| r.val_acc)
    }

    pub fn modes(&self) -> Vec<EpochMode> {
        self.records.iter().map(|r| r.mode).collect()
    }
}

/// Parameters before the latest backprop epoch, plus the fit derived from it.
#[derive(Debug, Default)]
struct SnapshotBuffer {
    prev: Option<ParamVector>,
    cached_fit: Option<LayerGauss>,
}

fn is_divergence(err: &Error) -> bool {
    matches!(err, Error::NonFinite(_) | Error::NonFiniteGradient { .. })
}

pub fn train_with_gradsamp(
    spec: &ModelSpec,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainRunConfig,
) -> Result<RunReport> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Empty("training or validation set"));
    }
    let mut params = init_params(spec, cfg.seeds.init)?;
    let mut state = SgdState::zeros(params.len());
    let mut shuffle_rng = rng::stream(cfg.seeds.shuffle);
    let mut noise_rng = rng::stream(cfg.seeds.noise);
    let mut coin_rng = rng::stream(cfg.seeds.coin);

    let backprop_cost = epoch_flops(spec, train.len(), cfg.batch_size, EpochMode::Backprop);
    let sampled_cost = epoch_flops(spec, train.len(), cfg.batch_size, EpochMode::Sampled);
    let mut ledger = FlopsLedger::new(backprop_cost);
    let mut buffer = SnapshotBuffer::default();
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut captured = Vec::new();
    let mut sampled_fits = Vec::new();
    let mut diverged_at = None;

    for k in 0..cfg.epochs {
        let sample = should_sample(&cfg.strategy, k, cfg.epochs, &mut coin_rng);
        let before = cfg.capture_errors.contains(&k).then(|| params.clone());

        let (mode, train_loss) = match (sample, &buffer.prev) {
            (true, Some(prev)) => {
                if buffer.cached_fit.is_none() {
                    let err = compute_error(&params, prev)?;
                    buffer.cached_fit = Some(fit_layer_gaussians(&err, cfg.epsilon)?);
                }
                let fit = buffer.cached_fit.as_ref().expect("fit cached above");
                let e_tilde = sample_update(fit, params.partition(), &mut noise_rng)?;
                match apply_sampled_update(&params, &e_tilde) {
                    Ok(next) => params = next,
                    Err(e) if is_divergence(&e) => {
                        diverged_at = Some(k);
                        break;
                    }
                    Err(e) => return Err(e),
                }
                sampled_fits.push((k, fit.clone()));
                (EpochMode::Sampled, None)
            }
            _ => {
                buffer.prev = Some(params.clone());
                buffer.cached_fit = None;
                let loss = backprop_epoch(
                    spec,
                    &mut params,
                    &mut state,
                    train.as_batch(),
                    &cfg.hyper,
                    cfg.batch_size,
                    &mut shuffle_rng,
                    None,
                );
                match loss {
                    Ok(loss) => (EpochMode::Backprop, Some(loss)),
                    Err(e) if is_divergence(&e) => {
                        params = buffer.prev.clone().expect("snapshot taken above");
                        diverged_at = Some(k);
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
        };

        let val_acc = match evaluate(spec, &params, val.as_batch()) {
            Ok(ev) => ev.accuracy,
            Err(e) if is_divergence(&e) => {
                diverged_at = Some(k);
                break;
            }
            Err(e) => return Err(e),
        };
        let flops = match mode {
            EpochMode::Backprop => backprop_cost,
            EpochMode::Sampled => sampled_cost,
        };
        let cum_flops = ledger.record(k, mode, flops);
        records.push(EpochRecord {
            epoch: k,
            mode,
            train_loss,
            val_acc,
            epoch_flops: flops,
            cum_flops,
        });
        if let Some(before) = before {
            captured.push(compute_error(&params, &before)?.with_epochs(k.saturating_sub(1), k));
        }
    }

    Ok(RunReport {
        records,
        final_params: params,
        diverged_at,
        ledger,
        captured,
        sampled_fits,
    })
}
