use rand::seq::SliceRandom;
use rand::Rng;

use super::engine::{loss_and_grad, Batch};
use super::optim::{sgd_step, SgdHyper, SgdState};
use super::params::ParamVector;
use super::spec::ModelSpec;
use crate::error::{Error, Result};

/// FedProx anchor: adds `mu·(θ − anchor)` to every gradient.
#[derive(Debug, Clone, Copy)]
pub struct Proximal<'a> {
    pub mu: f64,
    pub anchor: &'a ParamVector,
}

/// One pass over `data` in shuffled minibatches; returns the sample-weighted mean loss.
///
/// When `batch_size >= data.len()` the epoch is a single full-batch step in
/// the original row order and `rng` is not consumed.
#[allow(clippy::too_many_arguments)]
pub fn backprop_epoch<R: Rng + ?Sized>(
    spec: &ModelSpec,
    params: &mut ParamVector,
    state: &mut SgdState,
    data: &Batch,
    hyper: &SgdHyper,
    batch_size: usize,
    rng: &mut R,
    prox: Option<Proximal<'_>>,
) -> Result<f64> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
    }
    let n = data.len();
    let mut step = |params: &mut ParamVector, batch: &Batch| -> Result<f64> {
        let (loss, mut grad) = loss_and_grad(spec, params, batch)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("training loss".into()));
        }
        if let Some(Proximal { mu, anchor }) = prox {
            if mu != 0.0 {
                for ((g, t), a) in grad.iter_mut().zip(params.values()).zip(anchor.values()) {
                    *g += mu * (t - a);
                }
            }
        }
        sgd_step(params, &grad, state, hyper)?;
        Ok(loss * batch.len() as f64)
    };
    if batch_size >= n {
        return step(params, data);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    for chunk in order.chunks(batch_size) {
        total += step(params, &data.gather(chunk)?)?;
    }
    Ok(total / n as f64)
}
