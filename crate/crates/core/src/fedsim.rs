//! Single-process federated learning: FedAvg / FedProx rounds, with scheduled
//! rounds replaced by a server-side sampled update that needs no client
//! communication.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::{index, SliceRandom};
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::flops::{epoch_flops, EpochMode, SAMPLE_OPS_PER_PARAM};
use crate::nn::{
    backprop_epoch, evaluate, init_params, ModelSpec, ParamVector, Proximal, SgdHyper, SgdState,
};
use crate::rng;
use crate::sampler::{
    apply_sampled_update, compute_error, fit_layer_gaussians, sample_update, should_sample,
    LayerGauss, SamplingStrategy, DEFAULT_EPSILON, MIN_HISTORY,
};

/// Default FedProx proximal coefficient.
pub const DEFAULT_MU: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Aggregator {
    FedAvg,
    FedProx { mu: f64 },
}

impl Aggregator {
    fn proximal_mu(&self) -> Option<f64> {
        match *self {
            Aggregator::FedAvg => None,
            Aggregator::FedProx { mu } => Some(mu),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PartitionScheme {
    /// Shard sizes differ by at most one.
    IidEqual,
    /// Shard sizes proportional to the given positive weights (largest-remainder rounding).
    IidWeighted { weights: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlSetup {
    pub total_clients: usize,
    pub selected_per_round: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub aggregator: Aggregator,
    pub round_strategy: SamplingStrategy,
    pub partition: PartitionScheme,
    pub hyper: SgdHyper,
    pub batch_size: usize,
    pub epsilon: f64,
    pub seed: u64,
}

impl FlSetup {
    pub fn new(total_clients: usize, selected_per_round: usize, rounds: usize, seed: u64) -> Self {
        Self {
            total_clients,
            selected_per_round,
            rounds,
            local_epochs: 1,
            aggregator: Aggregator::FedAvg,
            round_strategy: SamplingStrategy::Never,
            partition: PartitionScheme::IidEqual,
            hyper: SgdHyper::default(),
            batch_size: 32,
            epsilon: DEFAULT_EPSILON,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.total_clients == 0 {
            return bad("total_clients must be >= 1".into());
        }
        if self.selected_per_round == 0 || self.selected_per_round > self.total_clients {
            return bad(format!(
                "selected clients must lie in [1, {}], got {}",
                self.total_clients, self.selected_per_round
            ));
        }
        if self.rounds == 0 {
            return bad("rounds must be >= 1".into());
        }
        if self.round_strategy != SamplingStrategy::Never && self.rounds < 3 {
            return bad(format!(
                "round skipping needs at least 3 rounds, got {}",
                self.rounds
            ));
        }
        if let Aggregator::FedProx { mu } = self.aggregator {
            if !(mu >= 0.0 && mu.is_finite()) {
                return bad(format!("mu must be >= 0, got {mu}"));
            }
        }
        if let PartitionScheme::IidWeighted { weights } = &self.partition {
            if weights.len() != self.total_clients {
                return bad(format!(
                    "{} partition weights for {} clients",
                    weights.len(),
                    self.total_clients
                ));
            }
            if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
                return bad("partition weights must be positive".into());
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        self.round_strategy.validate()?;
        self.hyper.validate()
    }

    fn seed_of(&self, stream: &str) -> u64 {
        rng::derive_seed(self.seed, stream)
    }
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub shard: Dataset,
}

impl ClientState {
    pub fn size(&self) -> usize {
        self.shard.len()
    }
}

fn shard_sizes(n: usize, setup: &FlSetup) -> Result<Vec<usize>> {
    let k = setup.total_clients;
    match &setup.partition {
        PartitionScheme::IidEqual => Ok((0..k).map(|i| n / k + usize::from(i < n % k)).collect()),
        PartitionScheme::IidWeighted { weights } => {
            let total: f64 = weights.iter().sum();
            let exact: Vec<f64> = weights.iter().map(|w| w / total * n as f64).collect();
            let mut sizes: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by(|&a, &b| {
                let ra = exact[a] - exact[a].floor();
                let rb = exact[b] - exact[b].floor();
                rb.total_cmp(&ra).then(a.cmp(&b))
            });
            let missing = n - sizes.iter().sum::<usize>();
            for &i in order.iter().take(missing) {
                sizes[i] += 1;
            }
            if let Some(i) = sizes.iter().position(|&s| s == 0) {
                return Err(Error::InvalidArgument(format!(
                    "client {i} would receive an empty shard"
                )));
            }
            Ok(sizes)
        }
    }
}

/// Seeded i.i.d. split into disjoint, exhaustive client shards.
pub fn partition_dataset(dataset: &Dataset, setup: &FlSetup) -> Result<Vec<ClientState>> {
    if setup.total_clients == 0 {
        return Err(Error::InvalidArgument("total_clients must be >= 1".into()));
    }
    if setup.total_clients > dataset.len() {
        return Err(Error::InvalidArgument(format!(
            "{} clients but only {} samples",
            setup.total_clients,
            dataset.len()
        )));
    }
    let sizes = shard_sizes(dataset.len(), setup)?;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng::stream(setup.seed_of("partition")));
    let mut start = 0;
    sizes
        .iter()
        .enumerate()
        .map(|(id, &size)| {
            let shard = dataset.subset(&order[start..start + size])?;
            start += size;
            Ok(ClientState { id, shard })
        })
        .collect()
}

/// `local_epochs` of minibatch SGD from `global`, with fresh optimizer state.
///
/// With `prox = Some(mu)` every gradient gains `mu·(θ − global)`.
#[allow(clippy::too_many_arguments)]
pub fn client_update(
    spec: &ModelSpec,
    global: &ParamVector,
    client: &ClientState,
    local_epochs: usize,
    hyper: &SgdHyper,
    batch_size: usize,
    prox: Option<f64>,
    seed: u64,
) -> Result<ParamVector> {
    let mut params = global.clone();
    let mut state = SgdState::zeros(params.len());
    let mut shuffle = rng::stream(seed);
    let prox = prox.map(|mu| Proximal { mu, anchor: global });
    for _ in 0..local_epochs {
        backprop_epoch(
            spec,
            &mut params,
            &mut state,
            client.shard.as_batch(),
            hyper,
            batch_size,
            &mut shuffle,
            prox,
        )
        .map_err(|e| match e {
            Error::NonFinite(_) | Error::NonFiniteGradient { .. } => {
                Error::ClientDiverged { client: client.id }
            }
            other => other,
        })?;
    }
    Ok(params)
}

#[derive(Debug, Clone)]
pub struct ClientContribution {
    pub id: usize,
    pub params: ParamVector,
    pub size: usize,
}

/// `|D_k| / Σ|D_j|` over the participating clients.
pub fn aggregation_weights(sizes: &[usize]) -> Vec<f64> {
    let total: usize = sizes.iter().sum();
    sizes.iter().map(|&s| s as f64 / total as f64).collect()
}

/// Size-weighted mean of client parameters, accumulated in client-id order.
///
/// Uses the running-mean form `agg += (|D_k| / seen)·(θ_k − agg)`, which is
/// exact when all participants agree.
pub fn fedavg_aggregate(clients: &[ClientContribution]) -> Result<ParamVector> {
    let mut ordered: Vec<&ClientContribution> = clients.iter().collect();
    ordered.sort_by_key(|c| c.id);
    let (first, rest) = ordered
        .split_first()
        .ok_or(Error::Empty("participant set"))?;
    if ordered.iter().any(|c| c.size == 0) {
        return Err(Error::InvalidArgument("client with empty dataset".into()));
    }
    let mut agg = first.params.values().to_vec();
    let mut seen = first.size as f64;
    for c in rest {
        if c.params.partition() != first.params.partition() {
            return Err(Error::DimensionMismatch {
                what: "client parameter partitions differ",
                expected: first.params.len(),
                got: c.params.len(),
            });
        }
        seen += c.size as f64;
        let t = c.size as f64 / seen;
        for (a, &x) in agg.iter_mut().zip(c.params.values()) {
            *a += t * (x - *a);
        }
    }
    ParamVector::new(agg, first.params.partition().clone())
}

/// Layer Gaussians of the delta between two global states.
pub fn fit_round_gaussians(
    theta_cur: &ParamVector,
    theta_prev: &ParamVector,
    epsilon: f64,
) -> Result<LayerGauss> {
    fit_layer_gaussians(&compute_error(theta_cur, theta_prev)?, epsilon)
}

/// `θ + ẽ` with ẽ drawn from `fit`; no client is contacted.
pub fn stochastic_server_update<R: rand::Rng + ?Sized>(
    theta: &ParamVector,
    fit: &LayerGauss,
    rng: &mut R,
) -> Result<ParamVector> {
    let draw = sample_update(fit, theta.partition(), rng)?;
    apply_sampled_update(theta, &draw)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RoundMode {
    Aggregated,
    Sampled,
}

impl RoundMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RoundMode::Aggregated => "aggregated",
            RoundMode::Sampled => "sampled",
        }
    }
}

impl fmt::Display for RoundMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RoundMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aggregated" => Ok(RoundMode::Aggregated),
            "sampled" => Ok(RoundMode::Sampled),
            other => Err(Error::InvalidArgument(format!(
                "unknown round mode `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub mode: RoundMode,
    /// Client ids in ascending order; empty on sampled rounds.
    pub participants: Vec<usize>,
    pub val_acc: f64,
    /// Parameter-vector transfers (one down and one up per participant).
    pub comm_cost: u64,
    pub round_flops: u64,
    pub cum_flops: u64,
}

#[derive(Debug, Clone)]
pub struct FedReport {
    pub rounds: Vec<RoundRecord>,
    pub final_params: ParamVector,
    /// Total `client_update` invocations over the run.
    pub client_updates: usize,
}

impl FedReport {
    pub fn total_comm_cost(&self) -> u64 {
        self.rounds.iter().map(|r| r.comm_cost).sum()
    }

    pub fn count(&self, mode: RoundMode) -> usize {
        self.rounds.iter().filter(|r| r.mode == mode).count()
    }
}

/// Global state before the latest aggregated round and the fit derived from it.
#[derive(Debug, Default)]
struct ServerHistory {
    before_last_aggregation: Option<ParamVector>,
    aggregated_rounds: usize,
    cached_fit: Option<LayerGauss>,
}

impl ServerHistory {
    fn fit(&mut self, current: &ParamVector, epsilon: f64) -> Result<&LayerGauss> {
        if self.aggregated_rounds < MIN_HISTORY {
            return Err(Error::InsufficientHistory("need two aggregated rounds"));
        }
        let prev = self
            .before_last_aggregation
            .as_ref()
            .ok_or(Error::InsufficientHistory("no aggregated round yet"))?;
        if self.cached_fit.is_none() {
            self.cached_fit = Some(fit_round_gaussians(current, prev, epsilon)?);
        }
        Ok(self.cached_fit.as_ref().expect("cached above"))
    }
}

pub fn run_federated(
    spec: &ModelSpec,
    train: &Dataset,
    val: &Dataset,
    setup: &FlSetup,
) -> Result<FedReport> {
    setup.validate()?;
    let clients = partition_dataset(train, setup)?;
    let mut global = init_params(spec, setup.seed_of("init"))?;
    let mut selection_rng = rng::stream(setup.seed_of("selection"));
    let mut coin_rng = rng::stream(setup.seed_of("coin"));
    let mut noise_rng = rng::stream(setup.seed_of("noise"));
    let shuffle_seed = setup.seed_of("shuffle");
    let prox = setup.aggregator.proximal_mu();
    let params = spec.param_count() as u64;
    let calls = AtomicUsize::new(0);

    let mut history = ServerHistory::default();
    let mut records = Vec::with_capacity(setup.rounds);
    let mut cum_flops = 0u64;

    for r in 0..setup.rounds {
        let sample = should_sample(&setup.round_strategy, r, setup.rounds, &mut coin_rng)
            && history.aggregated_rounds >= MIN_HISTORY;
        let (mode, participants, comm_cost, round_flops) = if sample {
            let fit = history.fit(&global, setup.epsilon)?;
            global = stochastic_server_update(&global, fit, &mut noise_rng)?;
            (
                RoundMode::Sampled,
                Vec::new(),
                0,
                SAMPLE_OPS_PER_PARAM * params,
            )
        } else {
            let mut selected = index::sample(
                &mut selection_rng,
                setup.total_clients,
                setup.selected_per_round,
            )
            .into_vec();
            selected.sort_unstable();
            let round_seed = rng::derive_indexed(shuffle_seed, r as u64);
            let global_ref = &global;
            let updates: Vec<Result<ClientContribution>> = selected
                .par_iter()
                .map(|&id| {
                    calls.fetch_add(1, Ordering::Relaxed);
                    let client = &clients[id];
                    let params = client_update(
                        spec,
                        global_ref,
                        client,
                        setup.local_epochs,
                        &setup.hyper,
                        setup.batch_size,
                        prox,
                        rng::derive_indexed(round_seed, id as u64),
                    )?;
                    Ok(ClientContribution {
                        id,
                        params,
                        size: client.size(),
                    })
                })
                .collect();
            let updates = updates.into_iter().collect::<Result<Vec<_>>>()?;
            let next = fedavg_aggregate(&updates)?;
            history.before_last_aggregation = Some(std::mem::replace(&mut global, next));
            history.aggregated_rounds += 1;
            history.cached_fit = None;
            let local: u64 = selected
                .iter()
                .map(|&id| {
                    setup.local_epochs as u64
                        * epoch_flops(
                            spec,
                            clients[id].size(),
                            setup.batch_size,
                            EpochMode::Backprop,
                        )
                })
                .sum();
            let aggregation = 2 * params * selected.len() as u64;
            let cost = 2 * selected.len() as u64;
            (RoundMode::Aggregated, selected, cost, local + aggregation)
        };
        cum_flops += round_flops;
        let val_acc = evaluate(spec, &global, val.as_batch())?.accuracy;
        records.push(RoundRecord {
            round: r,
            mode,
            participants,
            val_acc,
            comm_cost,
            round_flops,
            cum_flops,
        });
    }

    Ok(FedReport {
        rounds: records,
        final_params: global,
        client_updates: calls.into_inner(),
    })
}
