//! FedAvg training with per-round submodular client selection.
//!
//! One round:
//!
//! 1. select κ clients from the cached gradients/losses of the previous
//!    round (stochastic greedy over the configured objective, or a baseline
//!    sampler);
//! 2. run `E` local SGD steps on every selected client from the current
//!    global weights;
//! 3. subtract the mean of the client deltas from the global weights;
//! 4. refresh the selected clients' cached gradient and loss at the new
//!    weights and record metrics.
//!
//! Before round 0 every client computes its gradient and loss at `w_0` so
//! the first distance table is complete. Unselected clients keep stale
//! caches.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::data::{ClientSplit, LabeledDataset};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_global, DissimilarityKind};
use crate::model::{full_loss_and_grad, Batch, Differentiable, ModelKind, ModelParams};
use crate::objectives::{
    build_distance_table, select_power_of_choice, select_random, FacilityLocation, FairnessParams,
    LossVector, SelectionHistory, SubTrunc, UnionFl, UnionParams,
};
use crate::rng::{stream, TAG_INIT, TAG_LOCAL, TAG_SELECT};
use crate::submodular::{stochastic_greedy_maximize, ClientId, GroundSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[serde(rename = "subtrunc")]
    SubTrunc,
    #[serde(rename = "unionfl")]
    UnionFl,
    #[serde(rename = "divfl")]
    DivFl,
    Random,
    PowerOfChoice,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::SubTrunc => "subtrunc",
            Method::UnionFl => "unionfl",
            Method::DivFl => "divfl",
            Method::Random => "random",
            Method::PowerOfChoice => "power_of_choice",
        }
    }

    /// Whether selection needs the all-pairs gradient distance table.
    pub fn uses_distances(self) -> bool {
        matches!(self, Method::SubTrunc | Method::UnionFl | Method::DivFl)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "subtrunc" => Method::SubTrunc,
            "unionfl" => Method::UnionFl,
            "divfl" => Method::DivFl,
            "random" => Method::Random,
            "power_of_choice" => Method::PowerOfChoice,
            other => return Err(Error::domain(format!("unknown method `{other}`"))),
        })
    }
}

/// Model family; input and class counts come from the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelChoice {
    #[default]
    Logistic,
    Mlp {
        #[serde(default = "default_hidden")]
        hidden: usize,
    },
}

fn default_hidden() -> usize {
    32
}

impl ModelChoice {
    pub fn resolve(self, inputs: usize, classes: usize) -> ModelKind {
        match self {
            ModelChoice::Logistic => ModelKind::Logistic { inputs, classes },
            ModelChoice::Mlp { hidden } => ModelKind::Mlp { inputs, hidden, classes },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub rounds: usize,
    pub local_steps: usize,
    pub clients_per_round: usize,
    pub sample_size: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub method: Method,
    pub fairness: FairnessParams,
    pub union: UnionParams,
    /// Power-of-Choice candidate count; `max(κ, r)` when absent.
    pub power_of_choice_d: Option<usize>,
    pub model: ModelChoice,
    pub metric: DissimilarityKind,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self, n_clients: usize) -> Result<()> {
        if self.rounds == 0 || self.local_steps == 0 || self.batch_size == 0 || self.sample_size == 0 {
            return Err(Error::domain("rounds, local_steps, batch_size and sample_size must be >= 1"));
        }
        if self.clients_per_round == 0 || self.clients_per_round > n_clients {
            return Err(Error::domain(format!(
                "clients_per_round = {} must lie in 1..={n_clients}",
                self.clients_per_round
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::domain(format!("learning_rate = {} must be > 0", self.learning_rate)));
        }
        if let ModelChoice::Mlp { hidden: 0 } = self.model {
            return Err(Error::domain("mlp hidden width must be >= 1"));
        }
        self.fairness.validate()?;
        self.union.validate()?;
        if self.method == Method::PowerOfChoice {
            let d = self.power_of_choice_size(n_clients);
            if d < self.clients_per_round {
                return Err(Error::domain(format!(
                    "power_of_choice_d = {d} is below clients_per_round = {}",
                    self.clients_per_round
                )));
            }
        }
        Ok(())
    }

    pub fn power_of_choice_size(&self, n_clients: usize) -> usize {
        self.power_of_choice_d
            .unwrap_or(self.clients_per_round.max(self.sample_size))
            .min(n_clients)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub id: ClientId,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub cached_gradient: Option<Vec<f64>>,
    pub cached_loss: Option<f64>,
    pub participation_count: usize,
}

impl ClientState {
    pub fn new(id: ClientId, split: ClientSplit) -> Self {
        Self {
            id,
            train: split.train,
            test: split.test,
            cached_gradient: None,
            cached_loss: None,
            participation_count: 0,
        }
    }

    fn refresh<M: Differentiable + ?Sized>(&mut self, model: &M, w: &[f64]) -> Result<()> {
        let (loss, grad) = full_loss_and_grad(model, w, &self.train)
            .map_err(|e| e.context(format_args!("client {}", self.id)))?;
        self.cached_loss = Some(loss);
        self.cached_gradient = Some(grad);
        Ok(())
    }
}

pub fn clients_from_splits(splits: Vec<ClientSplit>) -> Vec<ClientState> {
    splits.into_iter().enumerate().map(|(i, s)| ClientState::new(i, s)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    /// Selected clients in selection order.
    pub selected: Vec<ClientId>,
    pub global_train_loss: f64,
    pub per_client_test_acc: Vec<f64>,
    pub dissimilarity: f64,
    pub grad_norm_sq: f64,
    /// Seconds spent on the round; excluded from every reproducible output.
    pub wall_time: f64,
}

/// Shuffled passes over a dataset, reshuffled when a pass is exhausted.
struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    fn new<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(rng);
        Self { order, pos: 0 }
    }

    /// Next batch, sorted so the summation order does not depend on the shuffle.
    fn next<R: Rng + ?Sized>(&mut self, size: usize, rng: &mut R, out: &mut Vec<usize>) {
        if self.pos == self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        let end = (self.pos + size).min(self.order.len());
        out.clear();
        out.extend_from_slice(&self.order[self.pos..end]);
        out.sort_unstable();
        self.pos = end;
    }
}

/// Runs `steps` mini-batch SGD steps from `w` on `data` and returns
/// `w − w_final`.
pub fn local_sgd<M: Differentiable + ?Sized, R: Rng + ?Sized>(
    model: &M,
    data: &LabeledDataset,
    w: &[f64],
    learning_rate: f64,
    steps: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if steps == 0 || batch_size == 0 {
        return Err(Error::domain("local steps and batch size must be >= 1"));
    }
    let mut sampler = BatchSampler::new(data.len(), rng);
    let mut rows = Vec::with_capacity(batch_size);
    let mut local = w.to_vec();
    for step in 0..steps {
        sampler.next(batch_size, rng, &mut rows);
        let (_, grad) = model
            .loss_and_grad(&local, Batch { data, rows: &rows })
            .map_err(|e| e.context(format_args!("local step {step}")))?;
        for (p, g) in local.iter_mut().zip(&grad) {
            *p -= learning_rate * g;
        }
        if let Some(i) = local.iter().position(|p| !p.is_finite()) {
            return Err(Error::numeric(format!("local step {step}: parameter {i} diverged")));
        }
    }
    Ok(w.iter().zip(&local).map(|(a, b)| a - b).collect())
}

/// `w − (1/κ) Σ deltas`, summing in ascending client-id order.
pub fn aggregate(w: &ModelParams, deltas: &[(ClientId, Vec<f64>)], kappa: usize) -> Result<ModelParams> {
    if deltas.len() != kappa || kappa == 0 {
        return Err(Error::domain(format!("expected {kappa} deltas, got {}", deltas.len())));
    }
    let mut ordered: Vec<&(ClientId, Vec<f64>)> = deltas.iter().collect();
    ordered.sort_by_key(|(id, _)| *id);
    let d = w.w.len();
    let mut sum = vec![0.0; d];
    for (id, delta) in ordered {
        if delta.len() != d {
            return Err(Error::domain(format!(
                "delta of client {id} has dimension {}, expected {d}",
                delta.len()
            )));
        }
        for (s, x) in sum.iter_mut().zip(delta) {
            *s += x;
        }
    }
    let inv = 1.0 / kappa as f64;
    let next: Vec<f64> = w.w.iter().zip(&sum).map(|(p, s)| p - s * inv).collect();
    ModelParams::new(next, w.kind)
}

/// Populates every client's cache at `w` without counting participation.
pub fn warm_up<M: Differentiable + ?Sized>(clients: &mut [ClientState], model: &M, w: &[f64]) -> Result<()> {
    for_each_client(clients, |c| c.refresh(model, w))
}

/// Recomputes full-data gradient and loss for the selected clients and
/// increments their participation counts.
pub fn refresh_caches<M: Differentiable + ?Sized>(
    clients: &mut [ClientState],
    selected: &[ClientId],
    model: &M,
    w: &[f64],
) -> Result<()> {
    if let Some(id) = w.iter().position(|x| !x.is_finite()) {
        return Err(Error::numeric(format!("global parameter {id} is not finite")));
    }
    for_each_client(clients, |c| {
        if selected.contains(&c.id) {
            c.refresh(model, w)?;
            c.participation_count += 1;
        }
        Ok(())
    })
}

fn for_each_client<F>(clients: &mut [ClientState], f: F) -> Result<()>
where
    F: Fn(&mut ClientState) -> Result<()> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        clients.par_iter_mut().try_for_each(f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        clients.iter_mut().try_for_each(f)
    }
}

/// Picks the κ participants of `round` from the clients' cached state.
pub fn select_clients<R: Rng + ?Sized>(
    config: &TrainConfig,
    clients: &[ClientState],
    history: &SelectionHistory,
    round: usize,
    rng: &mut R,
) -> Result<Vec<ClientId>> {
    let n = clients.len();
    let ground = GroundSet::range(n)?;
    let kappa = config.clients_per_round;
    let losses = || -> Result<LossVector> {
        LossVector::new(
            clients
                .iter()
                .map(|c| c.cached_loss.ok_or_else(|| Error::domain(format!("client {} has no cached loss", c.id))))
                .collect::<Result<Vec<f64>>>()?,
        )
    };
    match config.method {
        Method::Random => select_random(&ground, kappa, rng),
        Method::PowerOfChoice => {
            select_power_of_choice(&losses()?, kappa, config.power_of_choice_size(n), rng)
        }
        Method::DivFl | Method::SubTrunc | Method::UnionFl => {
            let gradients = clients
                .iter()
                .map(|c| {
                    c.cached_gradient
                        .clone()
                        .ok_or_else(|| Error::domain(format!("client {} has no cached gradient", c.id)))
                })
                .collect::<Result<Vec<_>>>()?;
            let table = build_distance_table(&gradients)?;
            let r = config.sample_size;
            match config.method {
                Method::DivFl => stochastic_greedy_maximize(&FacilityLocation { table: &table }, &ground, kappa, r, rng),
                Method::SubTrunc => {
                    let losses = losses()?;
                    let w = SubTrunc::new(&table, &losses, config.fairness);
                    stochastic_greedy_maximize(&w, &ground, kappa, r, rng)
                }
                _ => {
                    let h = UnionFl::new(&table, history, config.union.mu, round);
                    stochastic_greedy_maximize(&h, &ground, kappa, r, rng)
                }
            }
        }
    }
}

fn train_selected<M: Differentiable + ?Sized>(
    config: &TrainConfig,
    model: &M,
    clients: &[ClientState],
    selected: &[ClientId],
    w: &[f64],
    round: usize,
) -> Result<Vec<(ClientId, Vec<f64>)>> {
    let mut ids = selected.to_vec();
    ids.sort_unstable();
    let work = |&id: &ClientId| -> Result<(ClientId, Vec<f64>)> {
        let mut rng = stream(config.seed, TAG_LOCAL, round as u64, id as u64);
        let delta = local_sgd(
            model,
            &clients[id].train,
            w,
            config.learning_rate,
            config.local_steps,
            config.batch_size,
            &mut rng,
        )
        .map_err(|e| e.context(format_args!("round {round}, client {id}")))?;
        Ok((id, delta))
    };
    #[cfg(feature = "parallel")]
    {
        ids.par_iter().map(work).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        ids.iter().map(work).collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub records: Vec<RoundRecord>,
    pub params: ModelParams,
    pub history: SelectionHistory,
    pub clients: Vec<ClientState>,
}

struct Stopwatch {
    #[cfg(not(target_arch = "wasm32"))]
    start: std::time::Instant,
}

impl Stopwatch {
    fn start() -> Self {
        Self {
            #[cfg(not(target_arch = "wasm32"))]
            start: std::time::Instant::now(),
        }
    }

    fn seconds(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        {
            self.start.elapsed().as_secs_f64()
        }
        #[cfg(target_arch = "wasm32")]
        {
            0.0
        }
    }
}

/// Model kind implied by the clients' data and the configured family.
pub fn model_for(config: &TrainConfig, clients: &[ClientState]) -> Result<ModelKind> {
    let first = clients.first().ok_or_else(|| Error::domain("no clients"))?;
    let (inputs, classes) = (first.train.dim(), first.train.classes());
    if let Some(c) = clients
        .iter()
        .find(|c| c.train.dim() != inputs || c.test.dim() != inputs || c.train.classes() != classes)
    {
        return Err(Error::data(format!("client {} has inconsistent feature shape", c.id)));
    }
    Ok(config.model.resolve(inputs, classes))
}

/// Warm-up followed by `config.rounds` FedAvg rounds. Deterministic given
/// `config.seed` regardless of thread count.
pub fn run_training(config: &TrainConfig, mut clients: Vec<ClientState>) -> Result<TrainingRun> {
    config.validate(clients.len())?;
    if let Some(pos) = clients.iter().enumerate().position(|(i, c)| c.id != i) {
        return Err(Error::domain(format!("client at position {pos} has id {}", clients[pos].id)));
    }
    let kind = model_for(config, &clients)?;
    let mut params = kind.init(&mut stream(config.seed, TAG_INIT, 0, 0));
    warm_up(&mut clients, &kind, &params.w).map_err(|e| e.context("warm-up"))?;

    let mut history = SelectionHistory::new(config.union.window)?;
    let mut records = Vec::with_capacity(config.rounds);
    for round in 0..config.rounds {
        let watch = Stopwatch::start();
        let mut rng = stream(config.seed, TAG_SELECT, round as u64, 0);
        let selected = select_clients(config, &clients, &history, round, &mut rng)
            .map_err(|e| e.context(format_args!("round {round} selection")))?;
        let deltas = train_selected(config, &kind, &clients, &selected, &params.w, round)?;
        params = aggregate(&params, &deltas, config.clients_per_round)
            .map_err(|e| e.context(format_args!("round {round} aggregation")))?;
        refresh_caches(&mut clients, &selected, &kind, &params.w)
            .map_err(|e| e.context(format_args!("round {round} cache refresh")))?;
        history.push(selected.clone());

        let eval = evaluate_global(&params, &clients, config.metric)
            .map_err(|e| e.context(format_args!("round {round} evaluation")))?;
        records.push(RoundRecord {
            round,
            selected,
            global_train_loss: eval.train_loss,
            per_client_test_acc: eval.report.per_client_acc,
            dissimilarity: eval.report.dissimilarity,
            grad_norm_sq: eval.grad_norm_sq,
            wall_time: watch.seconds(),
        });
    }
    Ok(TrainingRun { records, params, history, clients })
}

/// Smoothness heuristic for a linear softmax model, `¼ · max_i (‖x_i‖² + 1)`
/// over all training rows; the `+1` accounts for the bias input. This is the
/// binary-logistic bound; with many classes the true constant can be up to
/// twice as large.
pub fn smoothness_estimate(clients: &[ClientState]) -> f64 {
    let max_sq = clients
        .iter()
        .flat_map(|c| (0..c.train.len()).map(move |i| c.train.row(i).iter().map(|x| x * x).sum::<f64>()))
        .fold(0.0, f64::max);
    0.25 * (max_sq + 1.0)
}

/// The constant-step schedule `η = 1 / (L · E · √K)`.
pub fn theorem_learning_rate(smoothness: f64, local_steps: usize, rounds: usize) -> f64 {
    1.0 / (smoothness * local_steps as f64 * (rounds as f64).sqrt())
}
