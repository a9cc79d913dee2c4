//! Experiment configuration, execution and CSV emission.
//!
//! A configuration is a JSON document (see `config.schema.json` at the
//! repository root). Unknown keys are rejected and errors name the offending
//! field path. Each repeat `i` runs with seed `seed + i`; the seed drives
//! data generation, partitioning, model initialization, selection and local
//! training, so one seed fully determines one row block of the CSV.

use std::io::Write;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::data::{generate_synthetic, shard_partition, PartitionSpec, SyntheticSpec};
use crate::engine::{
    clients_from_splits, run_training, smoothness_estimate, theorem_learning_rate, ClientState, Method,
    ModelChoice, TrainConfig, TrainingRun,
};
use crate::error::{Error, Result};
use crate::idx::{pair, read_idx};
use crate::metrics::{participation_from_rounds, DissimilarityKind};
use crate::objectives::{FairnessParams, PhiKind, UnionParams};
use crate::rng::{derive_seed, TAG_DATA, TAG_PARTITION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RatePreset {
    /// `η = 1 / (L · E · √K)`.
    Theorem,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LearningRate {
    Fixed(f64),
    Preset(RatePreset),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic(SyntheticSpec),
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        classes: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    pub rounds: usize,
    pub local_steps: usize,
    pub clients_per_round: usize,
    pub sample_size: usize,
    pub learning_rate: LearningRate,
    /// Smoothness constant for the `theorem` rate preset; estimated from the
    /// data when absent.
    #[serde(default)]
    pub smoothness: Option<f64>,
    pub batch_size: usize,
    #[serde(default)]
    pub fairness: FairnessParams,
    #[serde(default)]
    pub union: UnionParams,
    #[serde(default)]
    pub power_of_choice_d: Option<usize>,
    #[serde(default)]
    pub model: ModelChoice,
    #[serde(default)]
    pub metric: DissimilarityKind,
    pub seed: u64,
    #[serde(default = "one")]
    pub repeat: usize,
    pub dataset: DatasetSpec,
    pub partition: PartitionSpec,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn one() -> usize {
    1
}

fn config_err(path: &str, msg: impl Into<String>) -> Error {
    Error::Config { path: path.to_string(), msg: msg.into() }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_err(&path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Field-level checks that do not need the data.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rounds", self.rounds),
            ("local_steps", self.local_steps),
            ("clients_per_round", self.clients_per_round),
            ("sample_size", self.sample_size),
            ("batch_size", self.batch_size),
            ("repeat", self.repeat),
            ("partition.clients", self.partition.clients),
            ("partition.classes_per_client", self.partition.classes_per_client),
        ];
        for (path, v) in positive {
            if v == 0 {
                return Err(config_err(path, "must be >= 1"));
            }
        }
        if self.clients_per_round > self.partition.clients {
            return Err(config_err(
                "clients_per_round",
                format!("{} exceeds partition.clients = {}", self.clients_per_round, self.partition.clients),
            ));
        }
        match self.learning_rate {
            LearningRate::Fixed(eta) if !(eta > 0.0 && eta.is_finite()) => {
                return Err(config_err("learning_rate", "must be a positive number or \"theorem\""));
            }
            _ => {}
        }
        if let Some(l) = self.smoothness {
            if !(l > 0.0 && l.is_finite()) {
                return Err(config_err("smoothness", "must be > 0"));
            }
        }
        self.fairness.validate().map_err(|e| config_err("fairness", e.to_string()))?;
        self.union.validate().map_err(|e| config_err("union", e.to_string()))?;
        if let ModelChoice::Mlp { hidden: 0 } = self.model {
            return Err(config_err("model.hidden", "must be >= 1"));
        }
        if let Some(d) = self.power_of_choice_d {
            if d < self.clients_per_round || d > self.partition.clients {
                return Err(config_err("power_of_choice_d", "must lie in clients_per_round..=partition.clients"));
            }
        }
        if !(self.partition.train_fraction > 0.0 && self.partition.train_fraction < 1.0) {
            return Err(config_err("partition.train_fraction", "must lie in (0, 1)"));
        }
        if let DatasetSpec::Synthetic(s) = &self.dataset {
            if s.classes < 2 || s.dims < 2 || s.per_class < 2 || !(s.spread >= 0.0 && s.spread.is_finite()) {
                return Err(config_err(
                    "dataset.synthetic",
                    "needs classes >= 2, dims >= 2, per_class >= 2 and a finite spread >= 0",
                ));
            }
        }
        Ok(())
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.repeat as u64).map(move |i| self.seed.wrapping_add(i))
    }
}

/// Builds the clients for one seed.
pub fn prepare_clients(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<ClientState>> {
    let ds = match &cfg.dataset {
        DatasetSpec::Synthetic(spec) => generate_synthetic(*spec, derive_seed(seed, TAG_DATA, 0, 0))?,
        DatasetSpec::Idx { images, labels, classes } => pair(&read_idx(images)?, &read_idx(labels)?, *classes)?,
    };
    let splits = shard_partition(&ds, &cfg.partition, derive_seed(seed, TAG_PARTITION, 0, 0))?;
    Ok(clients_from_splits(splits))
}

pub fn train_config(cfg: &ExperimentConfig, seed: u64, clients: &[ClientState]) -> TrainConfig {
    let learning_rate = match cfg.learning_rate {
        LearningRate::Fixed(eta) => eta,
        LearningRate::Preset(RatePreset::Theorem) => {
            let l = cfg.smoothness.unwrap_or_else(|| smoothness_estimate(clients));
            theorem_learning_rate(l, cfg.local_steps, cfg.rounds)
        }
    };
    TrainConfig {
        rounds: cfg.rounds,
        local_steps: cfg.local_steps,
        clients_per_round: cfg.clients_per_round,
        sample_size: cfg.sample_size,
        learning_rate,
        batch_size: cfg.batch_size,
        method: cfg.method,
        fairness: cfg.fairness,
        union: cfg.union,
        power_of_choice_d: cfg.power_of_choice_d,
        model: cfg.model,
        metric: cfg.metric,
        seed,
    }
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub run: TrainingRun,
}

pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    let clients = prepare_clients(cfg, seed)?;
    let tc = train_config(cfg, seed, &clients);
    let run = run_training(&tc, clients).map_err(|e| e.context(format_args!("seed {seed}")))?;
    Ok(SeedRun { seed, run })
}

/// All repeats, in seed order. Seeds may run concurrently.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<SeedRun>> {
    cfg.validate()?;
    let seeds: Vec<u64> = cfg.seeds().collect();
    #[cfg(feature = "parallel")]
    {
        seeds.par_iter().map(|&s| run_seed(cfg, s)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        seeds.iter().map(|&s| run_seed(cfg, s)).collect()
    }
}

pub const CSV_HEADER: [&str; 13] = [
    "method",
    "seed",
    "round",
    "train_loss",
    "mean_test_acc",
    "dissimilarity",
    "unique_participants",
    "grad_norm_sq",
    "lambda",
    "b",
    "mu",
    "window",
    "phi",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: Method,
    pub seed: u64,
    pub round: usize,
    pub train_loss: f64,
    pub mean_test_acc: f64,
    pub dissimilarity: f64,
    pub unique_participants: usize,
    pub grad_norm_sq: f64,
    pub lambda: f64,
    pub b: f64,
    pub mu: f64,
    pub window: usize,
    pub phi: PhiKind,
}

impl ResultRow {
    pub fn fields(&self) -> [String; 13] {
        [
            self.method.name().to_string(),
            self.seed.to_string(),
            self.round.to_string(),
            format_g6(self.train_loss),
            format_g6(self.mean_test_acc),
            format_g6(self.dissimilarity),
            self.unique_participants.to_string(),
            format_g6(self.grad_norm_sq),
            format_g6(self.lambda),
            format_g6(self.b),
            format_g6(self.mu),
            self.window.to_string(),
            self.phi.name().to_string(),
        ]
    }
}

pub fn result_rows(cfg: &ExperimentConfig, seed_run: &SeedRun) -> Result<Vec<ResultRow>> {
    let run = &seed_run.run;
    let n = run.clients.len();
    let rounds = run.history.rounds();
    run.records
        .iter()
        .map(|r| {
            let stats = participation_from_rounds(&rounds[..=r.round], n)?;
            Ok(ResultRow {
                method: cfg.method,
                seed: seed_run.seed,
                round: r.round,
                train_loss: r.global_train_loss,
                mean_test_acc: r.per_client_test_acc.iter().sum::<f64>() / n as f64,
                dissimilarity: r.dissimilarity,
                unique_participants: stats.unique_participants,
                grad_norm_sq: r.grad_norm_sq,
                lambda: cfg.fairness.lambda,
                b: cfg.fairness.b,
                mu: cfg.union.mu,
                window: cfg.union.window,
                phi: cfg.fairness.phi,
            })
        })
        .collect()
}

/// `%g`-style formatting with six significant digits.
pub fn format_g6(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        trim_zeros(&format!("{x:.*}", (5 - exp) as usize)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn write_csv<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

/// Runs every repeat and returns the CSV bytes.
pub fn run_to_csv(cfg: &ExperimentConfig) -> Result<Vec<u8>> {
    let rows = run_rows(cfg)?;
    let mut buf = Vec::new();
    write_csv(&rows, &mut buf)?;
    Ok(buf)
}

pub fn run_rows(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for sr in run_experiment(cfg)? {
        rows.extend(result_rows(cfg, &sr)?);
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Lambda,
    Window,
    Phi,
    B,
    Mu,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "lambda" => SweepParam::Lambda,
            "window" => SweepParam::Window,
            "phi" => SweepParam::Phi,
            "b" => SweepParam::B,
            "mu" => SweepParam::Mu,
            other => return Err(config_err("--param", format!("unknown sweep parameter `{other}`"))),
        })
    }
}

impl SweepParam {
    pub fn applies_to(self, method: Method) -> bool {
        match self {
            SweepParam::Lambda | SweepParam::B | SweepParam::Phi => method == Method::SubTrunc,
            SweepParam::Mu | SweepParam::Window => method == Method::UnionFl,
        }
    }

    /// Copy of `cfg` with this parameter set to `value`.
    pub fn apply(self, cfg: &ExperimentConfig, value: &str) -> Result<ExperimentConfig> {
        let mut c = cfg.clone();
        let value = value.trim();
        let bad = |what: &str| config_err("--values", format!("`{value}` is not a valid {what}"));
        match self {
            SweepParam::Lambda => c.fairness.lambda = value.parse().map_err(|_| bad("lambda"))?,
            SweepParam::B => c.fairness.b = value.parse().map_err(|_| bad("b"))?,
            SweepParam::Mu => c.union.mu = value.parse().map_err(|_| bad("mu"))?,
            SweepParam::Window => c.union.window = value.parse().map_err(|_| bad("window"))?,
            SweepParam::Phi => c.fairness.phi = value.parse().map_err(|_| bad("phi"))?,
        }
        c.validate()?;
        Ok(c)
    }
}

/// One full experiment per value; rows carry the swept value in its column.
pub fn sweep_to_csv(cfg: &ExperimentConfig, param: SweepParam, values: &[String]) -> Result<Vec<u8>> {
    if !param.applies_to(cfg.method) {
        return Err(config_err(
            "--param",
            format!("{param:?} does not apply to method {}", cfg.method.name()),
        ));
    }
    if values.is_empty() {
        return Err(config_err("--values", "no values given"));
    }
    let configs = values.iter().map(|v| param.apply(cfg, v)).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for c in &configs {
        rows.extend(run_rows(c)?);
    }
    let mut buf = Vec::new();
    write_csv(&rows, &mut buf)?;
    Ok(buf)
}
