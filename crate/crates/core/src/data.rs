//! Labeled datasets, the synthetic Gaussian generator and non-iid shard
//! partitioning.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

/// Row-major feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, dim: usize, classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::data("dataset must contain at least one example"));
        }
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::data(format!(
                "{} feature values do not form {} rows of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(i) = labels.iter().position(|&y| y >= classes) {
            return Err(Error::data(format!("label {} at row {i} is not below {classes}", labels[i])));
        }
        if let Some(i) = features.iter().position(|x| !x.is_finite()) {
            return Err(Error::data(format!("non-finite feature in row {}", i / dim)));
        }
        Ok(Self { features, labels, dim, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Distinct labels present, ascending.
    pub fn label_set(&self) -> Vec<usize> {
        let mut l = self.labels.clone();
        l.sort_unstable();
        l.dedup();
        l
    }

    /// New dataset holding the given rows in the given order.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(rows.len() * self.dim);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            features.extend_from_slice(self.row(r));
            labels.push(self.labels[r]);
        }
        Self::new(features, labels, self.dim, self.classes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dims: usize,
    pub per_class: usize,
    pub spread: f64,
}

/// `classes` Gaussian clusters with identity covariance whose means are
/// random unit directions scaled by `spread`. Rows are grouped by class.
pub fn generate_synthetic(spec: SyntheticSpec, seed: u64) -> Result<LabeledDataset> {
    let SyntheticSpec { classes, dims, per_class, spread } = spec;
    if classes < 2 || dims < 2 || per_class < 2 {
        return Err(Error::domain(format!(
            "synthetic data needs classes >= 2, dims >= 2, per_class >= 2 (got {classes}, {dims}, {per_class})"
        )));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::domain(format!("spread = {spread} must be finite and >= 0")));
    }
    let mut rng = seeded(seed);
    let mut means = Vec::with_capacity(classes);
    for _ in 0..classes {
        let dir: Vec<f64> = loop {
            let v: Vec<f64> = (0..dims).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        };
        means.push(dir.into_iter().map(|x| x * spread).collect::<Vec<f64>>());
    }
    let mut features = Vec::with_capacity(classes * per_class * dims);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            for m in mean {
                let z: f64 = rng.sample(StandardNormal);
                features.push(m + z);
            }
            labels.push(c);
        }
    }
    LabeledDataset::new(features, labels, dims, classes)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    pub clients: usize,
    pub classes_per_client: usize,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
}

fn default_train_fraction() -> f64 {
    0.8
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientSplit {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

/// Classes held by each client: a seeded shuffle of the class labels is
/// repeated cyclically and cut into consecutive blocks of
/// `classes_per_client`, one block per client in id order.
pub fn class_assignment(classes: usize, spec: &PartitionSpec, seed: u64) -> Result<Vec<Vec<usize>>> {
    let PartitionSpec { clients, classes_per_client: per, .. } = *spec;
    if clients == 0 || per == 0 {
        return Err(Error::Infeasible("clients and classes_per_client must be positive".into()));
    }
    if per > classes {
        return Err(Error::Infeasible(format!(
            "classes_per_client = {per} exceeds the {classes} available classes"
        )));
    }
    let mut order: Vec<usize> = (0..classes).collect();
    order.shuffle(&mut seeded(seed));
    Ok((0..clients)
        .map(|i| {
            let mut block: Vec<usize> = (0..per).map(|k| order[(i * per + k) % classes]).collect();
            block.sort_unstable();
            block
        })
        .collect())
}

/// Splits `ds` into per-client train/test shards.
///
/// Each class's examples are shuffled and divided as evenly as possible
/// among the clients holding that class, remainders going to the lowest
/// ids. Every shard is then split by class into train and test parts so
/// both contain every class of the client.
pub fn shard_partition(ds: &LabeledDataset, spec: &PartitionSpec, seed: u64) -> Result<Vec<ClientSplit>> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Infeasible(format!(
            "train_fraction = {} must lie in (0, 1)",
            spec.train_fraction
        )));
    }
    let classes = ds.classes();
    let assignment = class_assignment(classes, spec, seed)?;

    let mut holders: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (client, held) in assignment.iter().enumerate() {
        for &c in held {
            holders[c].push(client);
        }
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for i in 0..ds.len() {
        by_class[ds.label(i)].push(i);
    }
    for c in 0..classes {
        let (rows, held_by) = (&by_class[c], &holders[c]);
        if held_by.is_empty() && !rows.is_empty() {
            return Err(Error::Infeasible(format!("class {c} is not assigned to any client")));
        }
        if !held_by.is_empty() && rows.len() < 2 * held_by.len() {
            return Err(Error::Infeasible(format!(
                "class {c} has {} examples but needs at least {} to give each of its {} clients a train and a test example",
                rows.len(),
                2 * held_by.len(),
                held_by.len()
            )));
        }
    }

    let mut rng = seeded(seed ^ 0x5EED_5A1D);
    let mut train_rows: Vec<Vec<usize>> = vec![Vec::new(); spec.clients];
    let mut test_rows: Vec<Vec<usize>> = vec![Vec::new(); spec.clients];
    for c in 0..classes {
        let held_by = &holders[c];
        if held_by.is_empty() {
            continue;
        }
        let mut rows = by_class[c].clone();
        rows.shuffle(&mut rng);
        let base = rows.len() / held_by.len();
        let extra = rows.len() % held_by.len();
        let mut start = 0;
        for (k, &client) in held_by.iter().enumerate() {
            let size = base + usize::from(k < extra);
            let shard = &rows[start..start + size];
            start += size;
            let n_train = ((size as f64 * spec.train_fraction).round() as usize).clamp(1, size - 1);
            train_rows[client].extend_from_slice(&shard[..n_train]);
            test_rows[client].extend_from_slice(&shard[n_train..]);
        }
    }

    train_rows
        .iter()
        .zip(&test_rows)
        .map(|(tr, te)| Ok(ClientSplit { train: ds.subset(tr)?, test: ds.subset(te)? }))
        .collect()
}
