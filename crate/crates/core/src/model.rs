//! Desk-scale differentiable models over flat parameter vectors.
//!
//! Both models minimize mean softmax cross-entropy.
//!
//! Parameter layouts:
//! - logistic: `W (classes × inputs)` row-major, then `bias (classes)`
//! - mlp: `W1 (hidden × inputs)`, `b1 (hidden)`, `W2 (classes × hidden)`,
//!   `b2 (classes)`, with a tanh hidden layer

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};

/// A borrowed batch: rows of a dataset.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub data: &'a LabeledDataset,
    pub rows: &'a [usize],
}

/// Anything with a scalar loss and an exact gradient over flat parameters.
pub trait Differentiable: Sync {
    fn dim(&self) -> usize;
    fn loss_and_grad(&self, w: &[f64], batch: Batch<'_>) -> Result<(f64, Vec<f64>)>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelKind {
    Logistic { inputs: usize, classes: usize },
    Mlp { inputs: usize, hidden: usize, classes: usize },
}

impl ModelKind {
    pub fn inputs(&self) -> usize {
        match *self {
            ModelKind::Logistic { inputs, .. } | ModelKind::Mlp { inputs, .. } => inputs,
        }
    }

    pub fn classes(&self) -> usize {
        match *self {
            ModelKind::Logistic { classes, .. } | ModelKind::Mlp { classes, .. } => classes,
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            ModelKind::Logistic { inputs, classes } => classes * (inputs + 1),
            ModelKind::Mlp { inputs, hidden, classes } => hidden * (inputs + 1) + classes * (hidden + 1),
        }
    }

    /// Initial parameters: zeros for logistic regression, uniform
    /// `±1/sqrt(fan_in)` weights and zero biases for the MLP.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ModelParams {
        let mut w = vec![0.0; self.param_count()];
        if let ModelKind::Mlp { inputs, hidden, classes } = *self {
            let a1 = 1.0 / (inputs as f64).sqrt();
            for x in &mut w[..hidden * inputs] {
                *x = rng.random_range(-a1..a1);
            }
            let a2 = 1.0 / (hidden as f64).sqrt();
            let off = hidden * (inputs + 1);
            for x in &mut w[off..off + classes * hidden] {
                *x = rng.random_range(-a2..a2);
            }
        }
        ModelParams { w, kind: *self }
    }

    fn check_batch(&self, w: &[f64], batch: &Batch<'_>) -> Result<()> {
        if w.len() != self.param_count() {
            return Err(Error::data(format!(
                "parameter vector has {} entries, model expects {}",
                w.len(),
                self.param_count()
            )));
        }
        if batch.rows.is_empty() {
            return Err(Error::data("empty batch"));
        }
        if batch.data.dim() != self.inputs() {
            return Err(Error::data(format!(
                "features have dimension {}, model expects {}",
                batch.data.dim(),
                self.inputs()
            )));
        }
        Ok(())
    }

    /// Class scores for one example.
    pub fn logits(&self, w: &[f64], x: &[f64]) -> Vec<f64> {
        match *self {
            ModelKind::Logistic { inputs, classes } => {
                let (weights, bias) = w.split_at(classes * inputs);
                (0..classes)
                    .map(|c| dot(&weights[c * inputs..(c + 1) * inputs], x) + bias[c])
                    .collect()
            }
            ModelKind::Mlp { inputs, hidden, classes } => {
                let h = self.hidden_activations(w, x);
                let off = hidden * (inputs + 1);
                let (w2, b2) = w[off..].split_at(classes * hidden);
                (0..classes).map(|c| dot(&w2[c * hidden..(c + 1) * hidden], &h) + b2[c]).collect()
            }
        }
    }

    fn hidden_activations(&self, w: &[f64], x: &[f64]) -> Vec<f64> {
        let ModelKind::Mlp { inputs, hidden, .. } = *self else {
            return Vec::new();
        };
        let (w1, rest) = w.split_at(hidden * inputs);
        let b1 = &rest[..hidden];
        (0..hidden).map(|j| (dot(&w1[j * inputs..(j + 1) * inputs], x) + b1[j]).tanh()).collect()
    }

    pub fn predict(&self, w: &[f64], x: &[f64]) -> usize {
        let z = self.logits(w, x);
        let mut best = 0;
        for (c, &v) in z.iter().enumerate() {
            if v > z[best] {
                best = c;
            }
        }
        best
    }

    /// Percentage of rows classified correctly.
    pub fn accuracy(&self, w: &[f64], data: &LabeledDataset) -> f64 {
        let correct = (0..data.len()).filter(|&i| self.predict(w, data.row(i)) == data.label(i)).count();
        100.0 * correct as f64 / data.len() as f64
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Writes softmax probabilities of `z` into `p` and returns `logsumexp(z)`.
fn softmax_into(z: &[f64], p: &mut [f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (pi, &zi) in p.iter_mut().zip(z) {
        *pi = (zi - m).exp();
        s += *pi;
    }
    for pi in p.iter_mut() {
        *pi /= s;
    }
    m + s.ln()
}

fn finish(loss_sum: f64, mut grad: Vec<f64>, count: usize) -> Result<(f64, Vec<f64>)> {
    let scale = 1.0 / count as f64;
    let loss = loss_sum * scale;
    if !loss.is_finite() {
        return Err(Error::numeric("loss is not finite"));
    }
    for g in &mut grad {
        *g *= scale;
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::numeric(format!("gradient entry {i} is not finite")));
    }
    Ok((loss.max(0.0), grad))
}

impl Differentiable for ModelKind {
    fn dim(&self) -> usize {
        self.param_count()
    }

    /// Mean cross-entropy over the batch and its analytic gradient.
    fn loss_and_grad(&self, w: &[f64], batch: Batch<'_>) -> Result<(f64, Vec<f64>)> {
        self.check_batch(w, &batch)?;
        let classes = self.classes();
        let mut grad = vec![0.0; w.len()];
        let mut probs = vec![0.0; classes];
        let mut loss_sum = 0.0;
        match *self {
            ModelKind::Logistic { inputs, .. } => {
                let bias_off = classes * inputs;
                for &r in batch.rows {
                    let x = batch.data.row(r);
                    let y = batch.data.label(r);
                    let z = self.logits(w, x);
                    let lse = softmax_into(&z, &mut probs);
                    loss_sum += lse - z[y];
                    for c in 0..classes {
                        let err = probs[c] - if c == y { 1.0 } else { 0.0 };
                        for (g, &xi) in grad[c * inputs..(c + 1) * inputs].iter_mut().zip(x) {
                            *g += err * xi;
                        }
                        grad[bias_off + c] += err;
                    }
                }
            }
            ModelKind::Mlp { inputs, hidden, .. } => {
                let b1_off = hidden * inputs;
                let w2_off = hidden * (inputs + 1);
                let b2_off = w2_off + classes * hidden;
                let mut dh = vec![0.0; hidden];
                for &r in batch.rows {
                    let x = batch.data.row(r);
                    let y = batch.data.label(r);
                    let h = self.hidden_activations(w, x);
                    let z = self.logits(w, x);
                    let lse = softmax_into(&z, &mut probs);
                    loss_sum += lse - z[y];
                    dh.iter_mut().for_each(|v| *v = 0.0);
                    for c in 0..classes {
                        let err = probs[c] - if c == y { 1.0 } else { 0.0 };
                        let w2c = &w[w2_off + c * hidden..w2_off + (c + 1) * hidden];
                        for j in 0..hidden {
                            grad[w2_off + c * hidden + j] += err * h[j];
                            dh[j] += err * w2c[j];
                        }
                        grad[b2_off + c] += err;
                    }
                    for j in 0..hidden {
                        let da = dh[j] * (1.0 - h[j] * h[j]);
                        for (g, &xi) in grad[j * inputs..(j + 1) * inputs].iter_mut().zip(x) {
                            *g += da * xi;
                        }
                        grad[b1_off + j] += da;
                    }
                }
            }
        }
        finish(loss_sum, grad, batch.rows.len())
    }
}

/// Flat parameter vector tagged with its model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub w: Vec<f64>,
    pub kind: ModelKind,
}

impl ModelParams {
    pub fn new(w: Vec<f64>, kind: ModelKind) -> Result<Self> {
        if w.len() != kind.param_count() {
            return Err(Error::data(format!(
                "{} parameters given, {:?} needs {}",
                w.len(),
                kind,
                kind.param_count()
            )));
        }
        if let Some(i) = w.iter().position(|x| !x.is_finite()) {
            return Err(Error::numeric(format!("parameter {i} is not finite")));
        }
        Ok(Self { w, kind })
    }
}

/// Full-data loss and gradient of one dataset.
pub fn full_loss_and_grad<M: Differentiable + ?Sized>(
    model: &M,
    w: &[f64],
    data: &LabeledDataset,
) -> Result<(f64, Vec<f64>)> {
    let rows: Vec<usize> = (0..data.len()).collect();
    model.loss_and_grad(w, Batch { data, rows: &rows })
}
