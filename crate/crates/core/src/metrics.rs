//! Evaluation metrics.
//!
//! Client dissimilarity is the spread of the global model's per-client test
//! accuracy, in percentage points. The default is the population standard
//! deviation; range and mean absolute pairwise difference are available for
//! comparison.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::engine::ClientState;
use crate::error::{Error, Result};
use crate::model::{full_loss_and_grad, ModelParams};
use crate::objectives::SelectionHistory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DissimilarityKind {
    #[default]
    Std,
    Range,
    MeanPairwise,
}

fn check_accuracies(acc: &[f64]) -> Result<()> {
    if acc.is_empty() {
        return Err(Error::domain("no accuracies supplied"));
    }
    if let Some(a) = acc.iter().find(|a| !(0.0..=100.0).contains(*a)) {
        return Err(Error::domain(format!("accuracy {a} is outside [0, 100]")));
    }
    Ok(())
}

/// Population standard deviation of per-client accuracy.
pub fn client_dissimilarity(acc: &[f64]) -> Result<f64> {
    dissimilarity(DissimilarityKind::Std, acc)
}

pub fn dissimilarity(kind: DissimilarityKind, acc: &[f64]) -> Result<f64> {
    check_accuracies(acc)?;
    let n = acc.len() as f64;
    Ok(match kind {
        DissimilarityKind::Std => {
            let mean = acc.iter().sum::<f64>() / n;
            (acc.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n).sqrt()
        }
        DissimilarityKind::Range => {
            let max = acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = acc.iter().copied().fold(f64::INFINITY, f64::min);
            max - min
        }
        DissimilarityKind::MeanPairwise => {
            if acc.len() < 2 {
                return Ok(0.0);
            }
            let mut total = 0.0;
            for (i, a) in acc.iter().enumerate() {
                for b in &acc[i + 1..] {
                    total += (a - b).abs();
                }
            }
            total / (n * (n - 1.0) / 2.0)
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityReport {
    pub per_client_acc: Vec<f64>,
    pub dissimilarity: f64,
    pub mean_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalEvaluation {
    pub report: DissimilarityReport,
    /// Unweighted mean of per-client full training losses.
    pub train_loss: f64,
    /// `‖∇f(w)‖²` of that mean loss.
    pub grad_norm_sq: f64,
}

/// Scores the global model on every client. Per-client work may run in
/// parallel; reductions run in client order.
pub fn evaluate_global(
    params: &ModelParams,
    clients: &[ClientState],
    kind: DissimilarityKind,
) -> Result<GlobalEvaluation> {
    if clients.is_empty() {
        return Err(Error::domain("no clients to evaluate"));
    }
    let model = params.kind;
    let w = &params.w;
    let per_client = |c: &ClientState| -> Result<(f64, Vec<f64>, f64)> {
        let (loss, grad) = full_loss_and_grad(&model, w, &c.train)?;
        Ok((loss, grad, model.accuracy(w, &c.test)))
    };
    #[cfg(feature = "parallel")]
    let results: Vec<_> = clients.par_iter().map(per_client).collect::<Result<_>>()?;
    #[cfg(not(feature = "parallel"))]
    let results: Vec<_> = clients.iter().map(per_client).collect::<Result<_>>()?;

    let n = clients.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; w.len()];
    let mut acc = Vec::with_capacity(clients.len());
    for (l, g, a) in results {
        loss += l;
        for (s, x) in grad.iter_mut().zip(&g) {
            *s += x;
        }
        acc.push(a);
    }
    let grad_norm_sq = grad.iter().map(|g| (g / n) * (g / n)).sum();
    let mean_acc = acc.iter().sum::<f64>() / n;
    Ok(GlobalEvaluation {
        report: DissimilarityReport {
            dissimilarity: dissimilarity(kind, &acc)?,
            per_client_acc: acc,
            mean_acc,
        },
        train_loss: loss / n,
        grad_norm_sq,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParticipationStats {
    pub counts: Vec<usize>,
    pub unique_participants: usize,
    pub max_min_gap: usize,
}

pub fn participation_stats(history: &SelectionHistory, n: usize) -> Result<ParticipationStats> {
    participation_from_rounds(history.rounds(), n)
}

/// Statistics over an explicit list of rounds (for running totals).
pub fn participation_from_rounds(rounds: &[Vec<usize>], n: usize) -> Result<ParticipationStats> {
    let mut counts = vec![0usize; n];
    for s in rounds {
        for &i in s {
            let slot = counts
                .get_mut(i)
                .ok_or_else(|| Error::domain(format!("client {i} out of range for {n} clients")))?;
            *slot += 1;
        }
    }
    let unique_participants = counts.iter().filter(|&&c| c > 0).count();
    let max = counts.iter().copied().max().unwrap_or(0);
    let min = counts.iter().copied().min().unwrap_or(0);
    Ok(ParticipationStats { counts, unique_participants, max_min_gap: max - min })
}

/// Inputs of the output-round distribution `P(k) ∝ (1+ζ)^(K−1−k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceParams {
    pub smoothness: f64,
    pub local_steps: usize,
    pub rounds: usize,
    pub learning_rate: f64,
}

impl ConvergenceParams {
    /// `ζ = η²L²E² · (9ηLE / 4)`.
    pub fn zeta(&self) -> f64 {
        let ele = self.learning_rate * self.smoothness * self.local_steps as f64;
        ele * ele * (9.0 * ele / 4.0)
    }

    /// Probabilities of `k = 0..K`, computed in log space so large `K` cannot
    /// overflow.
    pub fn output_round_weights(&self) -> Vec<f64> {
        let k = self.rounds;
        let log_base = self.zeta().ln_1p();
        let logs: Vec<f64> = (0..k).map(|i| (k - 1 - i) as f64 * log_base).collect();
        let top = logs.first().copied().unwrap_or(0.0);
        let raw: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / total).collect()
    }
}

/// Draws the output round `k* ~ P`.
pub fn sample_output_round<R: Rng + ?Sized>(params: &ConvergenceParams, rng: &mut R) -> Result<usize> {
    if params.rounds == 0 {
        return Err(Error::domain("rounds must be >= 1"));
    }
    if !(params.zeta() >= 0.0 && params.zeta().is_finite()) {
        return Err(Error::domain(format!("zeta = {} must be finite and >= 0", params.zeta())));
    }
    let weights = params.output_round_weights();
    let dist = WeightedIndex::new(&weights).map_err(|e| Error::numeric(e.to_string()))?;
    Ok(dist.sample(rng))
}
