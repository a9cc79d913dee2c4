//! Reference implementations used as oracles by the integration tests.
//! Written from the definitions, sharing no code with the library.

#![allow(dead_code)]

use fedsubsel::data::LabeledDataset;
use fedsubsel::model::ModelKind;

/// Mean softmax cross-entropy computed the long way.
pub fn naive_loss(kind: &ModelKind, w: &[f64], data: &LabeledDataset, rows: &[usize]) -> f64 {
    let mut total = 0.0;
    for &r in rows {
        let x = data.row(r);
        let y = data.label(r);
        let z = naive_logits(kind, w, x);
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = z.iter().map(|v| (v - m).exp()).sum();
        let log_p = (z[y] - m) - denom.ln();
        total -= log_p;
    }
    total / rows.len() as f64
}

pub fn naive_logits(kind: &ModelKind, w: &[f64], x: &[f64]) -> Vec<f64> {
    match *kind {
        ModelKind::Logistic { inputs, classes } => (0..classes)
            .map(|c| {
                let mut s = w[classes * inputs + c];
                for j in 0..inputs {
                    s += w[c * inputs + j] * x[j];
                }
                s
            })
            .collect(),
        ModelKind::Mlp { inputs, hidden, classes } => {
            let w1 = |j: usize, i: usize| w[j * inputs + i];
            let b1 = |j: usize| w[hidden * inputs + j];
            let w2 = |c: usize, j: usize| w[hidden * (inputs + 1) + c * hidden + j];
            let b2 = |c: usize| w[hidden * (inputs + 1) + classes * hidden + c];
            let h: Vec<f64> = (0..hidden)
                .map(|j| (b1(j) + (0..inputs).map(|i| w1(j, i) * x[i]).sum::<f64>()).tanh())
                .collect();
            (0..classes)
                .map(|c| b2(c) + (0..hidden).map(|j| w2(c, j) * h[j]).sum::<f64>())
                .collect()
        }
    }
}

/// Closed-form gradient of the logistic model: `(p − onehot(y)) ⊗ [x, 1]`.
pub fn naive_logistic_grad(inputs: usize, classes: usize, w: &[f64], data: &LabeledDataset, rows: &[usize]) -> Vec<f64> {
    let kind = ModelKind::Logistic { inputs, classes };
    let mut g = vec![0.0; classes * (inputs + 1)];
    for &r in rows {
        let x = data.row(r);
        let z = naive_logits(&kind, w, x);
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        for c in 0..classes {
            let err = e[c] / s - if c == data.label(r) { 1.0 } else { 0.0 };
            for j in 0..inputs {
                g[c * inputs + j] += err * x[j];
            }
            g[classes * inputs + c] += err;
        }
    }
    g.iter().map(|v| v / rows.len() as f64).collect()
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn distance_matrix(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    points.iter().map(|p| points.iter().map(|q| euclid(p, q)).collect()).collect()
}

/// Facility location from a raw matrix: `Σ_i (d_max − min_{j∈S} d_ij)`,
/// with the empty minimum taken as `d_max`.
pub fn naive_coverage(d: &[Vec<f64>], set: &[usize]) -> f64 {
    let dmax = d.iter().flatten().copied().fold(0.0, f64::max);
    d.iter()
        .map(|row| {
            let m = set.iter().map(|&j| row[j]).fold(dmax, f64::min);
            dmax - m
        })
        .sum()
}

pub fn naive_phi(log1p: bool, x: f64) -> f64 {
    if log1p {
        (1.0 + x).ln()
    } else {
        x
    }
}

/// `λ · min(b, Σ φ(loss_i))`.
pub fn naive_fairness(losses: &[f64], set: &[usize], lambda: f64, b: f64, log1p: bool) -> f64 {
    let f: f64 = set.iter().map(|&i| naive_phi(log1p, losses[i].max(0.0))).sum();
    lambda * f.min(b)
}

/// Every subset of `0..n` with at most `k` members, as sorted vectors.
pub fn subsets_up_to(n: usize, k: usize) -> Vec<Vec<usize>> {
    (1u32..(1 << n))
        .filter(|m| (m.count_ones() as usize) <= k)
        .map(|m| (0..n).filter(|i| m & (1 << i) != 0).collect())
        .collect()
}
