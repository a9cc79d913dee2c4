//! Client selection objectives and baseline samplers.
//!
//! - facility location `G(S) = Ḡ(∅) − Ḡ(S)`, `Ḡ(S) = Σ_i min_{j∈S} d(i, j)`
//! - truncated fairness `H(S) = λ·min(b, Σ_{i∈S} φ(loss_i))`
//! - SubTrunc `W = G + H`
//! - union penalty `g_t(S) = |U_t ∩ S|` with `U_t` the union of the last
//!   `window` selections
//! - UnionFL `h_t = G − μ·g_t`
//!
//! The minimum over an empty selection is taken to be the largest table
//! entry, so `G(∅) = 0` and `G ≥ 0`.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::submodular::{ClientId, GroundSet, SetObjective};

/// Symmetric matrix of pairwise Euclidean distances between client gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceTable {
    n: usize,
    d: Vec<f64>,
    max: f64,
}

impl DistanceTable {
    /// Builds a table from a full row-major matrix, validating zero diagonal,
    /// symmetry and finite nonnegative entries.
    pub fn from_matrix(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::data("distance table needs at least one client"));
        }
        let mut d = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::data(format!("row {i} has {} entries, expected {n}", row.len())));
            }
            d.extend_from_slice(row);
        }
        for i in 0..n {
            if d[i * n + i] != 0.0 {
                return Err(Error::data(format!("diagonal entry ({i},{i}) is not zero")));
            }
            for j in 0..n {
                let v = d[i * n + j];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::data(format!("entry ({i},{j}) = {v} is not finite and nonnegative")));
                }
                if v != d[j * n + i] {
                    return Err(Error::data(format!("entries ({i},{j}) and ({j},{i}) differ")));
                }
            }
        }
        let max = d.iter().copied().fold(0.0, f64::max);
        Ok(Self { n, d, max })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.d[i * self.n..(i + 1) * self.n]
    }

    /// Largest entry; stands in for the minimum over an empty selection.
    pub fn max_entry(&self) -> f64 {
        self.max
    }

    pub fn ground_set(&self) -> GroundSet {
        GroundSet::range(self.n).expect("table is non-empty")
    }
}

/// Pairwise Euclidean distances between flattened gradients.
pub fn build_distance_table(gradients: &[Vec<f64>]) -> Result<DistanceTable> {
    let n = gradients.len();
    let Some(first) = gradients.first() else {
        return Err(Error::data("no gradients supplied"));
    };
    let dim = first.len();
    for (i, g) in gradients.iter().enumerate() {
        if g.len() != dim {
            return Err(Error::data(format!(
                "gradient {i} has dimension {}, expected {dim}",
                g.len()
            )));
        }
        if let Some(k) = g.iter().position(|x| !x.is_finite()) {
            return Err(Error::data(format!("gradient {i} has a non-finite entry at {k}")));
        }
    }
    let mut d = vec![0.0; n * n];
    let mut max = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let dist = gradients[i]
                .iter()
                .zip(&gradients[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            d[i * n + j] = dist;
            d[j * n + i] = dist;
            max = max.max(dist);
        }
    }
    Ok(DistanceTable { n, d, max })
}

/// Cached per-client losses, clamped at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LossVector {
    losses: Vec<f64>,
}

impl LossVector {
    pub fn new(losses: Vec<f64>) -> Result<Self> {
        if let Some(i) = losses.iter().position(|x| !x.is_finite()) {
            return Err(Error::data(format!("loss of client {i} is not finite")));
        }
        Ok(Self { losses: losses.into_iter().map(|x| x.max(0.0)).collect() })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.losses
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhiKind {
    Identity,
    #[default]
    Log1p,
}

impl PhiKind {
    pub fn name(self) -> &'static str {
        match self {
            PhiKind::Identity => "identity",
            PhiKind::Log1p => "log1p",
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        phi_apply(self, x).0
    }
}

impl std::str::FromStr for PhiKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(PhiKind::Identity),
            "log1p" => Ok(PhiKind::Log1p),
            other => Err(Error::domain(format!("unknown phi `{other}` (identity | log1p)"))),
        }
    }
}

/// Applies φ. Negative inputs are clamped to zero; the flag reports a clamp.
pub fn phi_apply(kind: PhiKind, x: f64) -> (f64, bool) {
    let clamped = x < 0.0;
    let x = x.max(0.0);
    let v = match kind {
        PhiKind::Identity => x,
        PhiKind::Log1p => x.ln_1p(),
    };
    (v, clamped)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FairnessParams {
    pub lambda: f64,
    pub b: f64,
    #[serde(default)]
    pub phi: PhiKind,
}

impl Default for FairnessParams {
    fn default() -> Self {
        Self { lambda: 0.95, b: 1.10, phi: PhiKind::Log1p }
    }
}

impl FairnessParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::domain(format!("lambda = {} must be finite and >= 0", self.lambda)));
        }
        if !(self.b > 0.0 && self.b.is_finite()) {
            return Err(Error::domain(format!("b = {} must be finite and > 0", self.b)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnionParams {
    pub mu: f64,
    pub window: usize,
}

impl Default for UnionParams {
    fn default() -> Self {
        Self { mu: 1.0, window: 5 }
    }
}

impl UnionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::domain(format!("mu = {} must be finite and >= 0", self.mu)));
        }
        if self.window == 0 {
            return Err(Error::domain("window must be at least 1"));
        }
        Ok(())
    }
}

/// Chronological record of selected subsets with a look-back window.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionHistory {
    rounds: Vec<Vec<ClientId>>,
    window: usize,
}

impl SelectionHistory {
    pub fn new(window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::domain("window must be at least 1"));
        }
        Ok(Self { rounds: Vec::new(), window })
    }

    pub fn push(&mut self, selected: Vec<ClientId>) {
        self.rounds.push(selected);
    }

    pub fn rounds(&self) -> &[Vec<ClientId>] {
        &self.rounds
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Sorted union of the selections made in rounds `t − window .. t`.
    pub fn window_union(&self, t: usize) -> Vec<ClientId> {
        let end = t.min(self.rounds.len());
        let start = end.saturating_sub(self.window);
        let mut u: Vec<ClientId> = self.rounds[start..end].iter().flatten().copied().collect();
        u.sort_unstable();
        u.dedup();
        u
    }
}

fn check_indices(set: &[ClientId], n: usize) -> Result<()> {
    match set.iter().find(|&&i| i >= n) {
        Some(i) => Err(Error::domain(format!("client {i} out of range for {n} clients"))),
        None => Ok(()),
    }
}

/// Facility-location gain `G` over a distance table.
#[derive(Debug, Clone, Copy)]
pub struct FacilityLocation<'a> {
    pub table: &'a DistanceTable,
}

impl SetObjective for FacilityLocation<'_> {
    fn eval(&self, set: &[ClientId]) -> f64 {
        let t = self.table;
        let dmax = t.max;
        let mut total = 0.0;
        for i in 0..t.n {
            let row = t.row(i);
            let m = set.iter().map(|&j| row[j]).fold(dmax, f64::min);
            total += dmax - m;
        }
        total
    }
}

pub fn facility_location_value(set: &[ClientId], table: &DistanceTable) -> Result<f64> {
    check_indices(set, table.len())?;
    Ok(FacilityLocation { table }.eval(set))
}

/// Truncated fairness term `H`.
#[derive(Debug, Clone, Copy)]
pub struct TruncatedFairness<'a> {
    pub losses: &'a LossVector,
    pub params: FairnessParams,
}

impl SetObjective for TruncatedFairness<'_> {
    fn eval(&self, set: &[ClientId]) -> f64 {
        let l = self.losses.as_slice();
        let total: f64 = set.iter().map(|&i| self.params.phi.apply(l[i])).sum();
        self.params.lambda * self.params.b.min(total)
    }
}

pub fn truncated_fairness_value(
    set: &[ClientId],
    losses: &LossVector,
    params: FairnessParams,
) -> Result<f64> {
    check_indices(set, losses.len())?;
    Ok(TruncatedFairness { losses, params }.eval(set))
}

/// SubTrunc objective `W = G + H`.
#[derive(Debug, Clone, Copy)]
pub struct SubTrunc<'a> {
    pub coverage: FacilityLocation<'a>,
    pub fairness: TruncatedFairness<'a>,
}

impl<'a> SubTrunc<'a> {
    pub fn new(table: &'a DistanceTable, losses: &'a LossVector, params: FairnessParams) -> Self {
        Self {
            coverage: FacilityLocation { table },
            fairness: TruncatedFairness { losses, params },
        }
    }
}

impl SetObjective for SubTrunc<'_> {
    fn eval(&self, set: &[ClientId]) -> f64 {
        self.coverage.eval(set) + self.fairness.eval(set)
    }
}

pub fn subtrunc_value(
    set: &[ClientId],
    table: &DistanceTable,
    losses: &LossVector,
    params: FairnessParams,
) -> Result<f64> {
    if table.len() != losses.len() {
        return Err(Error::data(format!(
            "distance table covers {} clients but {} losses were given",
            table.len(),
            losses.len()
        )));
    }
    check_indices(set, table.len())?;
    Ok(SubTrunc::new(table, losses, params).eval(set))
}

/// Union penalty `g_t` for a fixed round; its value is a count.
#[derive(Debug, Clone)]
pub struct UnionPenalty {
    union: Vec<ClientId>,
}

impl UnionPenalty {
    pub fn new(history: &SelectionHistory, round: usize) -> Self {
        Self { union: history.window_union(round) }
    }

    pub fn count(&self, set: &[ClientId]) -> usize {
        set.iter().filter(|i| self.union.binary_search(i).is_ok()).count()
    }
}

impl SetObjective for UnionPenalty {
    fn eval(&self, set: &[ClientId]) -> f64 {
        self.count(set) as f64
    }
}

pub fn union_penalty(set: &[ClientId], history: &SelectionHistory, round: usize) -> usize {
    UnionPenalty::new(history, round).count(set)
}

/// UnionFL objective `h_t = G − μ·g_t`.
#[derive(Debug, Clone)]
pub struct UnionFl<'a> {
    pub coverage: FacilityLocation<'a>,
    pub penalty: UnionPenalty,
    pub mu: f64,
}

impl<'a> UnionFl<'a> {
    pub fn new(table: &'a DistanceTable, history: &SelectionHistory, mu: f64, round: usize) -> Self {
        Self {
            coverage: FacilityLocation { table },
            penalty: UnionPenalty::new(history, round),
            mu,
        }
    }
}

impl SetObjective for UnionFl<'_> {
    fn eval(&self, set: &[ClientId]) -> f64 {
        self.coverage.eval(set) - self.mu * self.penalty.eval(set)
    }
}

/// UnionFL value with the window taken from `params`.
pub fn unionfl_value(
    set: &[ClientId],
    table: &DistanceTable,
    history: &SelectionHistory,
    params: UnionParams,
    round: usize,
) -> Result<f64> {
    check_indices(set, table.len())?;
    let mut h = history.clone();
    h.window = params.window;
    Ok(UnionFl::new(table, &h, params.mu, round).eval(set))
}

/// Uniform κ-subset without replacement, returned ascending.
pub fn select_random<R: Rng + ?Sized>(
    ground: &GroundSet,
    kappa: usize,
    rng: &mut R,
) -> Result<Vec<ClientId>> {
    if kappa == 0 || kappa > ground.len() {
        return Err(Error::domain(format!("budget {kappa} must lie in 1..={}", ground.len())));
    }
    let ids = ground.ids();
    let mut s: Vec<ClientId> = index::sample(rng, ids.len(), kappa).iter().map(|i| ids[i]).collect();
    s.sort_unstable();
    Ok(s)
}

/// Power-of-Choice: sample `d` candidates, keep the κ with the highest cached
/// loss (ties to the smallest id). Returned ascending.
pub fn select_power_of_choice<R: Rng + ?Sized>(
    losses: &LossVector,
    kappa: usize,
    d: usize,
    rng: &mut R,
) -> Result<Vec<ClientId>> {
    let n = losses.len();
    if kappa == 0 || kappa > d || d > n {
        return Err(Error::domain(format!(
            "power of choice needs 1 <= kappa ({kappa}) <= d ({d}) <= n ({n})"
        )));
    }
    let l = losses.as_slice();
    let mut cand: Vec<ClientId> = index::sample(rng, n, d).into_vec();
    cand.sort_by(|&a, &b| l[b].total_cmp(&l[a]).then(a.cmp(&b)));
    cand.truncate(kappa);
    cand.sort_unstable();
    Ok(cand)
}
