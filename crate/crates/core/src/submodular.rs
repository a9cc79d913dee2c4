//! Generic set-function machinery.
//!
//! A [`SetObjective`] assigns a real utility to every subset of a
//! [`GroundSet`] of client ids. On top of it this module provides marginal
//! gains, the greedy and stochastic greedy maximizers used for client
//! selection, an exhaustive oracle for small ground sets, and verifiers for
//! the submodular, supermodular and monotone inequalities.
//!
//! Subsets are passed as slices of client ids. Their order never affects the
//! value of an objective; the maximizers report elements in selection order.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ClientId = usize;

/// Largest ground set accepted by [`brute_force_maximize`].
pub const BRUTE_FORCE_LIMIT: usize = 20;

/// Largest ground set for which [`verify_property`] enumerates every chain.
pub const EXHAUSTIVE_LIMIT: usize = 8;

pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// Sorted, duplicate-free, non-empty set of client ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundSet {
    ids: Vec<ClientId>,
}

impl GroundSet {
    pub fn new(mut ids: Vec<ClientId>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::domain("ground set must contain at least one client"));
        }
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::domain(format!("duplicate client id {} in ground set", w[0])));
        }
        Ok(Self { ids })
    }

    /// The ground set `{0, 1, ..., n-1}`.
    pub fn range(n: usize) -> Result<Self> {
        Self::new((0..n).collect())
    }

    pub fn ids(&self) -> &[ClientId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: ClientId) -> bool {
        self.ids.binary_search(&id).is_ok()
    }
}

/// A deterministic utility over subsets of client ids.
pub trait SetObjective {
    fn eval(&self, set: &[ClientId]) -> f64;
}

impl<F> SetObjective for F
where
    F: Fn(&[ClientId]) -> f64,
{
    fn eval(&self, set: &[ClientId]) -> f64 {
        self(set)
    }
}

fn with_element(set: &[ClientId], e: ClientId) -> Vec<ClientId> {
    let mut v = Vec::with_capacity(set.len() + 1);
    v.extend_from_slice(set);
    v.push(e);
    v
}

/// `f(S ∪ {e}) − f(S)`.
pub fn marginal_gain<F: SetObjective + ?Sized>(
    f: &F,
    ground: &GroundSet,
    e: ClientId,
    set: &[ClientId],
) -> Result<f64> {
    if !ground.contains(e) {
        return Err(Error::domain(format!("client {e} is not in the ground set")));
    }
    if set.contains(&e) {
        return Err(Error::domain(format!("client {e} is already in the set")));
    }
    if let Some(&x) = set.iter().find(|&&x| !ground.contains(x)) {
        return Err(Error::domain(format!("set member {x} is not in the ground set")));
    }
    Ok(gain_unchecked(f, e, set))
}

fn gain_unchecked<F: SetObjective + ?Sized>(f: &F, e: ClientId, set: &[ClientId]) -> f64 {
    f.eval(&with_element(set, e)) - f.eval(set)
}

fn check_budget(ground: &GroundSet, kappa: usize) -> Result<()> {
    if kappa == 0 || kappa > ground.len() {
        return Err(Error::domain(format!(
            "budget {kappa} must lie in 1..={}",
            ground.len()
        )));
    }
    Ok(())
}

/// Index (into `candidates`) of the best marginal gain. `candidates` must be
/// ascending so the first strict maximum is the smallest id.
fn best_candidate<F: SetObjective + ?Sized>(
    f: &F,
    set: &[ClientId],
    candidates: &[ClientId],
) -> ClientId {
    let base = f.eval(set);
    let mut scratch = with_element(set, 0);
    let last = scratch.len() - 1;
    let mut best = candidates[0];
    let mut best_gain = f64::NEG_INFINITY;
    for &c in candidates {
        scratch[last] = c;
        let gain = f.eval(&scratch) - base;
        if gain > best_gain {
            best_gain = gain;
            best = c;
        }
    }
    best
}

/// Greedy maximization under `|S| = κ`.
///
/// Each of the κ steps adds the remaining client with the highest marginal
/// gain (ties to the smallest id). Selection continues through negative gains
/// so exactly κ clients are returned, in selection order.
pub fn greedy_maximize<F: SetObjective + ?Sized>(
    f: &F,
    ground: &GroundSet,
    kappa: usize,
) -> Result<Vec<ClientId>> {
    check_budget(ground, kappa)?;
    let mut selected = Vec::with_capacity(kappa);
    let mut remaining = ground.ids().to_vec();
    while selected.len() < kappa {
        let best = best_candidate(f, &selected, &remaining);
        remaining.retain(|&c| c != best);
        selected.push(best);
    }
    Ok(selected)
}

/// Stochastic greedy: each step evaluates only `min(r, |N \ S|)` candidates
/// drawn uniformly without replacement from the unselected clients.
pub fn stochastic_greedy_maximize<F: SetObjective + ?Sized, R: Rng + ?Sized>(
    f: &F,
    ground: &GroundSet,
    kappa: usize,
    r: usize,
    rng: &mut R,
) -> Result<Vec<ClientId>> {
    check_budget(ground, kappa)?;
    if r == 0 {
        return Err(Error::domain("sample size r must be at least 1"));
    }
    let mut selected = Vec::with_capacity(kappa);
    let mut remaining = ground.ids().to_vec();
    let mut candidates = Vec::with_capacity(r.min(remaining.len()));
    while selected.len() < kappa {
        candidates.clear();
        if r >= remaining.len() {
            candidates.extend_from_slice(&remaining);
        } else {
            candidates.extend(index::sample(rng, remaining.len(), r).iter().map(|i| remaining[i]));
            candidates.sort_unstable();
        }
        let best = best_candidate(f, &selected, &candidates);
        remaining.retain(|&c| c != best);
        selected.push(best);
    }
    Ok(selected)
}

/// Exact maximum of `f` over all non-empty subsets of size at most κ.
///
/// Ties go to the lexicographically smallest sorted id sequence. Refuses
/// ground sets larger than [`BRUTE_FORCE_LIMIT`].
pub fn brute_force_maximize<F: SetObjective + ?Sized>(
    f: &F,
    ground: &GroundSet,
    kappa: usize,
) -> Result<(Vec<ClientId>, f64)> {
    if ground.len() > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge { size: ground.len(), limit: BRUTE_FORCE_LIMIT });
    }
    check_budget(ground, kappa)?;
    let ids = ground.ids();
    let n = ids.len();
    let mut best: Option<(Vec<ClientId>, f64)> = None;
    let mut set = Vec::with_capacity(kappa);
    for mask in 1u32..(1u32 << n) {
        if mask.count_ones() as usize > kappa {
            continue;
        }
        set.clear();
        set.extend((0..n).filter(|&i| mask & (1 << i) != 0).map(|i| ids[i]));
        let value = f.eval(&set);
        let better = match &best {
            None => true,
            Some((b, v)) => value > *v || (value == *v && set.as_slice() < b.as_slice()),
        };
        if better {
            best = Some((set.clone(), value));
        }
    }
    Ok(best.expect("ground set is non-empty"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropertyKind {
    Submodular,
    Supermodular,
    Monotone,
}

/// A triple that broke the checked inequality.
///
/// For the (super/sub)modular kinds `lhs = Δ(e|A)` and `rhs = Δ(e|B)` with
/// `A ⊆ B`. For monotonicity `a = b = S`, `lhs = Δ(e|S)` and `rhs = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub a: Vec<ClientId>,
    pub b: Vec<ClientId>,
    pub e: ClientId,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone)]
pub struct PropertyReport {
    pub kind: PropertyKind,
    pub trials: usize,
    pub exhaustive: bool,
    pub tolerance: f64,
    pub violations: Vec<Violation>,
}

impl PropertyReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

struct Checker<'a, F: ?Sized> {
    f: &'a F,
    kind: PropertyKind,
    tolerance: f64,
    trials: usize,
    violations: Vec<Violation>,
}

impl<F: SetObjective + ?Sized> Checker<'_, F> {
    fn chain(&mut self, a: &[ClientId], b: &[ClientId], e: ClientId) {
        self.trials += 1;
        let lhs = gain_unchecked(self.f, e, a);
        let broken = match self.kind {
            PropertyKind::Monotone => {
                if lhs < -self.tolerance {
                    self.record(a, a, e, lhs, 0.0);
                }
                return;
            }
            PropertyKind::Submodular => {
                let rhs = gain_unchecked(self.f, e, b);
                (lhs < rhs - self.tolerance).then_some(rhs)
            }
            PropertyKind::Supermodular => {
                let rhs = gain_unchecked(self.f, e, b);
                (lhs > rhs + self.tolerance).then_some(rhs)
            }
        };
        if let Some(rhs) = broken {
            self.record(a, b, e, lhs, rhs);
        }
    }

    fn record(&mut self, a: &[ClientId], b: &[ClientId], e: ClientId, lhs: f64, rhs: f64) {
        self.violations.push(Violation { a: a.to_vec(), b: b.to_vec(), e, lhs, rhs });
    }
}

/// Checks the inequality of `kind` on chains `A ⊆ B ⊆ N`, `e ∈ N \ B`
/// (or on pairs `S`, `e ∉ S` for monotonicity).
///
/// Ground sets of at most [`EXHAUSTIVE_LIMIT`] clients are checked on every
/// chain and `trials` is ignored; larger ones on `trials` random chains where
/// each client independently lands in `A`, `B \ A` or outside `B`.
pub fn verify_property<F: SetObjective + ?Sized, R: Rng + ?Sized>(
    f: &F,
    ground: &GroundSet,
    kind: PropertyKind,
    trials: usize,
    tolerance: f64,
    rng: &mut R,
) -> PropertyReport {
    let mut checker = Checker { f, kind, tolerance, trials: 0, violations: Vec::new() };
    let ids = ground.ids();
    let n = ids.len();
    let exhaustive = n <= EXHAUSTIVE_LIMIT;
    // Per client: 0 → in A, 1 → in B \ A, 2 → outside B.
    let mut labels = vec![0u8; n];
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    let mut outside = Vec::with_capacity(n);

    let mut check_labels = |labels: &[u8], checker: &mut Checker<'_, F>, pick: Option<usize>| {
        a.clear();
        b.clear();
        outside.clear();
        for (i, &l) in labels.iter().enumerate() {
            match l {
                0 => {
                    a.push(ids[i]);
                    b.push(ids[i]);
                }
                1 => b.push(ids[i]),
                _ => outside.push(ids[i]),
            }
        }
        // Monotonicity only needs one set; use B as S.
        let base: &[ClientId] = if kind == PropertyKind::Monotone { &b } else { &a };
        match pick {
            Some(k) => checker.chain(base, &b, outside[k % outside.len()]),
            None => {
                for &e in &outside {
                    checker.chain(base, &b, e);
                }
            }
        }
    };

    if exhaustive {
        let total = 3usize.pow(n as u32);
        for code in 0..total {
            let mut c = code;
            for l in labels.iter_mut() {
                *l = (c % 3) as u8;
                c /= 3;
            }
            if kind == PropertyKind::Monotone && labels.contains(&0) {
                continue;
            }
            if labels.contains(&2) {
                check_labels(&labels, &mut checker, None);
            }
        }
    } else {
        for _ in 0..trials {
            for l in labels.iter_mut() {
                *l = rng.random_range(0..3u8);
            }
            if !labels.contains(&2) {
                let i = rng.random_range(0..n);
                labels[i] = 2;
            }
            let outside_count = labels.iter().filter(|&&l| l == 2).count();
            let k = rng.random_range(0..outside_count);
            check_labels(&labels, &mut checker, Some(k));
        }
    }

    PropertyReport {
        kind,
        trials: checker.trials,
        exhaustive,
        tolerance,
        violations: checker.violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn card(s: &[ClientId]) -> f64 {
        s.len() as f64
    }

    fn square(s: &[ClientId]) -> f64 {
        (s.len() * s.len()) as f64
    }

    /// Facility location on the 3-client table d = [[0,1,4],[1,0,2],[4,2,0]],
    /// evaluated directly from its definition with the empty minimum = d_max.
    fn fl3(s: &[ClientId]) -> f64 {
        let d = [[0.0, 1.0, 4.0], [1.0, 0.0, 2.0], [4.0, 2.0, 0.0]];
        let dmax = 4.0;
        let empty = 3.0 * dmax;
        let cover: f64 = (0..3)
            .map(|i| s.iter().map(|&j| d[i][j]).fold(dmax, f64::min))
            .sum();
        empty - cover
    }

    #[test]
    fn ground_set_sorts_and_rejects_duplicates() {
        assert_eq!(GroundSet::new(vec![3, 1, 2]).unwrap().ids(), &[1, 2, 3]);
        assert!(GroundSet::new(vec![1, 1]).is_err());
        assert!(GroundSet::new(vec![]).is_err());
    }

    #[test]
    fn marginal_gain_examples() {
        let n = GroundSet::range(5).unwrap();
        assert_eq!(marginal_gain(&card, &n, 3, &[1, 2]).unwrap(), 1.0);
        let n3 = GroundSet::range(3).unwrap();
        assert_eq!(marginal_gain(&fl3, &n3, 1, &[]).unwrap(), 9.0);
        assert_eq!(marginal_gain(&fl3, &n3, 0, &[]).unwrap(), fl3(&[0]) - fl3(&[]));
    }

    #[test]
    fn marginal_gain_domain_errors() {
        let n = GroundSet::range(3).unwrap();
        assert!(matches!(marginal_gain(&card, &n, 1, &[1]), Err(Error::Domain(_))));
        assert!(matches!(marginal_gain(&card, &n, 7, &[]), Err(Error::Domain(_))));
    }

    #[test]
    fn greedy_examples() {
        let n3 = GroundSet::range(3).unwrap();
        assert_eq!(greedy_maximize(&fl3, &n3, 1).unwrap(), vec![1]);
        let two = greedy_maximize(&fl3, &n3, 2).unwrap();
        assert_eq!(two, vec![1, 2]);
        assert_eq!(fl3(&two), 11.0);
        let n5 = GroundSet::new(vec![4, 9, 2, 7]).unwrap();
        assert_eq!(greedy_maximize(&card, &n5, 2).unwrap(), vec![2, 4]);
    }

    #[test]
    fn greedy_continues_through_negative_gains() {
        let n = GroundSet::range(4).unwrap();
        let neg = |s: &[ClientId]| -(s.len() as f64);
        assert_eq!(greedy_maximize(&neg, &n, 3).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn budget_out_of_range() {
        let n = GroundSet::range(3).unwrap();
        assert!(greedy_maximize(&card, &n, 0).is_err());
        assert!(greedy_maximize(&card, &n, 4).is_err());
        assert!(stochastic_greedy_maximize(&card, &n, 4, 2, &mut seeded(1)).is_err());
        assert!(stochastic_greedy_maximize(&card, &n, 2, 0, &mut seeded(1)).is_err());
    }

    #[test]
    fn stochastic_greedy_degenerate_cases() {
        let n3 = GroundSet::range(3).unwrap();
        for seed in 0..20 {
            let s = stochastic_greedy_maximize(&fl3, &n3, 2, 3, &mut seeded(seed)).unwrap();
            assert_eq!(s, greedy_maximize(&fl3, &n3, 2).unwrap());
            let mut all = stochastic_greedy_maximize(&fl3, &n3, 3, 1, &mut seeded(seed)).unwrap();
            all.sort_unstable();
            assert_eq!(all, vec![0, 1, 2]);
        }
    }

    #[test]
    fn stochastic_greedy_forced_choice_is_the_sample() {
        let n3 = GroundSet::range(3).unwrap();
        let mut seen = [false; 3];
        for seed in 0..64 {
            let mut rng = seeded(seed);
            let s = stochastic_greedy_maximize(&fl3, &n3, 1, 1, &mut rng).unwrap();
            let expected = index::sample(&mut seeded(seed), 3, 1).index(0);
            assert_eq!(s, vec![expected]);
            seen[expected] = true;
        }
        assert!(seen.iter().all(|&b| b));
    }

    #[test]
    fn stochastic_greedy_is_deterministic_per_seed() {
        let n = GroundSet::range(12).unwrap();
        let f = |s: &[ClientId]| s.iter().map(|&i| ((i * 7) % 5) as f64).sum::<f64>().sqrt();
        let a = stochastic_greedy_maximize(&f, &n, 5, 3, &mut seeded(9)).unwrap();
        let b = stochastic_greedy_maximize(&f, &n, 5, 3, &mut seeded(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn brute_force_examples() {
        let n3 = GroundSet::range(3).unwrap();
        assert_eq!(brute_force_maximize(&fl3, &n3, 2).unwrap(), (vec![0, 2], 11.0));
        assert_eq!(brute_force_maximize(&fl3, &n3, 3).unwrap(), (vec![0, 1, 2], 12.0));
        let zero = |_: &[ClientId]| 0.0;
        let n = GroundSet::new(vec![5, 3, 8]).unwrap();
        assert_eq!(brute_force_maximize(&zero, &n, 2).unwrap(), (vec![3], 0.0));
    }

    #[test]
    fn brute_force_refuses_large_sets() {
        let n = GroundSet::range(21).unwrap();
        assert!(matches!(
            brute_force_maximize(&card, &n, 2),
            Err(Error::TooLarge { size: 21, limit: 20 })
        ));
    }

    #[test]
    fn square_is_not_submodular() {
        let n = GroundSet::range(4).unwrap();
        let rep = verify_property(&square, &n, PropertyKind::Submodular, 0, 1e-9, &mut seeded(0));
        assert!(rep.exhaustive);
        assert!(!rep.passed());
        let w = rep
            .violations
            .iter()
            .find(|v| v.a.is_empty() && v.b.len() == 1)
            .expect("witness with A = ∅, |B| = 1");
        assert_eq!((w.lhs, w.rhs), (1.0, 3.0));
    }

    #[test]
    fn modular_passes_both_ways() {
        let weights = [0.5, 2.0, 1.25, 3.0, 0.0, 7.5];
        let modular = |s: &[ClientId]| s.iter().map(|&i| weights[i]).sum::<f64>();
        let n = GroundSet::range(6).unwrap();
        for kind in [PropertyKind::Submodular, PropertyKind::Supermodular, PropertyKind::Monotone] {
            let rep = verify_property(&modular, &n, kind, 0, 1e-9, &mut seeded(0));
            assert!(rep.passed(), "{kind:?}: {:?}", rep.violations.first());
            assert!(rep.trials > 0);
        }
    }

    #[test]
    fn sampled_mode_on_larger_sets() {
        let n = GroundSet::range(15).unwrap();
        let rep = verify_property(&square, &n, PropertyKind::Supermodular, 500, 1e-9, &mut seeded(3));
        assert!(!rep.exhaustive);
        assert_eq!(rep.trials, 500);
        assert!(rep.passed());
        let rep = verify_property(&square, &n, PropertyKind::Submodular, 500, 1e-9, &mut seeded(3));
        assert!(!rep.passed());
    }

    #[test]
    fn exhaustive_chain_count() {
        // Σ over labelings of |outside| = n · 3^(n-1) triples.
        let n = GroundSet::range(4).unwrap();
        let rep = verify_property(&card, &n, PropertyKind::Submodular, 0, 0.0, &mut seeded(0));
        assert_eq!(rep.trials, 4 * 27);
        // Monotone: Σ over subsets S of |N \ S| = n · 2^(n-1).
        let rep = verify_property(&card, &n, PropertyKind::Monotone, 0, 0.0, &mut seeded(0));
        assert_eq!(rep.trials, 4 * 8);
    }
}
