//! Self-contained verification suites with fixed internal seeds.
//!
//! Each suite returns a [`SuiteReport`] of named checks; a check that fails
//! carries a human-readable witness.

use std::f64::consts::E;

use rand::Rng;

use crate::data::{generate_synthetic, shard_partition, PartitionSpec, SyntheticSpec};
use crate::model::{Batch, Differentiable, ModelKind};
use crate::objectives::{
    build_distance_table, DistanceTable, FacilityLocation, FairnessParams, LossVector, PhiKind,
    SelectionHistory, SubTrunc, UnionFl, UnionPenalty,
};
use crate::rng::{seeded, Stream};
use crate::submodular::{
    brute_force_maximize, greedy_maximize, verify_property, ClientId, GroundSet, PropertyKind,
    SetObjective, DEFAULT_TOLERANCE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Submodularity,
    GreedyBound,
    Gradients,
    Partition,
}

impl std::str::FromStr for Suite {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        Ok(match s {
            "submodularity" => Suite::Submodularity,
            "greedy_bound" => Suite::GreedyBound,
            "gradients" => Suite::Gradients,
            "partition" => Suite::Partition,
            other => {
                return Err(crate::Error::Config {
                    path: "--suite".into(),
                    msg: format!("unknown suite `{other}` (submodularity | greedy_bound | gradients | partition)"),
                })
            }
        })
    }
}

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub fn run_suite(suite: Suite) -> SuiteReport {
    let checks = match suite {
        Suite::Submodularity => {
            let mut c = submodularity_checks(50, 10_000);
            c.push(union_modularity_check(10_000));
            c
        }
        Suite::GreedyBound => vec![greedy_bound_check(100)],
        Suite::Gradients => vec![gradient_check(false, 100), gradient_check(true, 100)],
        Suite::Partition => vec![partition_check(25)],
    };
    SuiteReport { suite, checks }
}

/// Distance table between `n` random points in `R^dim`.
pub fn random_table(n: usize, dim: usize, rng: &mut Stream) -> DistanceTable {
    let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    build_distance_table(&pts).expect("finite points")
}

pub fn random_losses(n: usize, rng: &mut Stream) -> LossVector {
    LossVector::new((0..n).map(|_| rng.random_range(0.0..3.0)).collect()).expect("finite losses")
}

pub fn random_fairness(rng: &mut Stream) -> FairnessParams {
    FairnessParams {
        lambda: rng.random_range(0.0..5.0),
        b: rng.random_range(0.05..4.0),
        phi: if rng.random_bool(0.5) { PhiKind::Identity } else { PhiKind::Log1p },
    }
}

pub fn random_history(n: usize, rounds: usize, window: usize, kappa: usize, rng: &mut Stream) -> SelectionHistory {
    let mut h = SelectionHistory::new(window).expect("window >= 1");
    for _ in 0..rounds {
        h.push(rand::seq::index::sample(rng, n, kappa.min(n)).into_vec());
    }
    h
}

fn describe<F: SetObjective>(
    label: &str,
    f: &F,
    ground: &GroundSet,
    kinds: &[PropertyKind],
    trials: usize,
    rng: &mut Stream,
) -> Option<String> {
    for &kind in kinds {
        let rep = verify_property(f, ground, kind, trials, DEFAULT_TOLERANCE, rng);
        if let Some(v) = rep.violations.first() {
            return Some(format!(
                "{label} {kind:?}: A={:?} B={:?} e={} lhs={} rhs={} ({} violations / {} trials)",
                v.a,
                v.b,
                v.e,
                v.lhs,
                v.rhs,
                rep.violations.len(),
                rep.trials
            ));
        }
    }
    None
}

/// Monotone submodularity of `W` (and of `G`, plus submodularity of the
/// UnionFL objective) on `instances` random instances: an exhaustive check on
/// `4..=8` clients and `sampled` random chains on 30 clients per instance.
pub fn submodularity_checks(instances: usize, sampled: usize) -> Vec<Check> {
    let mut rng = seeded(0x5B_40D);
    let mut failures = Vec::new();
    let mut triples = 0usize;
    for inst in 0..instances {
        for (n, trials) in [(4 + inst % 5, 0), (30, sampled)] {
            let table = random_table(n, 3, &mut rng);
            let losses = random_losses(n, &mut rng);
            let params = random_fairness(&mut rng);
            let ground = table.ground_set();
            let w = SubTrunc::new(&table, &losses, params);
            let both = [PropertyKind::Submodular, PropertyKind::Monotone];
            if let Some(msg) = describe("W", &w, &ground, &both, trials, &mut rng) {
                failures.push(format!("instance {inst}, n={n}: {msg}"));
            }
            let g = FacilityLocation { table: &table };
            if let Some(msg) = describe("G", &g, &ground, &both, trials / 10, &mut rng) {
                failures.push(format!("instance {inst}, n={n}: {msg}"));
            }
            let hist = random_history(n, 6, 1 + inst % 5, 2.min(n), &mut rng);
            let h = UnionFl::new(&table, &hist, rng.random_range(0.0..3.0), 6);
            if let Some(msg) = describe("h_t", &h, &ground, &[PropertyKind::Submodular], trials / 10, &mut rng) {
                failures.push(format!("instance {inst}, n={n}: {msg}"));
            }
            triples += if trials == 0 { n * 3usize.pow(n as u32 - 1) } else { trials };
        }
    }
    vec![Check {
        name: format!("SubTrunc objective monotone submodular ({instances} instances)"),
        passed: failures.is_empty(),
        detail: failures.first().cloned().unwrap_or_else(|| format!("{triples} W chain checks, zero violations")),
    }]
}

/// `Δ_{g_t}(e|S)` is 0/1-valued and independent of `S` on random triples.
pub fn union_modularity_check(trials: usize) -> Check {
    let mut rng = seeded(0x6_7);
    let mut failure = None;
    for t in 0..trials {
        let n = rng.random_range(2..40);
        let rounds = rng.random_range(0..8);
        let window = rng.random_range(1..6);
        let hist = random_history(n, rounds, window, rng.random_range(1..=n), &mut rng);
        let g = UnionPenalty::new(&hist, rounds);
        let e = rng.random_range(0..n);
        let s: Vec<ClientId> = (0..n).filter(|&i| i != e && rng.random_bool(0.5)).collect();
        let gain = g.eval(&[s.as_slice(), &[e]].concat()) - g.eval(&s);
        let alone = g.eval(&[e]) - g.eval(&[]);
        let in_union = hist.window_union(rounds).contains(&e);
        let expected = if in_union { 1.0 } else { 0.0 };
        if gain != alone || gain != expected {
            failure = Some(format!("trial {t}: e={e} S={s:?} gain={gain} gain(∅)={alone} expected={expected}"));
            break;
        }
    }
    Check {
        name: "union penalty modular with 0/1 gains".into(),
        passed: failure.is_none(),
        detail: failure.unwrap_or_else(|| format!("{trials} triples, zero violations")),
    }
}

/// Greedy reaches `(1 − 1/e)·OPT` on random monotone submodular instances.
pub fn greedy_bound_check(instances: usize) -> Check {
    let mut rng = seeded(0x6_12EED);
    let ratio_floor = 1.0 - 1.0 / E;
    let mut worst = f64::INFINITY;
    let mut failure = None;
    for inst in 0..instances {
        let n = rng.random_range(5..=12);
        let kappa = [2, 3, 4][inst % 3];
        let table = random_table(n, 2, &mut rng);
        let losses = random_losses(n, &mut rng);
        let params = random_fairness(&mut rng);
        let w = SubTrunc::new(&table, &losses, params);
        let ground = table.ground_set();
        let greedy = greedy_maximize(&w, &ground, kappa).expect("valid budget");
        let value = w.eval(&greedy);
        let (_, opt) = brute_force_maximize(&w, &ground, kappa).expect("small ground set");
        if opt > 0.0 {
            worst = worst.min(value / opt);
        }
        if value < ratio_floor * opt - DEFAULT_TOLERANCE {
            failure = Some(format!("instance {inst}: n={n} κ={kappa} greedy={value} OPT={opt}"));
            break;
        }
    }
    Check {
        name: format!("greedy >= (1-1/e)·OPT on {instances} instances"),
        passed: failure.is_none(),
        detail: failure.unwrap_or_else(|| format!("worst greedy/OPT ratio {worst:.6}")),
    }
}

/// Relative error between the analytic gradient and central differences.
pub fn finite_difference_error<M: Differentiable>(model: &M, w: &[f64], batch: Batch<'_>, step: f64) -> f64 {
    let (_, analytic) = model.loss_and_grad(w, batch).expect("finite loss");
    let mut probe = w.to_vec();
    let mut numeric = vec![0.0; w.len()];
    for i in 0..w.len() {
        probe[i] = w[i] + step;
        let up = model.loss_and_grad(&probe, batch).expect("finite loss").0;
        probe[i] = w[i] - step;
        let down = model.loss_and_grad(&probe, batch).expect("finite loss").0;
        probe[i] = w[i];
        numeric[i] = (up - down) / (2.0 * step);
    }
    let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|a| a * a).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

pub fn gradient_check(mlp: bool, checks: usize) -> Check {
    let mut rng = seeded(if mlp { 0x3_1 } else { 0x3_0 });
    let mut worst: f64 = 0.0;
    for _ in 0..checks {
        let classes = rng.random_range(2..5);
        let inputs = rng.random_range(2..6);
        let kind = if mlp {
            ModelKind::Mlp { inputs, hidden: rng.random_range(2..6), classes }
        } else {
            ModelKind::Logistic { inputs, classes }
        };
        let spec = SyntheticSpec { classes, dims: inputs, per_class: 3, spread: 2.0 };
        let ds = generate_synthetic(spec, rng.random()).expect("valid spec");
        let rows: Vec<usize> = (0..ds.len()).filter(|_| rng.random_bool(0.7)).collect();
        let rows = if rows.is_empty() { vec![0] } else { rows };
        let w: Vec<f64> = (0..kind.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        worst = worst.max(finite_difference_error(&kind, &w, Batch { data: &ds, rows: &rows }, 1e-5));
    }
    Check {
        name: format!("{} gradients vs central differences ({checks} checks)", if mlp { "mlp" } else { "logistic" }),
        passed: worst < 1e-5,
        detail: format!("max relative error {worst:.3e}"),
    }
}

/// Disjoint cover and exact per-client class counts on random partitions.
pub fn partition_check(instances: usize) -> Check {
    let mut rng = seeded(0x9A_27);
    let mut failure = None;
    for inst in 0..instances {
        let classes = rng.random_range(2..12);
        let per = rng.random_range(1..=classes);
        let clients = rng.random_range(1..25);
        if clients * per < classes {
            continue;
        }
        let per_class = 2 * clients * per / classes + 4 + rng.random_range(0..10);
        let ds = generate_synthetic(SyntheticSpec { classes, dims: 2, per_class, spread: 1.0 }, rng.random())
            .expect("valid spec");
        let spec = PartitionSpec { clients, classes_per_client: per, train_fraction: rng.random_range(0.3..0.9) };
        let parts = match shard_partition(&ds, &spec, rng.random()) {
            Ok(p) => p,
            Err(e) => {
                failure = Some(format!("instance {inst}: {e}"));
                break;
            }
        };
        let mut seen: Vec<Vec<u64>> = Vec::new();
        for p in &parts {
            for d in [&p.train, &p.test] {
                for i in 0..d.len() {
                    seen.push(d.row(i).iter().map(|x| x.to_bits()).collect());
                }
            }
            if p.train.label_set().len() != per || p.test.label_set() != p.train.label_set() {
                failure = Some(format!("instance {inst}: client label set {:?}", p.train.label_set()));
            }
        }
        let total = seen.len();
        seen.sort();
        seen.dedup();
        if total != ds.len() || seen.len() != ds.len() {
            failure = Some(format!("instance {inst}: {total} rows assigned for {} examples", ds.len()));
        }
        if failure.is_some() {
            break;
        }
    }
    Check {
        name: format!("shard partition is a disjoint cover ({instances} instances)"),
        passed: failure.is_none(),
        detail: failure.unwrap_or_else(|| "all partitions valid".into()),
    }
}
