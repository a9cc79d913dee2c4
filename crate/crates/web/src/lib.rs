//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every export takes plain numbers and returns a JSON string, so the page
//! needs no generated TypeScript types.

use fedsubsel::data::{generate_synthetic, shard_partition, PartitionSpec, SyntheticSpec};
use fedsubsel::engine::{clients_from_splits, run_training, Method, ModelChoice, TrainConfig};
use fedsubsel::metrics::{participation_from_rounds, ConvergenceParams, DissimilarityKind};
use fedsubsel::objectives::{
    build_distance_table, FacilityLocation, FairnessParams, LossVector, PhiKind, SubTrunc, UnionParams,
};
use fedsubsel::rng::seeded;
use fedsubsel::submodular::{greedy_maximize, SetObjective};
use rand::Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
pub struct Selection {
    pub points: Vec<[f64; 2]>,
    pub losses: Vec<f64>,
    pub coverage_only: Vec<usize>,
    pub fairness_aware: Vec<usize>,
    pub coverage_only_value: f64,
    pub fairness_aware_value: f64,
}

/// Random 2-d "gradients" with losses that grow away from the origin, and
/// the greedy picks of the coverage objective with and without the
/// truncated fairness bonus.
pub fn selection(n: usize, kappa: usize, lambda: f64, b: f64, seed: u64) -> Result<Selection, String> {
    let mut rng = seeded(seed);
    let points: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            let cluster = rng.random_range(0..3) as f64;
            let angle = cluster * 2.1 + rng.random_range(-0.4..0.4);
            let r = rng.random_range(0.1..1.0);
            [r * angle.cos(), r * angle.sin()]
        })
        .collect();
    let losses: Vec<f64> = points.iter().map(|p| 3.0 * (p[0] * p[0] + p[1] * p[1]).sqrt() + rng.random_range(0.0..0.3)).collect();
    let table = build_distance_table(&points.iter().map(|p| p.to_vec()).collect::<Vec<_>>()).map_err(|e| e.to_string())?;
    let lv = LossVector::new(losses.clone()).map_err(|e| e.to_string())?;
    let params = FairnessParams { lambda, b, phi: PhiKind::Log1p };
    params.validate().map_err(|e| e.to_string())?;
    let ground = table.ground_set();
    let coverage = FacilityLocation { table: &table };
    let fair = SubTrunc::new(&table, &lv, params);
    let coverage_only = greedy_maximize(&coverage, &ground, kappa).map_err(|e| e.to_string())?;
    let fairness_aware = greedy_maximize(&fair, &ground, kappa).map_err(|e| e.to_string())?;
    Ok(Selection {
        coverage_only_value: coverage.eval(&coverage_only),
        fairness_aware_value: fair.eval(&fairness_aware),
        points,
        losses,
        coverage_only,
        fairness_aware,
    })
}

#[derive(Serialize)]
pub struct Curve {
    pub method: &'static str,
    pub train_loss: Vec<f64>,
    pub dissimilarity: Vec<f64>,
    pub mean_accuracy: Vec<f64>,
    pub unique_participants: Vec<usize>,
}

/// A small federated run: 4 classes in 5 dimensions over 12 clients.
pub fn simulate(method: &str, rounds: usize, lambda: f64, seed: u64) -> Result<Curve, String> {
    let method: Method = method.parse().map_err(|e: fedsubsel::Error| e.to_string())?;
    let ds = generate_synthetic(SyntheticSpec { classes: 4, dims: 5, per_class: 120, spread: 1.5 }, seed)
        .map_err(|e| e.to_string())?;
    let spec = PartitionSpec { clients: 12, classes_per_client: 2, train_fraction: 0.8 };
    let clients = clients_from_splits(shard_partition(&ds, &spec, seed ^ 0x5EED).map_err(|e| e.to_string())?);
    let config = TrainConfig {
        rounds,
        local_steps: 5,
        clients_per_round: 3,
        sample_size: 5,
        learning_rate: 0.1,
        batch_size: 16,
        method,
        fairness: FairnessParams { lambda, b: 1.1, phi: PhiKind::Log1p },
        union: UnionParams::default(),
        power_of_choice_d: None,
        model: ModelChoice::Logistic,
        metric: DissimilarityKind::Std,
        seed,
    };
    let run = run_training(&config, clients).map_err(|e| e.to_string())?;
    let rounds_sel = run.history.rounds();
    let unique_participants = (0..run.records.len())
        .map(|k| participation_from_rounds(&rounds_sel[..=k], 12).map(|s| s.unique_participants))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    Ok(Curve {
        method: method.name(),
        train_loss: run.records.iter().map(|r| r.global_train_loss).collect(),
        dissimilarity: run.records.iter().map(|r| r.dissimilarity).collect(),
        mean_accuracy: run
            .records
            .iter()
            .map(|r| r.per_client_test_acc.iter().sum::<f64>() / r.per_client_test_acc.len() as f64)
            .collect(),
        unique_participants,
    })
}

#[derive(Serialize)]
pub struct OutputRounds {
    pub zeta: f64,
    pub weights: Vec<f64>,
}

pub fn output_rounds(smoothness: f64, local_steps: usize, rounds: usize, learning_rate: f64) -> Result<OutputRounds, String> {
    if rounds == 0 || rounds > 100_000 {
        return Err("rounds must lie in 1..=100000".into());
    }
    let p = ConvergenceParams { smoothness, local_steps, rounds, learning_rate };
    let zeta = p.zeta();
    if !(zeta >= 0.0 && zeta.is_finite()) {
        return Err(format!("zeta = {zeta} must be finite and >= 0"));
    }
    Ok(OutputRounds { zeta, weights: p.output_round_weights() })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = selectClients)]
pub fn select_clients_js(n: usize, kappa: usize, lambda: f64, b: f64, seed: u32) -> Result<String, JsValue> {
    to_js(selection(n, kappa, lambda, b, u64::from(seed)))
}

#[wasm_bindgen(js_name = simulate)]
pub fn simulate_js(method: &str, rounds: usize, lambda: f64, seed: u32) -> Result<String, JsValue> {
    to_js(simulate(method, rounds, lambda, u64::from(seed)))
}

#[wasm_bindgen(js_name = outputRounds)]
pub fn output_rounds_js(smoothness: f64, local_steps: usize, rounds: usize, learning_rate: f64) -> Result<String, JsValue> {
    to_js(output_rounds(smoothness, local_steps, rounds, learning_rate))
}
