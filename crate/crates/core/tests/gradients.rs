mod common;

use common::{naive_logistic_grad, naive_loss};
use fedsubsel::data::{generate_synthetic, SyntheticSpec};
use fedsubsel::model::{full_loss_and_grad, Batch, Differentiable, ModelKind};
use fedsubsel::rng::seeded;
use rand::Rng;

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn worst_fd_error(mlp: bool, checks: usize, seed: u64) -> f64 {
    let mut rng = seeded(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..checks {
        let classes = rng.random_range(2..6);
        let inputs = rng.random_range(1..7);
        let kind = if mlp {
            ModelKind::Mlp { inputs, hidden: rng.random_range(1..7), classes }
        } else {
            ModelKind::Logistic { inputs, classes }
        };
        let ds = generate_synthetic(SyntheticSpec { classes, dims: inputs.max(2), per_class: 4, spread: 1.5 }, rng.random())
            .unwrap();
        // Trim to `inputs` columns when a 1-d model was drawn.
        let ds = if ds.dim() == inputs {
            ds
        } else {
            let feats: Vec<f64> = (0..ds.len()).flat_map(|i| ds.row(i)[..inputs].to_vec()).collect();
            fedsubsel::data::LabeledDataset::new(feats, ds.labels().to_vec(), inputs, classes).unwrap()
        };
        let rows: Vec<usize> = (0..ds.len()).filter(|_| rng.random_bool(0.6)).chain([0]).collect();
        let w: Vec<f64> = (0..kind.param_count()).map(|_| rng.random_range(-1.5..1.5)).collect();

        let (_, analytic) = kind.loss_and_grad(&w, Batch { data: &ds, rows: &rows }).unwrap();
        let h = 1e-5;
        let mut probe = w.clone();
        let numeric: Vec<f64> = (0..w.len())
            .map(|i| {
                probe[i] = w[i] + h;
                let up = naive_loss(&kind, &probe, &ds, &rows);
                probe[i] = w[i] - h;
                let down = naive_loss(&kind, &probe, &ds, &rows);
                probe[i] = w[i];
                (up - down) / (2.0 * h)
            })
            .collect();
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

#[test]
fn logistic_gradient_matches_finite_differences() {
    let e = worst_fd_error(false, 100, 11);
    assert!(e < 1e-5, "worst relative error {e:e}");
}

#[test]
fn mlp_gradient_matches_finite_differences() {
    let e = worst_fd_error(true, 100, 12);
    assert!(e < 1e-5, "worst relative error {e:e}");
}

#[test]
fn losses_match_reference_forward_pass() {
    let mut rng = seeded(5);
    for mlp in [false, true] {
        for _ in 0..20 {
            let kind = if mlp {
                ModelKind::Mlp { inputs: 3, hidden: 4, classes: 3 }
            } else {
                ModelKind::Logistic { inputs: 3, classes: 3 }
            };
            let ds = generate_synthetic(SyntheticSpec { classes: 3, dims: 3, per_class: 5, spread: 2.0 }, rng.random())
                .unwrap();
            let w: Vec<f64> = (0..kind.param_count()).map(|_| rng.random_range(-2.0..2.0)).collect();
            let (loss, _) = full_loss_and_grad(&kind, &w, &ds).unwrap();
            let rows: Vec<usize> = (0..ds.len()).collect();
            assert!((loss - naive_loss(&kind, &w, &ds, &rows)).abs() < 1e-12);
        }
    }
}

#[test]
fn logistic_gradient_matches_closed_form() {
    let mut rng = seeded(6);
    for _ in 0..20 {
        let ds = generate_synthetic(SyntheticSpec { classes: 4, dims: 5, per_class: 6, spread: 1.0 }, rng.random())
            .unwrap();
        let kind = ModelKind::Logistic { inputs: 5, classes: 4 };
        let w: Vec<f64> = (0..kind.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, g) = full_loss_and_grad(&kind, &w, &ds).unwrap();
        let rows: Vec<usize> = (0..ds.len()).collect();
        let oracle = naive_logistic_grad(5, 4, &w, &ds, &rows);
        assert!(relative_error(&g, &oracle) < 1e-13);
    }
}
