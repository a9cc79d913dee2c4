mod common;

use common::{distance_matrix, naive_coverage, naive_fairness, subsets_up_to};
use fedsubsel::objectives::*;
use fedsubsel::rng::seeded;
use fedsubsel::submodular::{
    brute_force_maximize, greedy_maximize, stochastic_greedy_maximize, verify_property, GroundSet, PropertyKind,
    SetObjective,
};
use proptest::prelude::*;

fn points(n: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<Vec<f64>>> {
    n.prop_flat_map(|n| {
        (1usize..4).prop_flat_map(move |dim| prop::collection::vec(prop::collection::vec(-3.0f64..3.0, dim), n))
    })
}

/// A chain `A ⊆ B`, `e ∉ B`, encoded by one label per client.
fn chain(labels: &[u8], e: usize) -> (Vec<usize>, Vec<usize>) {
    let a: Vec<usize> = (0..labels.len()).filter(|&i| i != e && labels[i] == 0).collect();
    let b: Vec<usize> = (0..labels.len()).filter(|&i| i != e && labels[i] <= 1).collect();
    (a, b)
}

fn with(s: &[usize], e: usize) -> Vec<usize> {
    let mut v = s.to_vec();
    v.push(e);
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn subtrunc_matches_reference_and_is_monotone_submodular(
        pts in points(2..=9),
        loss_seed in prop::collection::vec(0.0f64..4.0, 9),
        lambda in 0.0f64..3.0,
        b in 0.01f64..3.0,
        log1p in any::<bool>(),
        labels in prop::collection::vec(0u8..3, 9),
        e_pick in any::<prop::sample::Index>(),
    ) {
        let n = pts.len();
        let d = distance_matrix(&pts);
        let table = build_distance_table(&pts).unwrap();
        let losses = loss_seed[..n].to_vec();
        let lv = LossVector::new(losses.clone()).unwrap();
        let params = FairnessParams { lambda, b, phi: if log1p { PhiKind::Log1p } else { PhiKind::Identity } };
        let w = |s: &[usize]| naive_coverage(&d, s) + naive_fairness(&losses, s, lambda, b, log1p);

        let e = e_pick.index(n);
        let (a, bset) = chain(&labels[..n], e);
        for s in [&a, &bset] {
            let got = subtrunc_value(s, &table, &lv, params).unwrap();
            prop_assert!((got - w(s)).abs() < 1e-9);
        }
        let gain_a = w(&with(&a, e)) - w(&a);
        let gain_b = w(&with(&bset, e)) - w(&bset);
        prop_assert!(gain_a >= gain_b - 1e-9, "diminishing returns: {gain_a} < {gain_b}");
        prop_assert!(gain_b >= -1e-9, "monotone: {gain_b}");
    }

    #[test]
    fn fairness_term_is_capped(
        losses in prop::collection::vec(0.0f64..100.0, 1..12),
        lambda in 0.0f64..5.0,
        b in 0.01f64..5.0,
    ) {
        let lv = LossVector::new(losses.clone()).unwrap();
        let all: Vec<usize> = (0..losses.len()).collect();
        for phi in [PhiKind::Identity, PhiKind::Log1p] {
            let h = truncated_fairness_value(&all, &lv, FairnessParams { lambda, b, phi }).unwrap();
            prop_assert!(h <= lambda * b + 1e-12);
            prop_assert!(h >= 0.0);
        }
    }

    #[test]
    fn vanishing_cap_leaves_coverage(pts in points(2..=8), losses in prop::collection::vec(0.0f64..5.0, 8)) {
        let n = pts.len();
        let table = build_distance_table(&pts).unwrap();
        let lv = LossVector::new(losses[..n].to_vec()).unwrap();
        let params = FairnessParams { lambda: 1.0, b: 1e-13, phi: PhiKind::Log1p };
        for s in subsets_up_to(n, n) {
            let w = subtrunc_value(&s, &table, &lv, params).unwrap();
            let g = facility_location_value(&s, &table).unwrap();
            prop_assert!((w - g).abs() <= 1e-12);
        }
    }

    #[test]
    fn union_penalty_gain_is_membership(
        n in 3usize..20,
        rounds in prop::collection::vec(prop::collection::vec(0usize..20, 0..5), 0..8),
        window in 1usize..6,
        t_extra in 0usize..3,
        labels in prop::collection::vec(0u8..2, 20),
        other in prop::collection::vec(0u8..2, 20),
        e_pick in any::<prop::sample::Index>(),
    ) {
        let mut h = SelectionHistory::new(window).unwrap();
        for r in &rounds {
            h.push(r.iter().copied().filter(|&i| i < n).collect());
        }
        let t = rounds.len().saturating_sub(t_extra);
        let start = t.saturating_sub(window);
        let e = e_pick.index(n);
        let in_union = rounds[start..t].iter().flatten().any(|&i| i == e);
        let s1: Vec<usize> = (0..n).filter(|&i| i != e && labels[i] == 1).collect();
        let s2: Vec<usize> = (0..n).filter(|&i| i != e && other[i] == 1).collect();
        for s in [&s1, &s2] {
            let gain = union_penalty(&with(s, e), &h, t) as i64 - union_penalty(s, &h, t) as i64;
            prop_assert_eq!(gain, i64::from(in_union));
        }
    }

    #[test]
    fn zero_weights_reduce_to_coverage_greedy(pts in points(2..=12), kappa_pick in any::<prop::sample::Index>(), seed in any::<u64>()) {
        let n = pts.len();
        let table = build_distance_table(&pts).unwrap();
        let ground = table.ground_set();
        let kappa = 1 + kappa_pick.index(n);
        let losses = LossVector::new((0..n).map(|i| i as f64 * 0.37).collect()).unwrap();
        let coverage = FacilityLocation { table: &table };
        let base = greedy_maximize(&coverage, &ground, kappa).unwrap();
        let w = SubTrunc::new(&table, &losses, FairnessParams { lambda: 0.0, b: 1.1, phi: PhiKind::Log1p });
        prop_assert_eq!(&greedy_maximize(&w, &ground, kappa).unwrap(), &base);

        let mut h = SelectionHistory::new(3).unwrap();
        h.push((0..n).step_by(2).collect());
        let u = UnionFl::new(&table, &h, 0.0, 1);
        prop_assert_eq!(&greedy_maximize(&u, &ground, kappa).unwrap(), &base);

        let r = 1 + seed as usize % n;
        let sg_cov = stochastic_greedy_maximize(&coverage, &ground, kappa, r, &mut seeded(seed)).unwrap();
        let sg_w = stochastic_greedy_maximize(&w, &ground, kappa, r, &mut seeded(seed)).unwrap();
        prop_assert_eq!(sg_cov, sg_w);
    }

    #[test]
    fn full_sample_stochastic_greedy_is_greedy(pts in points(2..=10), seed in any::<u64>()) {
        let table = build_distance_table(&pts).unwrap();
        let ground = table.ground_set();
        let f = FacilityLocation { table: &table };
        let kappa = pts.len().div_ceil(2);
        let g = greedy_maximize(&f, &ground, kappa).unwrap();
        let s = stochastic_greedy_maximize(&f, &ground, kappa, pts.len(), &mut seeded(seed)).unwrap();
        prop_assert_eq!(g, s);
    }

    #[test]
    fn unionfl_is_submodular_exhaustively(pts in points(2..=7), mu in 0.0f64..3.0, seed in any::<u64>()) {
        let n = pts.len();
        let table = build_distance_table(&pts).unwrap();
        let mut h = SelectionHistory::new(2).unwrap();
        h.push(vec![0]);
        h.push((1..n).step_by(3).collect());
        let f = UnionFl::new(&table, &h, mu, 2);
        let rep = verify_property(&f, &table.ground_set(), PropertyKind::Submodular, 0, 1e-9, &mut seeded(seed));
        prop_assert!(rep.exhaustive);
        prop_assert!(rep.passed(), "{:?}", rep.violations.first());
    }
}

#[test]
fn greedy_reaches_the_guarantee_against_enumeration() {
    use rand::Rng;
    let mut rng = seeded(77);
    for _ in 0..60 {
        let n = rng.random_range(3..=10);
        let pts: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let losses: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
        let d = distance_matrix(&pts);
        let kappa = rng.random_range(1..=n.min(4));
        let f = |s: &[usize]| naive_coverage(&d, s) + naive_fairness(&losses, s, 0.9, 1.1, true);
        let opt = subsets_up_to(n, kappa).iter().map(|s| f(s)).fold(f64::NEG_INFINITY, f64::max);
        let ground = GroundSet::range(n).unwrap();
        let g = greedy_maximize(&f, &ground, kappa).unwrap();
        assert!(f(&g) >= (1.0 - (-1.0f64).exp()) * opt - 1e-9);
        let (_, bf) = brute_force_maximize(&f, &ground, kappa).unwrap();
        assert!((bf - opt).abs() < 1e-12);
    }
}

#[test]
fn square_of_count_is_flagged() {
    let f = |s: &[usize]| (s.len() * s.len()) as f64;
    let ground = GroundSet::range(5).unwrap();
    let rep = verify_property(&f, &ground, PropertyKind::Submodular, 0, 1e-9, &mut seeded(1));
    assert!(!rep.passed());
    let v = &rep.violations[0];
    assert!(f.eval(&with(&v.a, v.e)) - f.eval(&v.a) < f.eval(&with(&v.b, v.e)) - f.eval(&v.b));
    assert!(verify_property(&f, &ground, PropertyKind::Supermodular, 0, 1e-9, &mut seeded(1)).passed());
}
