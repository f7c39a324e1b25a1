use capred::algebra::{entropy, random_hermitian, random_state, random_unitary, spectral_decompose};
use capred::capacity::{holevo_chi, optimize_capacity, reduce_ensemble, OptimizerSettings};
use capred::definite::{gram_form, multiplicativity_defect};
use capred::map::{compose_maps, random_cp_map};
use capred::reduction::{entropy_inequality_check, log_sum_exp, random_rotated_partition};
use capred::report::{round_json, round_sig};
use capred::{AlgebraShape, Element, PtpuMap, State};
use proptest::prelude::*;

fn shapes() -> impl Strategy<Value = AlgebraShape> {
    prop::sample::select(vec![vec![1], vec![2], vec![3], vec![1, 1], vec![2, 1], vec![1, 2, 1], vec![2, 2]])
        .prop_map(|b| AlgebraShape::new(b).unwrap())
}

fn mix(a: &State, b: &State, t: f64) -> State {
    State::new(a.element().scale(t).add(&b.element().scale(1.0 - t)).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spectral_decomposition_reconstructs(shape in shapes(), seed in any::<u64>()) {
        let a = random_hermitian(&shape, seed);
        let spec = spectral_decompose(&a).unwrap();
        prop_assert!(spec.reconstruct().max_abs_diff(&a) < 1e-9);
        for p in &spec.projectors {
            prop_assert!(p.is_projection(1e-9));
        }
    }

    #[test]
    fn entropy_is_concave_and_bounded(shape in shapes(), s1 in any::<u64>(), s2 in any::<u64>(), t in 0.0f64..1.0) {
        let a = random_state(&shape, s1);
        let b = random_state(&shape, s2);
        let m = mix(&a, &b, t);
        prop_assert!(m.entropy() >= t * a.entropy() + (1.0 - t) * b.entropy() - 1e-12);
        prop_assert!(m.entropy() <= (shape.total_rank() as f64).ln() + 1e-12);
        prop_assert!(a.entropy() >= -1e-12);
    }

    #[test]
    fn entropy_is_unitarily_invariant(shape in shapes(), seed in any::<u64>()) {
        let a = random_state(&shape, seed);
        let u = random_unitary(&shape, seed ^ 0xabc);
        let rotated = u.mul(a.element()).unwrap().mul(&u.adjoint()).unwrap();
        prop_assert!((entropy(&rotated).unwrap() - a.entropy()).abs() < 1e-10);
    }

    #[test]
    fn random_maps_are_unital_and_trace_preserving(shape in shapes(), seed in any::<u64>()) {
        let map = random_cp_map(&shape, seed).unwrap();
        let one = Element::identity(&shape);
        prop_assert!(map.apply(&one).unwrap().max_abs_diff(&one) < 1e-9);
        let a = random_hermitian(&shape, seed.wrapping_add(1));
        prop_assert!((map.apply(&a).unwrap().trace() - a.trace()).norm() < 1e-9);
        prop_assert!(map.adjoint().is_ok());
    }

    #[test]
    fn gram_form_is_positive(shape in shapes(), seed in any::<u64>()) {
        let g = gram_form(&random_cp_map(&shape, seed).unwrap());
        prop_assert!(g.symmetric_eigenvalues().min() >= -1e-9);
    }

    #[test]
    fn composition_is_associative(shape in shapes(), s in any::<u64>()) {
        let a = random_cp_map(&shape, s).unwrap();
        let b = random_cp_map(&shape, s.wrapping_add(1)).unwrap();
        let c = random_cp_map(&shape, s.wrapping_add(2)).unwrap();
        let left = compose_maps(&compose_maps(&a, &b).unwrap(), &c).unwrap();
        let right = compose_maps(&a, &compose_maps(&b, &c).unwrap()).unwrap();
        prop_assert!((left.matrix() - right.matrix()).amax() < 1e-12);
    }

    #[test]
    fn holevo_chi_is_nonnegative(shape in shapes(), seed in any::<u64>(), k in 1usize..4) {
        let map = random_cp_map(&shape, seed).unwrap();
        let states: Vec<State> = (0..k as u64).map(|i| random_state(&shape, seed.wrapping_add(10 + i))).collect();
        let ens = reduce_ensemble(&map, vec![1.0 / k as f64; k], states).unwrap();
        let chi = holevo_chi(&map, &ens).unwrap();
        prop_assert!(chi >= -1e-9);
        prop_assert!(chi <= (shape.total_rank() as f64).ln() + 1e-9);
    }

    #[test]
    fn ensemble_reduction_preserves_barycenter(seed in any::<u64>()) {
        let shape = AlgebraShape::new(vec![2, 1]).unwrap();
        let map = random_cp_map(&shape, seed).unwrap();
        let states: Vec<State> = (0..12u64).map(|i| random_state(&shape, seed.wrapping_add(i))).collect();
        let full_bary = states.iter().fold(Element::zeros(&shape), |acc, s| acc.add(&s.element().scale(1.0 / 12.0)).unwrap());
        let ens = reduce_ensemble(&map, vec![1.0 / 12.0; 12], states).unwrap();
        prop_assert!(ens.len() <= shape.sa_dim() + 1);
        prop_assert!(ens.barycenter().element().max_abs_diff(&full_bary) < 1e-10);
        prop_assert!((ens.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn conditional_slack_is_nonnegative(shape in shapes(), seed in any::<u64>()) {
        let omega = random_state(&shape, seed);
        let parts = random_rotated_partition(&shape, seed ^ 0x55);
        let r = entropy_inequality_check(&omega, &parts).unwrap();
        prop_assert!(r.equality_error < 1e-9);
        prop_assert!(r.slack >= -1e-9);
    }

    #[test]
    fn log_sum_exp_bounds(xs in prop::collection::vec(-50.0f64..50.0, 1..8)) {
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let v = log_sum_exp(&xs);
        prop_assert!(v >= max - 1e-12);
        prop_assert!(v <= max + (xs.len() as f64).ln() + 1e-12);
        let weights: f64 = xs.iter().map(|x| (x - v).exp()).sum();
        prop_assert!((weights - 1.0).abs() < 1e-12);
    }

    #[test]
    fn json_rounding_keeps_relative_precision(x in prop::num::f64::NORMAL) {
        let r = round_sig(x);
        prop_assert!(((r - x) / x).abs() < 1e-11);
        let mut v = serde_json::json!({"x": x});
        round_json(&mut v);
        let text = v.to_string();
        let back: serde_json::Value = serde_json::from_str(&text).unwrap();
        prop_assert!(((back["x"].as_f64().unwrap() - x) / x).abs() < 1e-11);
    }
}

#[test]
fn kadison_schwarz_on_random_hermitians() {
    for k in 0..500u64 {
        let shape = if k % 2 == 0 { AlgebraShape::full(2) } else { AlgebraShape::new(vec![2, 1]).unwrap() };
        let map = random_cp_map(&shape, k / 10).unwrap();
        let a = random_hermitian(&shape, 10_000 + k);
        let fa = map.apply(&a).unwrap();
        let gap = map.apply(&a.mul(&a).unwrap()).unwrap().sub(&fa.mul(&fa).unwrap()).unwrap();
        let min = gap.eigenvalues().unwrap().into_iter().fold(f64::INFINITY, f64::min);
        assert!(min >= -1e-9, "sample {k}: {min}");
        assert!(multiplicativity_defect(&map, &a).unwrap() >= 0.0);
    }
}

#[test]
fn optimizer_respects_entropy_bound_and_restriction() {
    let settings = OptimizerSettings { restarts: 4, max_iter: 300, tol: 1e-9, seed: 9 };
    for seed in 0..4 {
        let shape = AlgebraShape::full(2);
        let map = random_cp_map(&shape, seed).unwrap();
        let full = optimize_capacity(&map, &settings).unwrap();
        assert!(full.value >= 0.0 && full.value <= 2f64.ln() + 1e-9);
        assert!((holevo_chi(&map, &full.best_ensemble).unwrap() - full.lower_bound).abs() < 1e-9);
        // restricting to the diagonal subalgebra never helps
        let diag = PtpuMap::diagonal_pinching(&shape, &[1, 1]).unwrap();
        let corners: Vec<_> = (0..2)
            .map(|k| capred::algebra::Corner::of(&Element::matrix_unit(&shape, 0, k, k)).unwrap())
            .collect();
        let restricted = map.compose(&PtpuMap::corner_inclusion(&corners).unwrap()).unwrap();
        let r = optimize_capacity(&restricted, &settings).unwrap();
        assert!(r.value <= full.value + 1e-6);
        let _ = diag;
    }
}
