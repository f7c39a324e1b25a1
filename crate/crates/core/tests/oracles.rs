use std::f64::consts::LN_2;

use approx::assert_abs_diff_eq;
use capred::algebra::{compress, entropy, eta, random_hermitian, random_state, spectral_decompose};
use capred::capacity::{
    blahut_arimoto, brute_force_capacity, capacity_at, optimize_capacity, OptimizerSettings, DEFAULT_RESOLUTION,
};
use capred::definite::{multiplicative_check, definite_set, gram_form, is_ergodic, KERNEL_TOL};
use capred::map::{random_cp_map, tensor_product};
use capred::reduction::{additivity_experiment, projection_map_capacity, reduce_capacity};
use capred::{AlgebraShape, Element, PtpuMap, C64};
use nalgebra::{dmatrix, DMatrix};

fn pauli_x() -> Element {
    Element::from_matrix(dmatrix![
        C64::new(0.0, 0.0), C64::new(1.0, 0.0);
        C64::new(1.0, 0.0), C64::new(0.0, 0.0)
    ])
    .unwrap()
}

fn quick(seed: u64) -> OptimizerSettings {
    OptimizerSettings { restarts: 6, max_iter: 600, tol: 1e-9, seed }
}

/// `I(p; T)` computed from the joint distribution.
fn mutual_information(t: &DMatrix<f64>, p: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..t.nrows() {
        let q: f64 = (0..p.len()).map(|j| t[(i, j)] * p[j]).sum();
        for (j, &pj) in p.iter().enumerate() {
            let joint = t[(i, j)] * pj;
            if joint > 0.0 {
                total += joint * (t[(i, j)] / q).ln();
            }
        }
    }
    total
}

#[test]
fn entropy_matches_eta_sum() {
    let s = AlgebraShape::full(2);
    let a = Element::diagonal(&s, &[1.0 / 3.0, 2.0 / 3.0]).unwrap();
    let oracle = eta(1.0 / 3.0) + eta(2.0 / 3.0);
    assert_abs_diff_eq!(entropy(&a).unwrap(), oracle, epsilon = 1e-14);
    assert_abs_diff_eq!(oracle, 0.636514, epsilon = 1e-6);
}

#[test]
fn pauli_x_spectrum() {
    let x = pauli_x();
    let spec = spectral_decompose(&x).unwrap();
    assert_eq!(spec.eigenvalues.len(), 2);
    assert_abs_diff_eq!(spec.eigenvalues[0], 1.0, epsilon = 1e-14);
    assert_abs_diff_eq!(spec.eigenvalues[1], -1.0, epsilon = 1e-14);
    let one = Element::identity(x.shape());
    let plus = one.add(&x).unwrap().scale(0.5);
    assert!(spec.projectors[0].max_abs_diff(&plus) < 1e-14);
    assert!(spec.reconstruct().max_abs_diff(&x) < 1e-14);
}

#[test]
fn compression_preserves_trace() {
    let s = AlgebraShape::full(3);
    let e = Element::diagonal(&s, &[1.0, 0.0, 1.0]).unwrap();
    for seed in 0..20 {
        let a = random_hermitian(&s, seed);
        let c = compress(&a, &e).unwrap();
        assert_eq!(c.shape().blocks(), &[2]);
        let eae = e.mul(&a).unwrap().mul(&e).unwrap();
        assert_abs_diff_eq!(c.trace().re, eae.trace().re, epsilon = 1e-12);
    }
}

#[test]
fn gram_form_spectra() {
    let s2 = AlgebraShape::full(2);
    let mut eig: Vec<f64> = gram_form(&PtpuMap::depolarize(&s2)).symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    assert_abs_diff_eq!(eig[0], 0.0, epsilon = 1e-12);
    for v in &eig[1..] {
        assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-12);
    }
    // Q(b) = |b|² - |Φ(b)|² vanishes exactly on the diagonal basis vectors
    let pinch = PtpuMap::diagonal_pinching(&s2, &[1, 1]).unwrap();
    let g = gram_form(&pinch);
    let vanishing = (0..4).filter(|&i| g[(i, i)].abs() < 1e-12).count();
    assert_eq!(vanishing, 2);
    assert_eq!(definite_set(&pinch, KERNEL_TOL).unwrap().dim(), 2);
    assert!(is_ergodic(&PtpuMap::depolarize(&s2)).unwrap());
    assert!(!is_ergodic(&pinch).unwrap());
}

#[test]
fn multiplicative_domain_property() {
    let s2 = AlgebraShape::full(2);
    let pinch = PtpuMap::diagonal_pinching(&s2, &[1, 1]).unwrap();
    assert!(multiplicative_check(&pinch, &Element::matrix_unit(&s2, 0, 0, 0), 100, 1).unwrap());
    assert!(!multiplicative_check(&pinch, &pauli_x(), 100, 1).unwrap());
}

#[test]
fn identity_capacity_at_equals_entropy() {
    let s = AlgebraShape::full(2);
    let id = PtpuMap::identity(&s);
    for seed in 0..5 {
        let a = random_state(&s, seed);
        let c = capacity_at(&id, &a, 3, seed).unwrap();
        assert_abs_diff_eq!(c.value, a.entropy(), epsilon = 1e-8);
    }
}

#[test]
fn blahut_arimoto_matches_grid_search() {
    for seed in 0..3u64 {
        let map = random_cp_map(&AlgebraShape::abelian(3), seed).unwrap();
        let t = map.matrix().clone();
        let ba = blahut_arimoto(&t, 1e-12).unwrap();
        let mut best: f64 = 0.0;
        let steps = 200;
        for i in 0..=steps {
            for j in 0..=(steps - i) {
                let p = [i as f64 / steps as f64, j as f64 / steps as f64, (steps - i - j) as f64 / steps as f64];
                best = best.max(mutual_information(&t, &p));
            }
        }
        assert!(ba.value >= best - 1e-12);
        assert!(ba.value - best < 1e-3);
        assert_abs_diff_eq!(mutual_information(&t, ba.best_ensemble.weights()), ba.value, epsilon = 1e-9);
    }
}

#[test]
fn optimizer_matches_brute_force_on_qubits() {
    let s = AlgebraShape::full(2);
    for seed in 0..3 {
        let map = random_cp_map(&s, 40 + seed).unwrap();
        let opt = optimize_capacity(&map, &quick(seed)).unwrap();
        let brute = brute_force_capacity(&map, DEFAULT_RESOLUTION, seed).unwrap();
        assert!(opt.value >= brute.value - 1e-6, "optimizer {} below brute force {}", opt.value, brute.value);
        assert!(opt.value - brute.value < 2e-3, "optimizer {} brute force {}", opt.value, brute.value);
    }
}

#[test]
fn projection_capacity_agrees_with_reduction() {
    let s3 = AlgebraShape::full(3);
    let fixtures = [
        PtpuMap::identity(&AlgebraShape::full(2)),
        PtpuMap::diagonal_pinching(&s3, &[1, 1, 1]).unwrap(),
        PtpuMap::diagonal_pinching(&s3, &[2, 1]).unwrap(),
        PtpuMap::depolarize(&s3),
        PtpuMap::depolarize_corner(&s3, &Element::diagonal(&s3, &[0.0, 1.0, 1.0]).unwrap()).unwrap(),
    ];
    for map in fixtures {
        let exact = projection_map_capacity(&map, 5).unwrap();
        let tree = reduce_capacity(&map, &quick(5)).unwrap();
        assert_abs_diff_eq!(exact.value, tree.combined_value, epsilon = 1e-9);
    }
}

#[test]
fn additivity_fixtures() {
    let s2 = AlgebraShape::full(2);
    let id = PtpuMap::identity(&s2);
    let r = additivity_experiment(&id, &id, &quick(1)).unwrap();
    assert_abs_diff_eq!(r.sum, 4f64.ln(), epsilon = 5e-3);
    assert_abs_diff_eq!(r.tensor_value, 4f64.ln(), epsilon = 5e-3);

    let dep = PtpuMap::depolarize(&s2);
    let r = additivity_experiment(&dep, &dep, &quick(1)).unwrap();
    assert_eq!(r.sum, 0.0);
    assert!(r.tensor_value.abs() < 1e-9);

    let pinch = PtpuMap::diagonal_pinching(&s2, &[1, 1]).unwrap();
    let bsc = PtpuMap::classical_stochastic(&dmatrix![0.9, 0.1; 0.1, 0.9]).unwrap();
    let r = additivity_experiment(&pinch, &bsc, &quick(1)).unwrap();
    let expected = LN_2 + LN_2 - eta(0.1) - eta(0.9);
    assert_abs_diff_eq!(r.sum, expected, epsilon = 1e-9);
    assert!((r.tensor_value - expected).abs() < 5e-3);
    assert!(r.deficit > -5e-3);
}

#[test]
fn user_asserted_maps_do_not_tensor() {
    let s = AlgebraShape::full(2);
    let m = PtpuMap::new(s.clone(), s.clone(), PtpuMap::identity(&s).matrix().clone(), capred::Certificate::UserAsserted, "asserted").unwrap();
    let err = tensor_product(&m, &PtpuMap::identity(&s)).unwrap_err();
    assert!(err.to_string().contains("positivity of tensor not certified"));
}
