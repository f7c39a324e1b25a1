//! Capacity through the partition of unity carried by the definite set:
//! `C(Φ) = log Σ_i exp C(Φ_i)` over the ergodic corner maps `Φ_i`.

use rand::Rng;
use rayon::prelude::*;
use serde_json::json;

use crate::algebra::{
    derive_seed, entropy, eta, random_state_with, random_unitary, rng_from_seed, AlgebraShape,
    Corner, Element, State,
};
use crate::capacity::{
    blahut_arimoto, holevo_chi, optimize_capacity, reduce_ensemble, CapacityResult, Ensemble, Method,
    OptimizerSettings,
};
use crate::definite::{
    corner_map, definite_set, extract_partition, is_idempotent, CornerMap, Partition, KERNEL_TOL,
};
use crate::error::{domain, Error, Result};
use crate::map::{check_partition, tensor_product, PtpuMap};

const BA_TOL: f64 = 1e-10;
const CONSTANT_TOL: f64 = 1e-12;
const ASSEMBLY_SLACK: f64 = 1e-6;
const IDEMPOTENT_TOL: f64 = 1e-9;
const WEIGHT_DROP: f64 = 1e-12;

/// `log Σ e^{x_i}`, max-shifted.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Capacity of one ergodic corner, choosing the cheapest exact method available.
pub fn corner_capacity(map: &PtpuMap, settings: &OptimizerSettings) -> Result<CapacityResult> {
    if map.source().total_rank() == 1 || map.is_constant(CONSTANT_TOL) {
        return Ok(CapacityResult::exact_zero(map.source()));
    }
    if map.source().is_abelian() && map.target().is_abelian() {
        return blahut_arimoto(map.matrix(), BA_TOL);
    }
    optimize_capacity(map, settings)
}

#[derive(Clone, Debug)]
pub struct ReductionTree {
    pub map: PtpuMap,
    pub partition: Partition,
    pub children: Vec<(CornerMap, CapacityResult)>,
    pub combined_value: f64,
    pub upper_bound: f64,
    pub optimal_weights: Vec<f64>,
    pub assembled: Ensemble,
    pub assembled_chi: f64,
}

impl ReductionTree {
    pub fn is_ergodic(&self) -> bool {
        self.children.len() == 1
    }

    /// The tree seen as a single capacity result, certified by the assembled ensemble.
    pub fn to_capacity_result(&self) -> CapacityResult {
        CapacityResult {
            value: self.combined_value,
            lower_bound: self.assembled_chi.max(0.0).min(self.combined_value),
            upper_bound: self.upper_bound,
            best_ensemble: self.assembled.clone(),
            method: Method::Reduction,
            iterations: self.children.iter().map(|(_, r)| r.iterations).sum(),
            converged: self.children.iter().all(|(_, r)| r.converged),
        }
    }

    pub fn to_json(&self, unit: f64) -> serde_json::Value {
        let children: Vec<serde_json::Value> = self
            .children
            .iter()
            .map(|(c, r)| {
                json!({
                    "cornerRank": c.map.source().total_rank(),
                    "capacity": r.value * unit,
                    "method": r.method.as_str(),
                })
            })
            .collect();
        json!({
            "value": self.combined_value * unit,
            "children": children,
            "optimalWeights": self.optimal_weights,
            "assembledEnsembleChi": self.assembled_chi * unit,
        })
    }
}

/// Definite set, partition extraction (seeded by `settings.seed`), one capacity
/// per corner, and the log-sum-exp combination.
pub fn reduce_capacity(map: &PtpuMap, settings: &OptimizerSettings) -> Result<ReductionTree> {
    let set = definite_set(map, KERNEL_TOL)?;
    let partition = extract_partition(&set, settings.seed)?;
    let corners = (0..partition.len())
        .map(|i| corner_map(map, &partition, i))
        .collect::<Result<Vec<_>>>()?;
    let results = corners
        .par_iter()
        .enumerate()
        .map(|(i, c)| corner_capacity(&c.map, &settings.with_seed(derive_seed(settings.seed, 100 + i as u64))))
        .collect::<Result<Vec<_>>>()?;

    let values: Vec<f64> = results.iter().map(|r| r.value).collect();
    let combined = log_sum_exp(&values);
    let weights: Vec<f64> = values.iter().map(|v| (v - combined).exp()).collect();
    let cap = (map.target().total_rank() as f64).ln();
    let uppers: Vec<f64> = results.iter().map(|r| r.upper_bound).collect();
    let upper_bound = log_sum_exp(&uppers).min(cap).max(combined);

    let mut members = Vec::new();
    let mut states = Vec::new();
    for ((c, r), s) in corners.iter().zip(&results).zip(&weights) {
        for (mu, st) in r.best_ensemble.weights().iter().zip(r.best_ensemble.states()) {
            members.push(s * mu);
            states.push(State::new(c.source_corner.embed(st.element())?.hermitian_parts().0)?);
        }
    }
    let assembled = reduce_ensemble(map, members, states)?;
    let assembled_chi = holevo_chi(map, &assembled)?;
    let gaps: f64 = results.iter().map(|r| r.value - r.lower_bound).sum();
    if assembled_chi < combined - gaps - ASSEMBLY_SLACK {
        return Err(Error::Inconsistency(format!(
            "assembled ensemble reaches {assembled_chi:.12} but the corners combine to {combined:.12}"
        )));
    }
    Ok(ReductionTree {
        map: map.clone(),
        partition,
        children: corners.into_iter().zip(results).collect(),
        combined_value: combined,
        upper_bound,
        optimal_weights: weights,
        assembled,
        assembled_chi,
    })
}

#[derive(Clone, Debug)]
pub struct RestrictionReport {
    pub full: CapacityResult,
    pub restricted: CapacityResult,
    pub gap: f64,
}

impl RestrictionReport {
    pub fn to_json(&self, unit: f64) -> serde_json::Value {
        json!({
            "full": self.full.to_json(unit),
            "restricted": self.restricted.to_json(unit),
            "gap": self.gap * unit,
        })
    }
}

/// `C(Φ)` against `C(Φ|N)` with `N = ⊕ e_i M e_i`, both optimised directly.
pub fn restriction_equality(
    map: &PtpuMap,
    partition: &Partition,
    settings: &OptimizerSettings,
) -> Result<RestrictionReport> {
    let corners = partition.projections().iter().map(Corner::of).collect::<Result<Vec<_>>>()?;
    let restricted_map = map.compose(&PtpuMap::corner_inclusion(&corners)?)?;
    let full = optimize_capacity(map, settings)?;
    let restricted = optimize_capacity(&restricted_map, settings)?;
    let gap = (full.value - restricted.value).abs();
    Ok(RestrictionReport { full, restricted, gap })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EntropyInequalityRecord {
    /// `S(ω|N)` summed over the corners.
    pub conditional_entropy: f64,
    /// `Σ η(ω_i) + Σ ω_i S(e_i ω e_i / ω_i)`.
    pub expanded: f64,
    pub equality_error: f64,
    pub slack: f64,
}

/// Entropy bookkeeping of a state against a partition of unity.
pub fn entropy_inequality_check(omega: &State, projections: &[Element]) -> Result<EntropyInequalityRecord> {
    check_partition(omega.shape(), projections, 1e-9)?;
    let mut conditional = 0.0;
    let mut mixing = 0.0;
    let mut expanded = 0.0;
    for e in projections {
        let part = Corner::of(e)?.compress(omega.element())?.hermitian_parts().0;
        let w = part.trace().re;
        let s = entropy(&part)?;
        conditional += s;
        if w < WEIGHT_DROP {
            continue;
        }
        mixing += eta(w);
        expanded += eta(w) + w * entropy(&part.scale(1.0 / w))?;
    }
    Ok(EntropyInequalityRecord {
        conditional_entropy: conditional,
        expanded,
        equality_error: (conditional - expanded).abs(),
        slack: omega.entropy() - (conditional - mixing),
    })
}

/// Diagonal projections grouped at random within each block, rotated by a
/// random block unitary.
pub fn random_rotated_partition(shape: &AlgebraShape, seed: u64) -> Vec<Element> {
    let mut rng = rng_from_seed(seed);
    let u = random_unitary(shape, derive_seed(seed, 1));
    let mut out = Vec::new();
    let mut offset = 0;
    for &n in shape.blocks() {
        let mut start = 0;
        while start < n {
            let len = rng.random_range(1..=n - start);
            let mut d = vec![0.0; shape.total_rank()];
            d[offset + start..offset + start + len].iter_mut().for_each(|v| *v = 1.0);
            let p = Element::diagonal(shape, &d).expect("diagonal length matches");
            let rotated = u.mul(&p).and_then(|x| x.mul(&u.adjoint())).expect("same shape");
            out.push(rotated.hermitian_parts().0);
            start += len;
        }
        offset += n;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EntropyInequalitySummary {
    pub samples: usize,
    pub max_equality_error: f64,
    pub min_slack: f64,
}

impl EntropyInequalitySummary {
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "samples": self.samples,
            "maxEqualityError": self.max_equality_error,
            "minSlack": self.min_slack,
        })
    }
}

/// Runs [`entropy_inequality_check`] on `samples` seeded (state, rotated partition) pairs.
pub fn entropy_inequality_run(shape: &AlgebraShape, samples: usize, seed: u64) -> Result<(EntropyInequalitySummary, Vec<EntropyInequalityRecord>)> {
    let records = (0..samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng_from_seed(derive_seed(seed, 2 * k as u64));
            let omega = random_state_with(shape, &mut rng);
            let parts = random_rotated_partition(shape, derive_seed(seed, 2 * k as u64 + 1));
            entropy_inequality_check(&omega, &parts)
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = EntropyInequalitySummary {
        samples,
        max_equality_error: records.iter().map(|r| r.equality_error).fold(0.0, f64::max),
        min_slack: records.iter().map(|r| r.slack).fold(f64::INFINITY, f64::min),
    };
    Ok((summary, records))
}

/// `log` of the rank of the image of an idempotent map.
pub fn projection_map_capacity(map: &PtpuMap, seed: u64) -> Result<CapacityResult> {
    if !is_idempotent(map, IDEMPOTENT_TOL) {
        return Err(domain("map is not idempotent"));
    }
    let set = definite_set(map, KERNEL_TOL)?;
    let mut last = String::new();
    for attempt in 0..5u64 {
        let partition = match extract_partition(&set, derive_seed(seed, attempt)) {
            Ok(p) => p,
            Err(e) => {
                last = e.to_string();
                continue;
            }
        };
        let fixed = partition
            .projections()
            .iter()
            .zip(partition.images())
            .all(|(e, f)| e.max_abs_diff(f) <= IDEMPOTENT_TOL);
        if fixed {
            let count = partition.len() as f64;
            let value = count.ln();
            let mut result = CapacityResult::exact_zero(map.source());
            let states = partition
                .projections()
                .iter()
                .map(|e| State::new(e.scale(1.0 / e.trace().re)))
                .collect::<Result<Vec<_>>>()?;
            result.best_ensemble = Ensemble::new(vec![1.0 / count; partition.len()], states)?;
            result.value = value;
            result.lower_bound = value;
            result.upper_bound = value;
            return Ok(result);
        }
        last = "a partition element is not fixed by the map".into();
    }
    Err(Error::Extraction(format!("no fixed partition in the image: {last}")))
}

#[derive(Clone, Debug)]
pub struct AdditivityReport {
    pub factors: [ReductionTree; 2],
    pub sum: f64,
    pub tensor: ReductionTree,
    /// `χ` of the product of the factors' assembled ensembles on the tensor map.
    pub product_chi: f64,
    /// Best certified lower bound on the tensor capacity.
    pub tensor_value: f64,
    /// `tensor_value - sum`.
    pub deficit: f64,
}

impl AdditivityReport {
    pub fn to_json(&self, unit: f64) -> serde_json::Value {
        json!({
            "factorValues": [self.factors[0].combined_value * unit, self.factors[1].combined_value * unit],
            "sum": self.sum * unit,
            "tensorValue": self.tensor_value * unit,
            "tensorReduction": self.tensor.to_json(unit),
            "productEnsembleChi": self.product_chi * unit,
            "deficit": self.deficit * unit,
        })
    }
}

fn product_ensemble(a: &Ensemble, b: &Ensemble) -> Result<(Vec<f64>, Vec<State>)> {
    let mut weights = Vec::new();
    let mut states = Vec::new();
    for (wa, sa) in a.weights().iter().zip(a.states()) {
        for (wb, sb) in b.weights().iter().zip(b.states()) {
            weights.push(wa * wb);
            states.push(State::new(sa.element().kron(sb.element()))?);
        }
    }
    Ok((weights, states))
}

/// `C(Φ) + C(Ψ)` against a lower bound on `C(Φ ⊗ Ψ)`.
pub fn additivity_experiment(phi: &PtpuMap, psi: &PtpuMap, settings: &OptimizerSettings) -> Result<AdditivityReport> {
    let tensor_map = tensor_product(phi, psi)?;
    let a = reduce_capacity(phi, settings)?;
    let b = reduce_capacity(psi, settings)?;
    let tensor = reduce_capacity(&tensor_map, settings)?;
    let (w, s) = product_ensemble(&a.assembled, &b.assembled)?;
    let product = reduce_ensemble(&tensor_map, w, s)?;
    let product_chi = holevo_chi(&tensor_map, &product)?;
    let sum = a.combined_value + b.combined_value;
    let tensor_value = tensor.combined_value.max(product_chi);
    Ok(AdditivityReport {
        factors: [a, b],
        sum,
        tensor,
        product_chi,
        tensor_value,
        deficit: tensor_value - sum,
    })
}

#[derive(Clone, Debug)]
pub struct TensorIdentityReport {
    pub additivity: AdditivityReport,
    /// `C(Φ) + log totalRank(N)`.
    pub expected: f64,
    /// Direct optimiser run on `Φ ⊗ id_N`.
    pub optimizer: CapacityResult,
}

impl TensorIdentityReport {
    pub fn to_json(&self, unit: f64) -> serde_json::Value {
        json!({
            "additivity": self.additivity.to_json(unit),
            "expected": self.expected * unit,
            "reducedValue": self.additivity.tensor.combined_value * unit,
            "optimizerValue": self.optimizer.value * unit,
            "error": (self.additivity.tensor.combined_value - self.expected).abs() * unit,
        })
    }
}

pub fn tensor_with_identity(phi: &PtpuMap, n: &AlgebraShape, settings: &OptimizerSettings) -> Result<TensorIdentityReport> {
    let id = PtpuMap::identity(n);
    let additivity = additivity_experiment(phi, &id, settings)?;
    let expected = additivity.factors[0].combined_value + (n.total_rank() as f64).ln();
    let optimizer = optimize_capacity(&tensor_product(phi, &id)?, settings)?;
    Ok(TensorIdentityReport { additivity, expected, optimizer })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, DVector};
    use std::f64::consts::LN_2;

    use crate::capacity::bsc_capacity;
    use crate::C64;

    fn mixed_fixture() -> PtpuMap {
        let s = AlgebraShape::full(3);
        PtpuMap::depolarize_corner(&s, &Element::diagonal(&s, &[0.0, 1.0, 1.0]).unwrap()).unwrap()
    }

    fn quick() -> OptimizerSettings {
        OptimizerSettings { restarts: 4, max_iter: 400, tol: 1e-9, seed: 3 }
    }

    #[test]
    fn log_sum_exp_is_stable() {
        assert!((log_sum_exp(&[0.0, 0.0, 0.0]) - 3f64.ln()).abs() < 1e-15);
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + LN_2)).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[-5.0]), -5.0);
    }

    #[test]
    fn pinching_reduces_to_log_rank() {
        let s = AlgebraShape::full(3);
        let t = reduce_capacity(&PtpuMap::diagonal_pinching(&s, &[1, 1, 1]).unwrap(), &quick()).unwrap();
        assert_eq!(t.children.len(), 3);
        assert!(t.children.iter().all(|(_, r)| r.method == Method::Exact && r.value == 0.0));
        assert!((t.combined_value - 3f64.ln()).abs() < 1e-12);
        assert!((t.assembled_chi - 3f64.ln()).abs() < 1e-9);
        assert!((t.optimal_weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mixed_fixture_reduces_to_log_two() {
        let t = reduce_capacity(&mixed_fixture(), &quick()).unwrap();
        let mut ranks: Vec<usize> = t.children.iter().map(|(c, _)| c.map.source().total_rank()).collect();
        ranks.sort();
        assert_eq!(ranks, vec![1, 2]);
        assert!((t.combined_value - LN_2).abs() < 1e-12);
        assert!(t.assembled_chi >= t.combined_value - 1e-9);
    }

    #[test]
    fn ergodic_map_has_one_child() {
        let s = AlgebraShape::full(2);
        let t = reduce_capacity(&PtpuMap::depolarize(&s), &quick()).unwrap();
        assert!(t.is_ergodic());
        assert_eq!(t.combined_value, 0.0);
    }

    #[test]
    fn abelian_corners_use_blahut_arimoto() {
        let bsc = PtpuMap::classical_stochastic(&dmatrix![0.9, 0.1; 0.1, 0.9]).unwrap();
        let t = reduce_capacity(&bsc, &quick()).unwrap();
        assert_eq!(t.children[0].1.method, Method::BlahutArimoto);
        assert!((t.combined_value - bsc_capacity(0.1)).abs() < 1e-9);
    }

    #[test]
    fn entropy_inequality_examples() {
        let s = AlgebraShape::full(2);
        let parts = vec![Element::matrix_unit(&s, 0, 0, 0), Element::matrix_unit(&s, 0, 1, 1)];
        let r = entropy_inequality_check(&State::maximally_mixed(&s), &parts).unwrap();
        // diagonal state: pinching loses nothing, so the slack is the mixing entropy
        assert!((r.conditional_entropy - LN_2).abs() < 1e-12);
        assert!((r.slack - LN_2).abs() < 1e-12);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let plus = State::pure(&s, 0, &DVector::from_vec(vec![C64::new(h, 0.0), C64::new(h, 0.0)])).unwrap();
        let r = entropy_inequality_check(&plus, &parts).unwrap();
        assert!(r.slack.abs() < 1e-12);
        assert!(r.equality_error < 1e-12);
    }

    #[test]
    fn rotated_partitions_are_partitions() {
        let s = AlgebraShape::new(vec![3, 2]).unwrap();
        for seed in 0..20 {
            let p = random_rotated_partition(&s, seed);
            check_partition(&s, &p, 1e-10).unwrap();
        }
    }

    #[test]
    fn projection_maps() {
        let s2 = AlgebraShape::full(2);
        let r = projection_map_capacity(&PtpuMap::identity(&s2), 1).unwrap();
        assert!((r.value - LN_2).abs() < 1e-12);
        let s3 = AlgebraShape::full(3);
        let r = projection_map_capacity(&PtpuMap::diagonal_pinching(&s3, &[1, 1, 1]).unwrap(), 1).unwrap();
        assert!((r.value - 3f64.ln()).abs() < 1e-12);
        let r = projection_map_capacity(&PtpuMap::depolarize(&s2), 1).unwrap();
        assert_eq!(r.value, 0.0);
        let r = projection_map_capacity(&mixed_fixture(), 1).unwrap();
        assert!((r.value - LN_2).abs() < 1e-12);
        let s4 = AlgebraShape::full(4);
        assert!(projection_map_capacity(&PtpuMap::unitary_conjugation(&s4, &random_unitary(&s4, 2)).unwrap(), 1).is_err());
    }

    #[test]
    fn restriction_on_identity() {
        let s = AlgebraShape::full(2);
        let id = PtpuMap::identity(&s);
        let parts = vec![Element::matrix_unit(&s, 0, 0, 0), Element::matrix_unit(&s, 0, 1, 1)];
        let partition = Partition::new(&id, parts).unwrap();
        let r = restriction_equality(&id, &partition, &quick()).unwrap();
        assert!(r.gap < 2e-3);
        assert!((r.restricted.value - LN_2).abs() < 2e-3);
    }

    #[test]
    fn tensor_with_identity_adds_log_rank() {
        let s = AlgebraShape::full(2);
        let r = tensor_with_identity(&PtpuMap::depolarize(&s), &s, &quick()).unwrap();
        assert!((r.additivity.tensor.combined_value - LN_2).abs() < 1e-9);
        assert!(r.additivity.deficit > -5e-3);
    }
}
