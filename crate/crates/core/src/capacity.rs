//! Holevo-type capacity `C(Φ) = sup_a sup_{Σλ_m a_m = a} S(Φ(a)) - Σ λ_m S(Φ(a_m))`.
//!
//! The optimiser searches ensembles of pure states, which is enough because
//! `S∘Φ` is concave: splitting a member into extreme points never lowers the
//! objective. Every reported value is attained by the returned ensemble and is
//! therefore a certified lower bound.

use std::f64::consts::LN_2;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::algebra::{
    derive_seed, entropy, eta, hermitian_eigenvalues, hermitian_eigh, rng_from_seed, AlgebraShape,
    Element, State, C64,
};
use crate::basis::{blocks_from_coords, pure_coords_block, to_coords, unit_coords};
use crate::error::{domain, structural, Result};
use crate::map::{check_doubly_stochastic, PtpuMap};

/// Members with a smaller weight are dropped from an ensemble.
pub const MIN_WEIGHT: f64 = 1e-15;
const FD_STEP: f64 = 1e-6;
/// Weight of the maximally mixed state blended in before differentiating.
const BOUNDARY_GUARD: f64 = 1e-9;
const PLATEAU_WINDOW: usize = 50;
const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 40;

/// A finite ensemble `{(λ_m, a_m)}` of states with barycenter `Σ λ_m a_m`.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    weights: Vec<f64>,
    states: Vec<State>,
    barycenter: State,
}

impl Ensemble {
    /// Drops members below [`MIN_WEIGHT`], renormalises and caches the barycenter.
    pub fn new(weights: Vec<f64>, states: Vec<State>) -> Result<Self> {
        if weights.len() != states.len() || states.is_empty() {
            return Err(structural("ensemble needs one weight per state"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(domain("ensemble weights must be nonnegative"));
        }
        let shape = states[0].shape().clone();
        if states.iter().any(|s| s.shape() != &shape) {
            return Err(structural("ensemble states live on different shapes"));
        }
        let (weights, states): (Vec<f64>, Vec<State>) =
            weights.into_iter().zip(states).filter(|(w, _)| *w >= MIN_WEIGHT).unzip();
        let total: f64 = weights.iter().sum();
        if weights.is_empty() || total <= 0.0 {
            return Err(domain("ensemble has no member with positive weight"));
        }
        if weights.len() > shape.sa_dim() + 1 {
            return Err(domain(format!(
                "ensemble of {} members exceeds the cap saDim + 1 = {}",
                weights.len(),
                shape.sa_dim() + 1
            )));
        }
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut bary = Element::zeros(&shape);
        for (w, s) in weights.iter().zip(&states) {
            bary = bary.add(&s.element().scale(*w))?;
        }
        let barycenter = State::new(bary.hermitian_parts().0)?;
        Ok(Ensemble { weights, states, barycenter })
    }

    pub fn single(state: State) -> Self {
        Ensemble { weights: vec![1.0], barycenter: state.clone(), states: vec![state] }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn barycenter(&self) -> &State {
        &self.barycenter
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn shape(&self) -> &AlgebraShape {
        self.barycenter.shape()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "weights": self.weights,
            "states": self.states.iter().map(|s| s.element().to_json()).collect::<Vec<_>>(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Exact,
    BlahutArimoto,
    EnsembleAscent,
    BruteForce,
    Reduction,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Exact => "Exact",
            Method::BlahutArimoto => "BlahutArimoto",
            Method::EnsembleAscent => "EnsembleAscent",
            Method::BruteForce => "BruteForce",
            Method::Reduction => "Reduction",
        }
    }
}

#[derive(Clone, Debug)]
pub struct CapacityResult {
    /// Nats.
    pub value: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub best_ensemble: Ensemble,
    pub method: Method,
    pub iterations: usize,
    pub converged: bool,
}

impl CapacityResult {
    /// Exact zero, attained by any single state.
    pub fn exact_zero(shape: &AlgebraShape) -> Self {
        CapacityResult {
            value: 0.0,
            lower_bound: 0.0,
            upper_bound: 0.0,
            best_ensemble: Ensemble::single(State::maximally_mixed(shape)),
            method: Method::Exact,
            iterations: 0,
            converged: true,
        }
    }

    /// JSON form; capacity-valued fields are multiplied by `unit` (1 for nats,
    /// `1/ln 2` for bits).
    pub fn to_json(&self, unit: f64) -> serde_json::Value {
        serde_json::json!({
            "value": self.value * unit,
            "lowerBound": self.lower_bound * unit,
            "upperBound": self.upper_bound * unit,
            "method": self.method.as_str(),
            "ensemble": self.best_ensemble.to_json(),
            "iterations": self.iterations,
            "converged": self.converged,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerSettings {
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings { restarts: 16, max_iter: 2000, tol: 1e-7, seed: 42 }
    }
}

impl OptimizerSettings {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Entropy of the hermitian element with the given coordinates.
pub(crate) fn entropy_from_coords(shape: &AlgebraShape, c: &[f64]) -> f64 {
    blocks_from_coords(shape, c)
        .iter()
        .flat_map(|m| hermitian_eigenvalues(m))
        .map(|l| eta(l.max(0.0)))
        .sum()
}

/// `S(Φ(ā)) - Σ λ_m S(Φ(a_m))`.
pub fn holevo_chi(map: &PtpuMap, ensemble: &Ensemble) -> Result<f64> {
    if ensemble.shape() != map.source() {
        return Err(structural(format!(
            "ensemble over {} does not match map source {}",
            ensemble.shape(),
            map.source()
        )));
    }
    let mut avg = DVector::zeros(map.target().sa_dim());
    let mut inner = 0.0;
    for (w, s) in ensemble.weights().iter().zip(ensemble.states()) {
        let out = map.matrix() * to_coords(s.element());
        inner += w * entropy_from_coords(map.target(), out.as_slice());
        avg += out * *w;
    }
    Ok(entropy_from_coords(map.target(), avg.as_slice()) - inner)
}

/// Shrink an ensemble to at most `saDim + 1` members without moving its
/// barycenter and without lowering `χ`.
pub fn reduce_ensemble(map: &PtpuMap, weights: Vec<f64>, states: Vec<State>) -> Result<Ensemble> {
    let cap = map.source().sa_dim() + 1;
    let (mut weights, mut states): (Vec<f64>, Vec<State>) =
        weights.into_iter().zip(states).filter(|(w, _)| *w >= MIN_WEIGHT).unzip();
    let mut coords: Vec<DVector<f64>> = states.iter().map(|s| to_coords(s.element())).collect();
    let mut ents: Vec<f64> = coords
        .iter()
        .map(|c| entropy_from_coords(map.target(), (map.matrix() * c).as_slice()))
        .collect();
    while weights.len() > cap {
        let k = weights.len();
        // columns [coords(a_m); 1], padded square so the SVD exposes the null space
        let mut a = DMatrix::zeros(k, k);
        for (m, c) in coords.iter().enumerate() {
            a.view_mut((0, m), (c.len(), 1)).copy_from(c);
            a[(c.len(), m)] = 1.0;
        }
        let svd = a.svd(false, true);
        let vt = svd.v_t.expect("requested");
        let (idx, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|x, y| x.1.total_cmp(y.1))
            .expect("nonempty");
        let mut v: Vec<f64> = vt.row(idx).iter().copied().collect();
        if v.iter().zip(&ents).map(|(a, b)| a * b).sum::<f64>() < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        let mut step = f64::INFINITY;
        let mut drop = 0;
        for (m, &vm) in v.iter().enumerate() {
            if vm > 1e-14 && weights[m] / vm < step {
                step = weights[m] / vm;
                drop = m;
            }
        }
        if !step.is_finite() {
            return Err(structural("could not reduce ensemble support"));
        }
        for (w, vm) in weights.iter_mut().zip(&v) {
            *w = (*w - step * vm).max(0.0);
        }
        weights.remove(drop);
        states.remove(drop);
        coords.remove(drop);
        ents.remove(drop);
        let keep: Vec<bool> = weights.iter().map(|w| *w >= MIN_WEIGHT).collect();
        let mut it = keep.iter();
        weights.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        states.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        coords.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        ents.retain(|_| *it.next().unwrap());
    }
    Ensemble::new(weights, states)
}

/// Precomputed pieces of `Φ` used by the ascent loops.
struct Problem<'a> {
    map: &'a PtpuMap,
    /// Columns of the superoperator belonging to each source block.
    block_cols: Vec<DMatrix<f64>>,
    /// Coordinates of `1_P / N`.
    mixed: DVector<f64>,
}

impl<'a> Problem<'a> {
    fn new(map: &'a PtpuMap) -> Self {
        let offsets = map.source().sa_offsets();
        let block_cols = map
            .source()
            .blocks()
            .iter()
            .zip(&offsets)
            .map(|(&n, &o)| map.matrix().columns(o, n * n).into_owned())
            .collect();
        let mixed = unit_coords(map.target()) / map.target().total_rank() as f64;
        Problem { map, block_cols, mixed }
    }

    /// Output coordinates of the pure state along the (unnormalised) vector `psi`.
    fn output(&self, block: usize, psi: &[C64]) -> DVector<f64> {
        let n = psi.len();
        let mut c = vec![0.0; n * n];
        pure_coords_block(psi, &mut c);
        let norm2: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        let c = DVector::from_vec(c) / norm2;
        &self.block_cols[block] * c
    }

    fn entropy(&self, c: &DVector<f64>, guard: bool) -> f64 {
        let target = self.map.target();
        if guard {
            let g = c * (1.0 - BOUNDARY_GUARD) + &self.mixed * BOUNDARY_GUARD;
            entropy_from_coords(target, g.as_slice())
        } else {
            entropy_from_coords(target, c.as_slice())
        }
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// One local ascent over ensembles of pure states with fixed block labels.
struct Ascent<'p, 'a> {
    problem: &'p Problem<'a>,
    blocks: Vec<usize>,
    /// Real parameters: for each member `2 n_b` reals (re, im), then one logit per member.
    params: Vec<f64>,
    offsets: Vec<usize>,
    logit_offset: usize,
}

struct Snapshot {
    outs: Vec<DVector<f64>>,
    ents: Vec<f64>,
    weights: Vec<f64>,
    avg: DVector<f64>,
    chi: f64,
}

impl<'p, 'a> Ascent<'p, 'a> {
    fn random(problem: &'p Problem<'a>, seed: u64) -> Self {
        let src = problem.map.source();
        let k = src.sa_dim() + 1;
        let mut rng = rng_from_seed(seed);
        let dims = src.blocks();
        let total: usize = src.sa_dim();
        let blocks: Vec<usize> = (0..k)
            .map(|m| {
                if m < dims.len() {
                    m
                } else {
                    let mut r = rng.random_range(0..total);
                    let mut b = 0;
                    while r >= dims[b] * dims[b] {
                        r -= dims[b] * dims[b];
                        b += 1;
                    }
                    b
                }
            })
            .collect();
        let mut offsets = Vec::with_capacity(k);
        let mut params = Vec::new();
        for &b in &blocks {
            offsets.push(params.len());
            for _ in 0..2 * dims[b] {
                params.push(rng.sample::<f64, _>(StandardNormal));
            }
        }
        let logit_offset = params.len();
        params.extend(std::iter::repeat_n(0.0, k));
        let mut a = Ascent { problem, blocks, params, offsets, logit_offset };
        a.normalize();
        a
    }

    fn psi_of(&self, params: &[f64], m: usize) -> Vec<C64> {
        let n = self.problem.map.source().blocks()[self.blocks[m]];
        let o = self.offsets[m];
        (0..n).map(|j| C64::new(params[o + 2 * j], params[o + 2 * j + 1])).collect()
    }

    fn normalize(&mut self) {
        for m in 0..self.blocks.len() {
            let n = self.problem.map.source().blocks()[self.blocks[m]];
            let o = self.offsets[m];
            let norm = self.params[o..o + 2 * n].iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                self.params[o..o + 2 * n].iter_mut().for_each(|v| *v /= norm);
            }
        }
    }

    fn evaluate(&self, params: &[f64], guard: bool) -> Snapshot {
        let k = self.blocks.len();
        let outs: Vec<DVector<f64>> =
            (0..k).map(|m| self.problem.output(self.blocks[m], &self.psi_of(params, m))).collect();
        let ents: Vec<f64> = outs.iter().map(|o| self.problem.entropy(o, guard)).collect();
        let weights = softmax(&params[self.logit_offset..]);
        let mut avg = DVector::zeros(self.problem.mixed.len());
        for (w, o) in weights.iter().zip(&outs) {
            avg.axpy(*w, o, 1.0);
        }
        let inner: f64 = weights.iter().zip(&ents).map(|(w, s)| w * s).sum();
        let chi = self.problem.entropy(&avg, guard) - inner;
        Snapshot { outs, ents, weights, avg, chi }
    }

    fn gradient(&self, snap: &Snapshot) -> Vec<f64> {
        let mut grad = vec![0.0; self.params.len()];
        let inner: f64 = snap.weights.iter().zip(&snap.ents).map(|(w, s)| w * s).sum();
        let mut work = self.params.clone();
        for m in 0..self.blocks.len() {
            let n = self.problem.map.source().blocks()[self.blocks[m]];
            let o = self.offsets[m];
            let w = snap.weights[m];
            for p in o..o + 2 * n {
                let mut side = [0.0; 2];
                for (s, sign) in side.iter_mut().zip([1.0, -1.0]) {
                    work[p] = self.params[p] + sign * FD_STEP;
                    let out = self.problem.output(self.blocks[m], &self.psi_of(&work, m));
                    let ent = self.problem.entropy(&out, true);
                    let avg = &snap.avg + (&out - &snap.outs[m]) * w;
                    *s = self.problem.entropy(&avg, true) - (inner + w * (ent - snap.ents[m]));
                }
                work[p] = self.params[p];
                grad[p] = (side[0] - side[1]) / (2.0 * FD_STEP);
            }
        }
        let lo = self.logit_offset;
        for m in 0..self.blocks.len() {
            let mut side = [0.0; 2];
            for (s, sign) in side.iter_mut().zip([1.0, -1.0]) {
                work[lo + m] = self.params[lo + m] + sign * FD_STEP;
                let weights = softmax(&work[lo..]);
                let mut avg = DVector::zeros(snap.avg.len());
                for (wt, out) in weights.iter().zip(&snap.outs) {
                    avg.axpy(*wt, out, 1.0);
                }
                let inner: f64 = weights.iter().zip(&snap.ents).map(|(w, s)| w * s).sum();
                *s = self.problem.entropy(&avg, true) - inner;
            }
            work[lo + m] = self.params[lo + m];
            grad[lo + m] = (side[0] - side[1]) / (2.0 * FD_STEP);
        }
        grad
    }

    /// Runs until the plateau criterion or `max_iter`; returns (iterations, converged).
    fn run(&mut self, max_iter: usize, tol: f64) -> (usize, bool) {
        let mut snap = self.evaluate(&self.params, true);
        let mut history = vec![snap.chi];
        let mut step = 1.0;
        for it in 0..max_iter {
            let grad = self.gradient(&snap);
            let g2: f64 = grad.iter().map(|g| g * g).sum();
            if g2 < 1e-24 {
                return (it, true);
            }
            let mut accepted = false;
            for _ in 0..MAX_HALVINGS {
                let trial: Vec<f64> = self.params.iter().zip(&grad).map(|(p, g)| p + step * g).collect();
                let cand = self.evaluate(&trial, true);
                if cand.chi >= snap.chi + ARMIJO * step * g2 {
                    self.params = trial;
                    self.normalize();
                    snap = self.evaluate(&self.params, true);
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                return (it, true);
            }
            step = (step * 2.0).min(1e3);
            history.push(snap.chi);
            if history.len() > PLATEAU_WINDOW && snap.chi - history[history.len() - 1 - PLATEAU_WINDOW] < tol {
                return (it + 1, true);
            }
        }
        (max_iter, false)
    }

    fn ensemble(&self) -> Result<Ensemble> {
        let src = self.problem.map.source();
        let weights = softmax(&self.params[self.logit_offset..]);
        let states = (0..self.blocks.len())
            .map(|m| State::pure(src, self.blocks[m], &DVector::from_vec(self.psi_of(&self.params, m))))
            .collect::<Result<Vec<_>>>()?;
        reduce_ensemble(self.problem.map, weights, states)
    }
}

/// Multi-restart local ascent of `χ` over ensembles of pure states.
pub fn optimize_capacity(map: &PtpuMap, settings: &OptimizerSettings) -> Result<CapacityResult> {
    let problem = Problem::new(map);
    let restarts = settings.restarts.max(1);
    let runs: Vec<Result<(f64, Ensemble, usize, bool)>> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut ascent = Ascent::random(&problem, derive_seed(settings.seed, r as u64));
            let (iters, converged) = ascent.run(settings.max_iter, settings.tol);
            let ens = ascent.ensemble()?;
            let chi = holevo_chi(map, &ens)?;
            Ok((chi, ens, iters, converged))
        })
        .collect();
    let mut best: Option<(f64, Ensemble, usize)> = None;
    let mut last_converged = false;
    for run in runs {
        let (chi, ens, iters, converged) = run?;
        last_converged = converged;
        if best.as_ref().is_none_or(|(b, _, _)| chi > *b) {
            best = Some((chi, ens, iters));
        }
    }
    let (chi, ens, iters) = best.expect("at least one restart");
    let upper = (map.target().total_rank() as f64).ln();
    let value = chi.max(0.0).min(upper);
    Ok(CapacityResult {
        value,
        lower_bound: value,
        upper_bound: upper,
        best_ensemble: ens,
        method: Method::EnsembleAscent,
        iterations: iters,
        converged: last_converged,
    })
}

/// Best `χ` over decompositions of a fixed state, with the ensemble attaining it.
#[derive(Clone, Debug)]
pub struct PointCapacity {
    pub value: f64,
    pub ensemble: Ensemble,
}

/// Parameterises decompositions `a = Σ λ_m ψ_m ψ_m*` through isometries:
/// per block `λ_m ψ_m ψ_m* = a^{1/2} x_m x_m* a^{1/2}` with `Σ x_m x_m* = 1`.
struct Decomposer<'a> {
    map: &'a PtpuMap,
    /// `a_b^{1/2}` per block and its eigenvectors (for the spectral start).
    roots: Vec<DMatrix<C64>>,
    eigvecs: Vec<DMatrix<C64>>,
    members: Vec<usize>,
}

impl<'a> Decomposer<'a> {
    fn new(map: &'a PtpuMap, a: &State) -> Self {
        let mut roots = Vec::new();
        let mut eigvecs = Vec::new();
        for m in a.element().blocks() {
            let (vals, vecs) = hermitian_eigh(m);
            let sq = DMatrix::from_diagonal(&DVector::from_iterator(
                vals.len(),
                vals.iter().map(|&l| C64::new(l.max(0.0).sqrt(), 0.0)),
            ));
            roots.push(&vecs * sq * vecs.adjoint());
            eigvecs.push(vecs);
        }
        let members = map.source().blocks().iter().map(|n| n * n).collect();
        Decomposer { map, roots, eigvecs, members }
    }

    fn param_len(&self) -> usize {
        self.map.source().blocks().iter().zip(&self.members).map(|(n, k)| 2 * n * k).sum()
    }

    /// Unnormalised member vectors `a^{1/2} x_m` with their block labels.
    fn members_of(&self, params: &[f64]) -> Vec<(usize, DVector<C64>)> {
        let mut out = Vec::new();
        let mut o = 0;
        for (b, (&n, &k)) in self.map.source().blocks().iter().zip(&self.members).enumerate() {
            let g = DMatrix::from_fn(k, n, |r, c| C64::new(params[o + 2 * (r * n + c)], params[o + 2 * (r * n + c) + 1]));
            o += 2 * n * k;
            // U = G (G*G)^{-1/2}
            let gram = g.adjoint() * &g;
            let (vals, vecs) = hermitian_eigh(&gram);
            let inv_sqrt = DMatrix::from_diagonal(&DVector::from_iterator(
                n,
                vals.iter().map(|&l| C64::new(1.0 / l.max(1e-300).sqrt(), 0.0)),
            ));
            let u = &g * (&vecs * inv_sqrt * vecs.adjoint());
            for m in 0..k {
                let x = u.row(m).adjoint();
                out.push((b, &self.roots[b] * x));
            }
        }
        out
    }

    /// `-Σ λ_m S(Φ(ψ_m))`, which differs from `χ` by the constant `S(Φ(a))`.
    fn objective(&self, params: &[f64]) -> f64 {
        let problem_cols = &self.map.matrix();
        let offsets = self.map.source().sa_offsets();
        let mut total = 0.0;
        for (b, phi) in self.members_of(params) {
            let weight = phi.norm_squared();
            if weight < MIN_WEIGHT {
                continue;
            }
            let n = phi.len();
            let mut c = vec![0.0; n * n];
            pure_coords_block(phi.as_slice(), &mut c);
            let c = DVector::from_vec(c) / weight;
            let out = problem_cols.columns(offsets[b], n * n) * c;
            total -= weight * entropy_from_coords(self.map.target(), out.as_slice());
        }
        total
    }

    fn spectral_start(&self) -> Vec<f64> {
        let mut params = Vec::with_capacity(self.param_len());
        for (b, (&n, &k)) in self.map.source().blocks().iter().zip(&self.members).enumerate() {
            // rows of G: V* then zeros
            let vh = self.eigvecs[b].adjoint();
            for r in 0..k {
                for c in 0..n {
                    let z = if r < n { vh[(r, c)] } else { C64::new(0.0, 0.0) };
                    params.push(z.re);
                    params.push(z.im);
                }
            }
        }
        params
    }

    fn ascend(&self, mut params: Vec<f64>, max_iter: usize) -> (f64, Vec<f64>) {
        let mut value = self.objective(&params);
        let mut step = 0.1;
        for _ in 0..max_iter {
            let mut grad = vec![0.0; params.len()];
            let mut work = params.clone();
            for p in 0..params.len() {
                work[p] = params[p] + FD_STEP;
                let up = self.objective(&work);
                work[p] = params[p] - FD_STEP;
                let down = self.objective(&work);
                work[p] = params[p];
                grad[p] = (up - down) / (2.0 * FD_STEP);
            }
            let g2: f64 = grad.iter().map(|g| g * g).sum();
            if g2 < 1e-24 {
                break;
            }
            let mut accepted = false;
            for _ in 0..MAX_HALVINGS {
                let trial: Vec<f64> = params.iter().zip(&grad).map(|(p, g)| p + step * g).collect();
                let v = self.objective(&trial);
                if v >= value + ARMIJO * step * g2 {
                    params = trial;
                    value = v;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
            step = (step * 2.0).min(10.0);
        }
        (value, params)
    }

    fn ensemble(&self, params: &[f64]) -> Result<Ensemble> {
        let mut weights = Vec::new();
        let mut states = Vec::new();
        for (b, phi) in self.members_of(params) {
            let w = phi.norm_squared();
            if w < MIN_WEIGHT {
                continue;
            }
            weights.push(w);
            states.push(State::pure(self.map.source(), b, &phi)?);
        }
        reduce_ensemble(self.map, weights, states)
    }
}

/// `C(Φ, a)`: the best `χ` over decompositions of `a` into pure states.
pub fn capacity_at(map: &PtpuMap, a: &State, restarts: usize, seed: u64) -> Result<PointCapacity> {
    if a.shape() != map.source() {
        return Err(structural("state does not live on the map's source"));
    }
    let dec = Decomposer::new(map, a);
    let mut candidates = vec![dec.spectral_start()];
    for r in 1..restarts.max(1) {
        let mut rng = rng_from_seed(derive_seed(seed, r as u64));
        candidates.push((0..dec.param_len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect());
    }
    let runs: Vec<(f64, Vec<f64>)> = candidates.into_par_iter().map(|p| dec.ascend(p, 500)).collect();
    let mut best = PointCapacity { value: 0.0, ensemble: Ensemble::single(a.clone()) };
    for (_, params) in runs {
        if let Ok(ens) = dec.ensemble(&params) {
            let chi = holevo_chi(map, &ens)?;
            if chi > best.value {
                best = PointCapacity { value: chi, ensemble: ens };
            }
        }
    }
    Ok(best)
}

/// Classical Blahut–Arimoto on a doubly stochastic matrix (`p ↦ T p`).
pub fn blahut_arimoto(t: &DMatrix<f64>, tol: f64) -> Result<CapacityResult> {
    check_doubly_stochastic(t)?;
    const MAX_ITER: usize = 1_000_000;
    let n = t.ncols();
    let mut p = vec![1.0 / n as f64; n];
    let divergences = |p: &[f64]| -> Vec<f64> {
        let q: Vec<f64> = (0..t.nrows()).map(|i| (0..n).map(|j| t[(i, j)] * p[j]).sum()).collect();
        (0..n)
            .map(|j| {
                (0..t.nrows())
                    .filter(|&i| t[(i, j)] > 0.0)
                    .map(|i| t[(i, j)] * (t[(i, j)] / q[i]).ln())
                    .sum()
            })
            .collect()
    };
    let mut iterations = 0;
    let mut converged = false;
    let (mut lower, mut upper);
    loop {
        let d = divergences(&p);
        lower = p.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>();
        upper = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if upper - lower < tol {
            converged = true;
            break;
        }
        if iterations >= MAX_ITER {
            break;
        }
        let dmax = upper;
        let mut z = 0.0;
        for (pj, dj) in p.iter_mut().zip(&d) {
            *pj *= (dj - dmax).exp();
            z += *pj;
        }
        p.iter_mut().for_each(|v| *v /= z);
        iterations += 1;
    }
    let shape = AlgebraShape::abelian(n);
    let states = (0..n)
        .map(|j| {
            let mut d = vec![0.0; n];
            d[j] = 1.0;
            State::new(Element::diagonal(&shape, &d)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let lower = lower.max(0.0);
    Ok(CapacityResult {
        value: lower,
        lower_bound: lower,
        upper_bound: upper.max(lower),
        best_ensemble: Ensemble::new(p, states)?,
        method: Method::BlahutArimoto,
        iterations,
        converged,
    })
}

/// Default sampling resolution for [`brute_force_capacity`] (10⁵ samples).
pub const DEFAULT_RESOLUTION: usize = 4;
pub const BRUTE_FORCE_MAX_SA_DIM: usize = 10;

/// Pure states on a grid: basis vectors and two-level superpositions
/// `cos θ e_k + sin θ ω e_l` with `θ, arg ω` on grids set by `resolution`.
fn grid_states(shape: &AlgebraShape, resolution: usize) -> Vec<(usize, Vec<C64>)> {
    let mut out = Vec::new();
    let angles = 2 * resolution;
    let phases = 2 * resolution;
    for (b, &n) in shape.blocks().iter().enumerate() {
        for k in 0..n {
            let mut v = vec![C64::new(0.0, 0.0); n];
            v[k] = C64::new(1.0, 0.0);
            out.push((b, v));
        }
        for k in 0..n {
            for l in (k + 1)..n {
                for ai in 1..angles {
                    let theta = std::f64::consts::FRAC_PI_2 * ai as f64 / angles as f64;
                    for ph in 0..phases {
                        let phi = std::f64::consts::TAU * ph as f64 / phases as f64;
                        let mut v = vec![C64::new(0.0, 0.0); n];
                        v[k] = C64::new(theta.cos(), 0.0);
                        v[l] = C64::from_polar(theta.sin(), phi);
                        out.push((b, v));
                    }
                }
            }
        }
    }
    out
}

/// Exhaustive pairs on a grid, random ensembles, then random local refinement of
/// the best one; a lower-bound oracle that shares no code path with the ascent
/// optimiser.
pub fn brute_force_capacity(map: &PtpuMap, resolution: usize, seed: u64) -> Result<CapacityResult> {
    let src = map.source();
    if src.sa_dim() > BRUTE_FORCE_MAX_SA_DIM {
        return Err(domain(format!(
            "brute force refuses saDim {} > {BRUTE_FORCE_MAX_SA_DIM}",
            src.sa_dim()
        )));
    }
    let resolution = resolution.max(1);
    let samples = 25_000 * resolution;
    let mut rng = rng_from_seed(seed);
    let mut pool = grid_states(src, resolution);
    let grid_len = pool.len();
    for _ in 0..200 * resolution {
        let b = rng.random_range(0..src.num_blocks());
        let n = src.blocks()[b];
        let v: Vec<C64> = (0..n)
            .map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        pool.push((b, v));
    }
    let target = map.target();
    let outs: Vec<DVector<f64>> = pool
        .iter()
        .map(|(b, v)| {
            let st = State::pure(src, *b, &DVector::from_vec(v.clone())).expect("nonzero vector");
            map.matrix() * to_coords(st.element())
        })
        .collect();
    let ents: Vec<f64> = outs.iter().map(|o| entropy_from_coords(target, o.as_slice())).collect();
    let chi_of = |members: &[(usize, f64)]| -> f64 {
        let mut avg = DVector::zeros(target.sa_dim());
        let mut inner = 0.0;
        for &(i, w) in members {
            avg.axpy(w, &outs[i], 1.0);
            inner += w * ents[i];
        }
        entropy_from_coords(target, avg.as_slice()) - inner
    };

    let mut best_val = 0.0;
    let mut best: Vec<(usize, f64)> = vec![(0, 1.0)];
    let mut count = 0usize;
    let consider = |members: Vec<(usize, f64)>, best_val: &mut f64, best: &mut Vec<(usize, f64)>| {
        let v = chi_of(&members);
        if v > *best_val {
            *best_val = v;
            *best = members;
        }
    };
    // exhaustive pairs of grid states with weights on a grid
    let wgrid = 2 * resolution;
    'pairs: for i in 0..grid_len {
        for j in (i + 1)..grid_len {
            for k in 1..wgrid {
                let w = k as f64 / wgrid as f64;
                consider(vec![(i, w), (j, 1.0 - w)], &mut best_val, &mut best);
                count += 1;
                if count >= samples * 2 / 5 {
                    break 'pairs;
                }
            }
        }
    }
    let cap = (src.sa_dim() + 1).min(4).max(2);
    while count < samples * 7 / 10 {
        let k = rng.random_range(2..=cap);
        let uniform = rng.random_bool(0.5);
        let mut members: Vec<(usize, f64)> = (0..k)
            .map(|_| {
                let w = if uniform { 1.0 } else { -rng.random::<f64>().max(1e-300).ln() };
                (rng.random_range(0..pool.len()), w)
            })
            .collect();
        let total: f64 = members.iter().map(|m| m.1).sum();
        members.iter_mut().for_each(|m| m.1 /= total);
        consider(members, &mut best_val, &mut best);
        count += 1;
    }

    // random local refinement of the incumbent with a shrinking perturbation scale
    let pure_output = |b: usize, v: &[C64]| -> DVector<f64> {
        let st = State::pure(src, b, &DVector::from_vec(v.to_vec())).expect("nonzero vector");
        map.matrix() * to_coords(st.element())
    };
    let mut members: Vec<(usize, Vec<C64>, f64)> = best.iter().map(|&(i, w)| (pool[i].0, pool[i].1.clone(), w)).collect();
    let mut member_outs: Vec<DVector<f64>> = best.iter().map(|&(i, _)| outs[i].clone()).collect();
    let mut member_ents: Vec<f64> = best.iter().map(|&(i, _)| ents[i]).collect();
    let chi_members = |outs: &[DVector<f64>], ents: &[f64], weights: &[f64]| -> f64 {
        let mut avg = DVector::zeros(target.sa_dim());
        let mut inner = 0.0;
        for ((o, e), w) in outs.iter().zip(ents).zip(weights) {
            avg.axpy(*w, o, 1.0);
            inner += w * e;
        }
        entropy_from_coords(target, avg.as_slice()) - inner
    };
    let refine = samples - count;
    let mut current = best_val;
    for step in 0..refine {
        let scale = 0.3 * (1e-4f64 / 0.3).powf(step as f64 / refine.max(1) as f64);
        let m = rng.random_range(0..members.len());
        let mut weights: Vec<f64> = members.iter().map(|x| x.2).collect();
        let (block, mut psi) = (members[m].0, members[m].1.clone());
        if rng.random_bool(0.5) {
            for z in psi.iter_mut() {
                *z += C64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)) * scale;
            }
        } else {
            for w in weights.iter_mut() {
                *w *= (scale * rng.sample::<f64, _>(StandardNormal)).exp();
            }
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
        }
        let out = pure_output(block, &psi);
        let ent = entropy_from_coords(target, out.as_slice());
        let old = (std::mem::replace(&mut member_outs[m], out), std::mem::replace(&mut member_ents[m], ent));
        let v = chi_members(&member_outs, &member_ents, &weights);
        if v > current {
            current = v;
            members[m].1 = psi;
            for (x, w) in members.iter_mut().zip(&weights) {
                x.2 = *w;
            }
        } else {
            member_outs[m] = old.0;
            member_ents[m] = old.1;
        }
        count += 1;
    }

    let states = members
        .iter()
        .map(|(b, v, _)| State::pure(src, *b, &DVector::from_vec(v.clone())))
        .collect::<Result<Vec<_>>>()?;
    let weights = members.iter().map(|m| m.2).collect();
    let ens = reduce_ensemble(map, weights, states)?;
    let value = holevo_chi(map, &ens)?.max(0.0);
    Ok(CapacityResult {
        value,
        lower_bound: value,
        upper_bound: (target.total_rank() as f64).ln(),
        best_ensemble: ens,
        method: Method::BruteForce,
        iterations: count,
        converged: true,
    })
}

/// Closed form `log 2 - h(p)` of the binary symmetric channel, in nats.
pub fn bsc_capacity(p: f64) -> f64 {
    LN_2 - eta(p) - eta(1.0 - p)
}

/// Entropy of a state's image under the map; convenience for reports.
pub fn output_entropy(map: &PtpuMap, a: &State) -> Result<f64> {
    entropy(&map.apply(a.element())?)
}
