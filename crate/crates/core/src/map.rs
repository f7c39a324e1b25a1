//! Positive unital trace-preserving maps stored as real superoperator matrices
//! on the hermitian bases of source and target.
//!
//! Positivity cannot be decided in general, so every map carries a
//! [`Certificate`] describing how it was built. Everything except
//! `UserAsserted` is completely positive by construction.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::algebra::{
    derive_seed, random_state_with, rng_from_seed, AlgebraShape, Corner, Element, C64, PROJECTION_TOL,
};
use crate::basis::{coords_split, from_coords, to_coords, unit_coords, HermitianBasis};
use crate::error::{domain, structural, Error, Result};

pub const UNITAL_TOL: f64 = 1e-9;
pub const SPOT_CHECK_TOL: f64 = 1e-8;
pub const SPOT_CHECK_SAMPLES: usize = 200;
const SPOT_CHECK_SEED: u64 = 0x5EED_0F_5EED;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Certificate {
    Pinching,
    UnitaryConjugation,
    DepolarizeCorner,
    ClassicalStochastic,
    Composition,
    DirectSum,
    Tensor,
    ConvexCombination,
    UserAsserted,
}

impl Certificate {
    /// Completely positive by construction.
    pub fn is_cp(self) -> bool {
        self != Certificate::UserAsserted
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Certificate::Pinching => "Pinching",
            Certificate::UnitaryConjugation => "UnitaryConjugation",
            Certificate::DepolarizeCorner => "DepolarizeCorner",
            Certificate::ClassicalStochastic => "ClassicalStochastic",
            Certificate::Composition => "Composition",
            Certificate::DirectSum => "DirectSum",
            Certificate::Tensor => "Tensor",
            Certificate::ConvexCombination => "ConvexCombination",
            Certificate::UserAsserted => "UserAsserted",
        }
    }

    /// Certificate of a map built from `inputs`: unverified positivity is sticky.
    fn combine(tag: Certificate, inputs: &[&PtpuMap]) -> Certificate {
        if inputs.iter().any(|m| !m.certificate.is_cp()) {
            Certificate::UserAsserted
        } else {
            tag
        }
    }
}

impl fmt::Display for Certificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A positive unital trace-preserving map `Φ: M → P`.
#[derive(Clone, Debug, PartialEq)]
pub struct PtpuMap {
    source: AlgebraShape,
    target: AlgebraShape,
    /// `saDim(target) × saDim(source)`; entry `(j, i)` is `⟨b'_j, Φ(b_i)⟩`.
    matrix: DMatrix<f64>,
    certificate: Certificate,
    name: String,
}

impl PtpuMap {
    /// Validate and wrap a superoperator matrix.
    pub fn new(
        source: AlgebraShape,
        target: AlgebraShape,
        matrix: DMatrix<f64>,
        certificate: Certificate,
        name: impl Into<String>,
    ) -> Result<Self> {
        let map = PtpuMap { source, target, matrix, certificate, name: name.into() };
        map.validate()?;
        Ok(map)
    }

    /// Build the superoperator of a linear action given on hermitian inputs.
    pub fn from_action(
        source: &AlgebraShape,
        target: &AlgebraShape,
        certificate: Certificate,
        name: impl Into<String>,
        action: impl Fn(&Element) -> Result<Element>,
    ) -> Result<Self> {
        let basis = HermitianBasis::new(source);
        let mut matrix = DMatrix::zeros(target.sa_dim(), source.sa_dim());
        for (i, b) in basis.elements().iter().enumerate() {
            let out = action(b)?;
            if out.shape() != target {
                return Err(structural("action produced an element of the wrong shape"));
            }
            matrix.set_column(i, &coords_split(&out).0);
        }
        PtpuMap::new(source.clone(), target.clone(), matrix, certificate, name)
    }

    fn validate(&self) -> Result<()> {
        let (rows, cols) = self.matrix.shape();
        if rows != self.target.sa_dim() || cols != self.source.sa_dim() {
            return Err(structural(format!(
                "superoperator is {rows}x{cols}, shapes {} -> {} need {}x{}",
                self.source,
                self.target,
                self.target.sa_dim(),
                self.source.sa_dim()
            )));
        }
        if self.matrix.iter().any(|v| !v.is_finite()) {
            return Err(domain("superoperator has non-finite entries"));
        }
        if self.source.total_rank() != self.target.total_rank() {
            return Err(structural(format!(
                "unital trace-preserving maps need equal total rank ({} vs {})",
                self.source.total_rank(),
                self.target.total_rank()
            )));
        }
        let one_src = unit_coords(&self.source);
        let one_tgt = unit_coords(&self.target);
        let unital_err = (&self.matrix * &one_src - &one_tgt).amax();
        if unital_err > UNITAL_TOL {
            return Err(domain(format!("not unital: |Φ(1) - 1| = {unital_err:e}")));
        }
        // Tr Φ(b_i) = ⟨1, Φ(b_i)⟩ must equal Tr b_i = ⟨1, b_i⟩
        let tp_err = (self.matrix.tr_mul(&one_tgt) - &one_src).amax();
        if tp_err > UNITAL_TOL {
            return Err(domain(format!("not trace preserving: deviation {tp_err:e}")));
        }
        let mut rng = rng_from_seed(SPOT_CHECK_SEED);
        for k in 0..SPOT_CHECK_SAMPLES {
            let s = random_state_with(&self.source, &mut rng);
            let out = self.apply_hermitian_coords(&to_coords(s.element()));
            let img = from_coords(&self.target, &out);
            let min = img.eigenvalues()?.into_iter().fold(f64::INFINITY, f64::min);
            if min < -SPOT_CHECK_TOL {
                return Err(domain(format!(
                    "positivity spot-check failed on sample {k}: eigenvalue {min:e}"
                )));
            }
        }
        Ok(())
    }

    pub fn source(&self) -> &AlgebraShape {
        &self.source
    }

    pub fn target(&self) -> &AlgebraShape {
        &self.target
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn certificate(&self) -> Certificate {
        self.certificate
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn positivity_verified(&self) -> bool {
        self.certificate.is_cp()
    }

    pub(crate) fn apply_hermitian_coords(&self, c: &DVector<f64>) -> DVector<f64> {
        &self.matrix * c
    }

    /// `Φ(x)`; non-hermitian inputs are split into hermitian parts.
    pub fn apply(&self, x: &Element) -> Result<Element> {
        if x.shape() != &self.source {
            return Err(structural(format!(
                "map expects shape {}, got {}",
                self.source,
                x.shape()
            )));
        }
        let (re, im) = coords_split(x);
        let h = from_coords(&self.target, &(&self.matrix * re));
        if x.is_hermitian() {
            return Ok(h);
        }
        let k = from_coords(&self.target, &(&self.matrix * im));
        h.add(&k.scale_complex(C64::new(0.0, 1.0)))
    }

    pub fn identity(shape: &AlgebraShape) -> Self {
        let d = shape.sa_dim();
        PtpuMap {
            source: shape.clone(),
            target: shape.clone(),
            matrix: DMatrix::identity(d, d),
            certificate: Certificate::Pinching,
            name: format!("id:{shape}"),
        }
    }

    /// `x ↦ Σ p_i x p_i` for a partition of unity `{p_i}`.
    pub fn pinching(shape: &AlgebraShape, projections: &[Element]) -> Result<Self> {
        check_partition(shape, projections, PROJECTION_TOL)?;
        PtpuMap::from_action(shape, shape, Certificate::Pinching, format!("pinch:{shape}"), |x| {
            let mut acc = Element::zeros(shape);
            for p in projections {
                acc = acc.add(&p.mul(x)?.mul(p)?)?;
            }
            Ok(acc)
        })
    }

    /// Pinching by consecutive groups of diagonal positions.
    pub fn diagonal_pinching(shape: &AlgebraShape, group_sizes: &[usize]) -> Result<Self> {
        let projections = diagonal_groups(shape, group_sizes)?;
        Ok(PtpuMap::pinching(shape, &projections)?.with_name(format!(
            "pinch:{shape};blocks={}",
            group_sizes.iter().map(|g| g.to_string()).collect::<Vec<_>>().join(",")
        )))
    }

    /// `x ↦ u x u*`.
    pub fn unitary_conjugation(shape: &AlgebraShape, u: &Element) -> Result<Self> {
        if u.shape() != shape {
            return Err(structural("unitary does not match the shape"));
        }
        let uu = u.adjoint().mul(u)?;
        if uu.max_abs_diff(&Element::identity(shape)) > 1e-10 {
            return Err(domain("conjugating element is not unitary"));
        }
        let uadj = u.adjoint();
        PtpuMap::from_action(shape, shape, Certificate::UnitaryConjugation, format!("unitary:{shape}"), |x| {
            Ok(u.mul(x)?.mul(&uadj)?.hermitian_parts().0)
        })
    }

    /// `x ↦ (1-e)x(1-e) + Tr(exe) e / Tr(e)`.
    pub fn depolarize_corner(shape: &AlgebraShape, e: &Element) -> Result<Self> {
        if e.shape() != shape || !e.is_projection(PROJECTION_TOL) {
            return Err(domain("depolarizing corner needs a projection of the same shape"));
        }
        let tr_e = e.trace().re;
        if tr_e < 0.5 {
            return Err(domain("depolarizing corner needs a nonzero projection"));
        }
        let comp = Element::identity(shape).sub(e)?;
        PtpuMap::from_action(shape, shape, Certificate::DepolarizeCorner, format!("depol:{shape}"), |x| {
            let outside = comp.mul(x)?.mul(&comp)?;
            let inside = e.mul(x)?.mul(e)?.trace().re;
            outside.add(&e.scale(inside / tr_e))
        })
    }

    /// Full depolarizing map `x ↦ Tr(x) 1 / totalRank`.
    pub fn depolarize(shape: &AlgebraShape) -> Self {
        PtpuMap::depolarize_corner(shape, &Element::identity(shape))
            .expect("unit is a projection")
    }

    /// Doubly stochastic `T` acting on the abelian algebra `ℂ^t`: `p ↦ T p`.
    pub fn classical_stochastic(t: &DMatrix<f64>) -> Result<Self> {
        check_doubly_stochastic(t)?;
        let shape = AlgebraShape::abelian(t.nrows());
        PtpuMap::new(shape.clone(), shape, t.clone(), Certificate::ClassicalStochastic, "dstoch")
    }

    /// `Σ w_j Φ_j` for weights on the simplex.
    pub fn convex_combination(terms: &[(f64, PtpuMap)]) -> Result<Self> {
        let (_, first) = terms.first().ok_or_else(|| domain("empty convex combination"))?;
        let total: f64 = terms.iter().map(|(w, _)| *w).sum();
        if terms.iter().any(|(w, _)| *w < 0.0) || (total - 1.0).abs() > 1e-10 {
            return Err(domain("convex weights must be nonnegative and sum to 1"));
        }
        let mut matrix = DMatrix::zeros(first.matrix.nrows(), first.matrix.ncols());
        for (w, m) in terms {
            if m.source != first.source || m.target != first.target {
                return Err(structural("convex combination of maps with different shapes"));
            }
            matrix += &m.matrix * *w;
        }
        let maps: Vec<&PtpuMap> = terms.iter().map(|(_, m)| m).collect();
        let cert = Certificate::combine(Certificate::ConvexCombination, &maps);
        PtpuMap::new(first.source.clone(), first.target.clone(), matrix, cert, "mix")
    }

    pub fn compose(&self, inner: &PtpuMap) -> Result<Self> {
        compose_maps(self, inner)
    }

    /// The adjoint with respect to the Hilbert–Schmidt pairing.
    pub fn adjoint(&self) -> Result<Self> {
        PtpuMap::new(
            self.target.clone(),
            self.source.clone(),
            self.matrix.transpose(),
            self.certificate,
            format!("adjoint({})", self.name),
        )
    }

    /// True when all outputs coincide, i.e. the traceless part is annihilated.
    pub fn is_constant(&self, tol: f64) -> bool {
        let one = unit_coords(&self.source) / (self.source.total_rank() as f64).sqrt();
        let projected = &self.matrix - (&self.matrix * &one) * one.transpose();
        projected.amax() <= tol
    }

    /// The inclusion of a block-diagonal subalgebra `⊕ e_i M e_i` into `M`.
    pub fn corner_inclusion(corners: &[Corner]) -> Result<Self> {
        let ambient = corners.first().ok_or_else(|| domain("no corners"))?.ambient().clone();
        let mut dims = Vec::new();
        for c in corners {
            if c.ambient() != &ambient {
                return Err(structural("corners live in different algebras"));
            }
            dims.extend_from_slice(c.shape().blocks());
        }
        let source = AlgebraShape::new(dims)?;
        PtpuMap::from_action(&source, &ambient, Certificate::Composition, "inclusion", |x| {
            let mut acc = Element::zeros(&ambient);
            let mut start = 0;
            for c in corners {
                let k = c.shape().num_blocks();
                let part = Element::from_blocks(c.shape().clone(), x.blocks()[start..start + k].to_vec())?;
                acc = acc.add(&c.embed(&part)?)?;
                start += k;
            }
            Ok(acc)
        })
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<Vec<f64>> = (0..self.matrix.nrows())
            .map(|r| self.matrix.row(r).iter().copied().collect())
            .collect();
        serde_json::json!({
            "source": self.source.blocks(),
            "target": self.target.blocks(),
            "matrix": rows,
            "certificate": self.certificate.as_str(),
            "name": self.name,
        })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        #[derive(Deserialize)]
        struct Raw {
            source: AlgebraShape,
            target: AlgebraShape,
            matrix: Vec<Vec<f64>>,
            certificate: Certificate,
            #[serde(default)]
            name: String,
        }
        let raw: Raw =
            serde_json::from_value(v.clone()).map_err(|e| structural(format!("map JSON: {e}")))?;
        let rows = raw.matrix.len();
        let cols = raw.matrix.first().map_or(0, |r| r.len());
        if raw.matrix.iter().any(|r| r.len() != cols) {
            return Err(structural("map JSON: ragged matrix"));
        }
        let matrix = DMatrix::from_fn(rows, cols, |r, c| raw.matrix[r][c]);
        PtpuMap::new(raw.source, raw.target, matrix, raw.certificate, raw.name)
    }
}

/// `Φ ∘ Ψ`; requires `Ψ.target = Φ.source`.
pub fn compose_maps(outer: &PtpuMap, inner: &PtpuMap) -> Result<PtpuMap> {
    if inner.target != outer.source {
        return Err(structural(format!(
            "cannot compose: inner target {} differs from outer source {}",
            inner.target, outer.source
        )));
    }
    PtpuMap::new(
        inner.source.clone(),
        outer.target.clone(),
        &outer.matrix * &inner.matrix,
        Certificate::combine(Certificate::Composition, &[outer, inner]),
        format!("compose({},{})", outer.name, inner.name),
    )
}

/// `Φ ⊕ Ψ` on `M ⊕ N → P ⊕ Q`.
pub fn direct_sum(a: &PtpuMap, b: &PtpuMap) -> Result<PtpuMap> {
    let (ra, ca) = a.matrix.shape();
    let (rb, cb) = b.matrix.shape();
    let mut matrix = DMatrix::zeros(ra + rb, ca + cb);
    matrix.view_mut((0, 0), (ra, ca)).copy_from(&a.matrix);
    matrix.view_mut((ra, ca), (rb, cb)).copy_from(&b.matrix);
    PtpuMap::new(
        a.source.direct_sum(&b.source),
        a.target.direct_sum(&b.target),
        matrix,
        Certificate::combine(Certificate::DirectSum, &[a, b]),
        format!("dsum({},{})", a.name, b.name),
    )
}

/// `Φ ⊗ Ψ`. Only defined for completely positive factors, since positivity of
/// a tensor product of merely positive maps is not certified.
pub fn tensor_product(a: &PtpuMap, b: &PtpuMap) -> Result<PtpuMap> {
    if !a.certificate.is_cp() || !b.certificate.is_cp() {
        return Err(Error::Certificate("positivity of tensor not certified".into()));
    }
    // images of all matrix units, computed once per factor
    let units = |m: &PtpuMap| -> Result<Vec<Vec<Vec<Element>>>> {
        m.source
            .blocks()
            .iter()
            .enumerate()
            .map(|(blk, &n)| {
                (0..n)
                    .map(|r| {
                        (0..n)
                            .map(|c| m.apply(&Element::matrix_unit(&m.source, blk, r, c)))
                            .collect()
                    })
                    .collect()
            })
            .collect()
    };
    let ua = units(a)?;
    let ub = units(b)?;
    let source = a.source.tensor(&b.source);
    let target = a.target.tensor(&b.target);
    let nb = b.source.num_blocks();
    let name = format!("tensor({},{})", a.name, b.name);
    PtpuMap::from_action(&source, &target, Certificate::Tensor, name, |x| {
        let mut acc = Element::zeros(&target);
        for (blk, m) in x.blocks().iter().enumerate() {
            let (i, j) = (blk / nb, blk % nb);
            let mdim = b.source.blocks()[j];
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    let v = m[(r, c)];
                    if v.norm() == 0.0 {
                        continue;
                    }
                    let term = ua[i][r / mdim][c / mdim].kron(&ub[j][r % mdim][c % mdim]);
                    acc = acc.add(&term.scale_complex(v))?;
                }
            }
        }
        Ok(acc.hermitian_parts().0)
    })
}

/// Checks that `{p_i}` are mutually orthogonal projections summing to 1.
pub fn check_partition(shape: &AlgebraShape, projections: &[Element], tol: f64) -> Result<()> {
    if projections.is_empty() {
        return Err(domain("not a partition: no projections"));
    }
    let mut sum = Element::zeros(shape);
    for (i, p) in projections.iter().enumerate() {
        if p.shape() != shape {
            return Err(structural("partition element has the wrong shape"));
        }
        if !p.is_projection(tol) {
            return Err(domain(format!("not a partition: element {i} is not a projection")));
        }
        for q in &projections[i + 1..] {
            if p.mul(q)?.max_abs_diff(&Element::zeros(shape)) > tol {
                return Err(domain("not a partition: projections are not orthogonal"));
            }
        }
        sum = sum.add(p)?;
    }
    if sum.max_abs_diff(&Element::identity(shape)) > tol {
        return Err(domain("not a partition: projections do not sum to 1"));
    }
    Ok(())
}

/// Diagonal projections onto consecutive groups of the concatenated diagonal.
pub fn diagonal_groups(shape: &AlgebraShape, group_sizes: &[usize]) -> Result<Vec<Element>> {
    if group_sizes.iter().sum::<usize>() != shape.total_rank() || group_sizes.contains(&0) {
        return Err(domain(format!(
            "group sizes {group_sizes:?} do not partition the diagonal of {shape}"
        )));
    }
    let mut out = Vec::new();
    let mut pos = 0;
    for &g in group_sizes {
        let mut diag = vec![0.0; shape.total_rank()];
        for d in diag.iter_mut().skip(pos).take(g) {
            *d = 1.0;
        }
        out.push(Element::diagonal(shape, &diag)?);
        pos += g;
    }
    Ok(out)
}

pub fn check_doubly_stochastic(t: &DMatrix<f64>) -> Result<()> {
    if t.nrows() != t.ncols() || t.nrows() == 0 {
        return Err(domain("stochastic matrix must be square and nonempty"));
    }
    if t.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(domain("not doubly stochastic: negative or non-finite entry"));
    }
    for k in 0..t.nrows() {
        if (t.row(k).sum() - 1.0).abs() > 1e-10 {
            return Err(domain(format!("not doubly stochastic: row {k} does not sum to 1")));
        }
        if (t.column(k).sum() - 1.0).abs() > 1e-10 {
            return Err(domain(format!("not doubly stochastic: column {k} does not sum to 1")));
        }
    }
    Ok(())
}

/// A random completely positive PTPU map on `shape`: a convex combination of
/// unitary conjugations, a pinching and a depolarizing corner.
pub fn random_cp_map(shape: &AlgebraShape, seed: u64) -> Result<PtpuMap> {
    use rand::Rng;
    let mut rng = rng_from_seed(seed);
    let mut terms = Vec::new();
    let mut weights: Vec<f64> = (0..4).map(|_| rng.random::<f64>() + 0.05).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    for (k, w) in weights.iter().take(2).enumerate() {
        let u = crate::algebra::random_unitary(shape, derive_seed(seed, k as u64));
        terms.push((*w, PtpuMap::unitary_conjugation(shape, &u)?));
    }
    let groups: Vec<usize> = vec![1; shape.total_rank()];
    terms.push((weights[2], PtpuMap::diagonal_pinching(shape, &groups)?));
    let mut diag = vec![0.0; shape.total_rank()];
    diag[0] = 1.0;
    terms.push((weights[3], PtpuMap::depolarize_corner(shape, &Element::diagonal(shape, &diag)?)?));
    Ok(PtpuMap::convex_combination(&terms)?.with_name("random"))
}
