//! Finite-dimensional C*-algebras `M_{n_1} ⊕ ... ⊕ M_{n_k}` and their elements.
//!
//! Elements are stored block by block as dense complex matrices. The trace is
//! the unnormalised one (value 1 on every minimal projection), i.e. the sum of
//! the ordinary matrix traces of the blocks.

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, structural, Error, Result};

pub type C64 = Complex64;

/// Entrywise tolerance used to decide hermiticity.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Eigenvalues above this (negative) threshold are clamped to zero before `η`.
pub const POSITIVITY_TOL: f64 = 1e-10;
/// Eigenvalues closer than this are grouped into one spectral projection.
pub const DEGENERACY_TOL: f64 = 1e-8;
pub const PROJECTION_TOL: f64 = 1e-9;

pub(crate) fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mix a base seed with a stream index.
pub(crate) fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `η(t) = -t log t`, with `η(0) = 0`.
pub fn eta(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        -t * t.ln()
    }
}

/// The block structure `[n_1, ..., n_k]` of a finite-dimensional C*-algebra.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct AlgebraShape(Vec<usize>);

impl AlgebraShape {
    pub fn new(blocks: Vec<usize>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(structural("algebra shape needs at least one block"));
        }
        if blocks.iter().any(|&n| n == 0) {
            return Err(structural("block dimensions must be positive"));
        }
        Ok(AlgebraShape(blocks))
    }

    /// The full matrix algebra `M_n`.
    pub fn full(n: usize) -> Self {
        AlgebraShape(vec![n.max(1)])
    }

    /// The abelian algebra `ℂ^t`.
    pub fn abelian(t: usize) -> Self {
        AlgebraShape(vec![1; t.max(1)])
    }

    pub fn blocks(&self) -> &[usize] {
        &self.0
    }

    pub fn num_blocks(&self) -> usize {
        self.0.len()
    }

    /// Trace of the unit.
    pub fn total_rank(&self) -> usize {
        self.0.iter().sum()
    }

    /// Real dimension of the self-adjoint part.
    pub fn sa_dim(&self) -> usize {
        self.0.iter().map(|n| n * n).sum()
    }

    pub fn is_abelian(&self) -> bool {
        self.0.iter().all(|&n| n == 1)
    }

    /// Offset of each block in the self-adjoint coordinate vector.
    pub fn sa_offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.0
            .iter()
            .map(|n| {
                let o = acc;
                acc += n * n;
                o
            })
            .collect()
    }

    /// `[n_i] ⊗ [m_j] = [n_i m_j]`, `i` outer and `j` inner.
    pub fn tensor(&self, other: &AlgebraShape) -> AlgebraShape {
        let mut out = Vec::with_capacity(self.0.len() * other.0.len());
        for n in &self.0 {
            for m in &other.0 {
                out.push(n * m);
            }
        }
        AlgebraShape(out)
    }

    pub fn direct_sum(&self, other: &AlgebraShape) -> AlgebraShape {
        let mut out = self.0.clone();
        out.extend_from_slice(&other.0);
        AlgebraShape(out)
    }

    /// Locate a position of the concatenated diagonal: `(block, index in block)`.
    pub fn locate_diagonal(&self, mut pos: usize) -> Option<(usize, usize)> {
        for (b, &n) in self.0.iter().enumerate() {
            if pos < n {
                return Some((b, pos));
            }
            pos -= n;
        }
        None
    }
}

impl TryFrom<Vec<usize>> for AlgebraShape {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        AlgebraShape::new(v)
    }
}

impl From<AlgebraShape> for Vec<usize> {
    fn from(s: AlgebraShape) -> Vec<usize> {
        s.0
    }
}

impl fmt::Display for AlgebraShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, n) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{n}")?;
        }
        write!(f, "]")
    }
}

/// A block-diagonal complex matrix over an [`AlgebraShape`].
#[derive(Clone, Debug, PartialEq)]
pub struct Element {
    shape: AlgebraShape,
    blocks: Vec<DMatrix<C64>>,
    hermitian: bool,
}

fn block_is_hermitian(m: &DMatrix<C64>) -> bool {
    let n = m.nrows();
    for i in 0..n {
        for j in i..n {
            if (m[(i, j)] - m[(j, i)].conj()).norm() > HERMITIAN_TOL {
                return false;
            }
        }
    }
    true
}

impl Element {
    pub fn from_blocks(shape: AlgebraShape, blocks: Vec<DMatrix<C64>>) -> Result<Self> {
        if blocks.len() != shape.num_blocks() {
            return Err(structural(format!(
                "expected {} blocks for shape {}, got {}",
                shape.num_blocks(),
                shape,
                blocks.len()
            )));
        }
        for (b, (m, &n)) in blocks.iter().zip(shape.blocks()).enumerate() {
            if m.nrows() != n || m.ncols() != n {
                return Err(structural(format!(
                    "block {b} is {}x{}, shape requires {n}x{n}",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        let hermitian = blocks.iter().all(block_is_hermitian);
        Ok(Element { shape, blocks, hermitian })
    }

    pub(crate) fn from_blocks_unchecked(shape: AlgebraShape, blocks: Vec<DMatrix<C64>>) -> Self {
        let hermitian = blocks.iter().all(block_is_hermitian);
        Element { shape, blocks, hermitian }
    }

    pub fn zeros(shape: &AlgebraShape) -> Self {
        let blocks = shape.blocks().iter().map(|&n| DMatrix::zeros(n, n)).collect();
        Element { shape: shape.clone(), blocks, hermitian: true }
    }

    pub fn identity(shape: &AlgebraShape) -> Self {
        let blocks = shape.blocks().iter().map(|&n| DMatrix::identity(n, n)).collect();
        Element { shape: shape.clone(), blocks, hermitian: true }
    }

    /// The maximally mixed state `1 / totalRank` as an element.
    pub fn maximally_mixed(shape: &AlgebraShape) -> Self {
        Element::identity(shape).scale(1.0 / shape.total_rank() as f64)
    }

    /// Diagonal element from the concatenated diagonal.
    pub fn diagonal(shape: &AlgebraShape, diag: &[f64]) -> Result<Self> {
        if diag.len() != shape.total_rank() {
            return Err(structural(format!(
                "diagonal of length {} does not fit shape {}",
                diag.len(),
                shape
            )));
        }
        let mut out = Element::zeros(shape);
        for (pos, &d) in diag.iter().enumerate() {
            let (b, k) = shape.locate_diagonal(pos).expect("position in range");
            out.blocks[b][(k, k)] = C64::new(d, 0.0);
        }
        Ok(out)
    }

    /// Matrix unit `E_{rc}` inside block `block`.
    pub fn matrix_unit(shape: &AlgebraShape, block: usize, r: usize, c: usize) -> Self {
        let mut out = Element::zeros(shape);
        out.blocks[block][(r, c)] = C64::new(1.0, 0.0);
        out.hermitian = r == c;
        out
    }

    /// Element for a single-block shape.
    pub fn from_matrix(m: DMatrix<C64>) -> Result<Self> {
        let n = m.nrows();
        Element::from_blocks(AlgebraShape::new(vec![n])?, vec![m])
    }

    pub fn shape(&self) -> &AlgebraShape {
        &self.shape
    }

    pub fn blocks(&self) -> &[DMatrix<C64>] {
        &self.blocks
    }

    pub fn block(&self, b: usize) -> &DMatrix<C64> {
        &self.blocks[b]
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    fn check_same_shape(&self, other: &Element) -> Result<()> {
        if self.shape != other.shape {
            return Err(structural(format!(
                "shape mismatch: {} vs {}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    fn zip_blocks(&self, other: &Element, f: impl Fn(&DMatrix<C64>, &DMatrix<C64>) -> DMatrix<C64>) -> Result<Element> {
        self.check_same_shape(other)?;
        let blocks = self.blocks.iter().zip(&other.blocks).map(|(a, b)| f(a, b)).collect();
        Ok(Element::from_blocks_unchecked(self.shape.clone(), blocks))
    }

    pub fn add(&self, other: &Element) -> Result<Element> {
        self.zip_blocks(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Element) -> Result<Element> {
        self.zip_blocks(other, |a, b| a - b)
    }

    /// Algebra product.
    pub fn mul(&self, other: &Element) -> Result<Element> {
        self.zip_blocks(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Element {
        let blocks = self.blocks.iter().map(|m| m * C64::new(s, 0.0)).collect();
        Element { shape: self.shape.clone(), blocks, hermitian: self.hermitian }
    }

    pub fn scale_complex(&self, s: C64) -> Element {
        let blocks = self.blocks.iter().map(|m| m * s).collect();
        Element::from_blocks_unchecked(self.shape.clone(), blocks)
    }

    pub fn adjoint(&self) -> Element {
        let blocks = self.blocks.iter().map(|m| m.adjoint()).collect();
        Element { shape: self.shape.clone(), blocks, hermitian: self.hermitian }
    }

    pub fn trace(&self) -> C64 {
        self.blocks.iter().map(|m| m.trace()).sum()
    }

    /// Hilbert–Schmidt norm `sqrt(Tr(x* x))`.
    pub fn hs_norm(&self) -> f64 {
        self.blocks.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt()
    }

    /// Hermitian part `(x + x*) / 2` and anti-hermitian part `(x - x*) / 2i`,
    /// so that `x = h + i k` with both hermitian.
    pub fn hermitian_parts(&self) -> (Element, Element) {
        let mut h = Vec::with_capacity(self.blocks.len());
        let mut k = Vec::with_capacity(self.blocks.len());
        for m in &self.blocks {
            let adj = m.adjoint();
            h.push((m + &adj) * C64::new(0.5, 0.0));
            k.push((m - &adj) * C64::new(0.0, -0.5));
        }
        (
            Element { shape: self.shape.clone(), blocks: h, hermitian: true },
            Element { shape: self.shape.clone(), blocks: k, hermitian: true },
        )
    }

    /// Tensor product; block `(i, j)` of the result is `x_i ⊗ y_j`.
    pub fn kron(&self, other: &Element) -> Element {
        let shape = self.shape.tensor(&other.shape);
        let mut blocks = Vec::with_capacity(shape.num_blocks());
        for a in &self.blocks {
            for b in &other.blocks {
                blocks.push(a.kronecker(b));
            }
        }
        Element { shape, blocks, hermitian: self.hermitian && other.hermitian }
    }

    /// `e² = e = e*` within `tol` (entrywise maximum).
    pub fn is_projection(&self, tol: f64) -> bool {
        if !self.hermitian {
            return false;
        }
        self.blocks.iter().all(|m| {
            let sq = m * m;
            (sq - m).iter().all(|z| z.norm() <= tol)
        })
    }

    /// Largest entrywise deviation from another element of the same shape.
    pub fn max_abs_diff(&self, other: &Element) -> f64 {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()))
            .fold(0.0, f64::max)
    }

    /// Eigenvalues of a hermitian element, all blocks pooled, unsorted.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        if !self.hermitian {
            return Err(structural("eigenvalues requested for a non-hermitian element"));
        }
        let mut out = Vec::with_capacity(self.shape.total_rank());
        for m in &self.blocks {
            out.extend(hermitian_eigenvalues(m));
        }
        Ok(out)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let blocks: Vec<Vec<[f64; 2]>> = self
            .blocks
            .iter()
            .map(|m| {
                let n = m.nrows();
                let mut row_major = Vec::with_capacity(n * n);
                for r in 0..n {
                    for c in 0..n {
                        let z = m[(r, c)];
                        row_major.push([z.re, z.im]);
                    }
                }
                row_major
            })
            .collect();
        serde_json::json!({ "shape": self.shape.blocks(), "blocks": blocks })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        #[derive(Deserialize)]
        struct Raw {
            shape: Vec<usize>,
            blocks: Vec<Vec<[f64; 2]>>,
        }
        let raw: Raw = serde_json::from_value(v.clone()).map_err(|e| structural(format!("element JSON: {e}")))?;
        let shape = AlgebraShape::new(raw.shape)?;
        if raw.blocks.len() != shape.num_blocks() {
            return Err(structural("element JSON: block count does not match shape"));
        }
        let mut blocks = Vec::with_capacity(raw.blocks.len());
        for (entries, &n) in raw.blocks.iter().zip(shape.blocks()) {
            if entries.len() != n * n {
                return Err(structural(format!("element JSON: block of size {n} needs {} entries", n * n)));
            }
            blocks.push(DMatrix::from_fn(n, n, |r, c| {
                let [re, im] = entries[r * n + c];
                C64::new(re, im)
            }));
        }
        Element::from_blocks(shape, blocks)
    }
}

/// Hilbert–Schmidt pairing `Tr(x* y)`.
pub fn hs_inner(x: &Element, y: &Element) -> Result<C64> {
    x.check_same_shape(y)?;
    Ok(x.blocks
        .iter()
        .zip(&y.blocks)
        .map(|(a, b)| a.iter().zip(b.iter()).map(|(p, q)| p.conj() * q).sum::<C64>())
        .sum())
}

/// Eigenvalues of a hermitian matrix (closed form for sizes 1 and 2).
pub(crate) fn hermitian_eigenvalues(m: &DMatrix<C64>) -> Vec<f64> {
    match m.nrows() {
        0 => vec![],
        1 => vec![m[(0, 0)].re],
        2 => {
            let a = m[(0, 0)].re;
            let d = m[(1, 1)].re;
            let b = m[(0, 1)];
            let mean = 0.5 * (a + d);
            let rad = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
            vec![mean + rad, mean - rad]
        }
        _ => m.symmetric_eigenvalues().iter().copied().collect(),
    }
}

/// Eigenpairs of a hermitian matrix; eigenvectors are the columns.
pub(crate) fn hermitian_eigh(m: &DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
    let eig = SymmetricEigen::new(m.clone());
    (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
}

/// Sum of `η` over a list of eigenvalues, after clamping.
pub(crate) fn entropy_of_eigenvalues(eigs: &[f64]) -> Result<f64> {
    let mut s = 0.0;
    for &l in eigs {
        if l < -POSITIVITY_TOL {
            return Err(domain(format!("not positive: eigenvalue {l:e}")));
        }
        s += eta(l.max(0.0));
    }
    Ok(s)
}

/// Von Neumann entropy `Tr(η(a))` in nats with respect to the unnormalised trace.
pub fn entropy(a: &Element) -> Result<f64> {
    entropy_of_eigenvalues(&a.eigenvalues()?)
}

/// Spectral resolution `a = Σ λ_j p_j` with eigenvalues sorted descending.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub projectors: Vec<Element>,
}

impl Spectrum {
    pub fn reconstruct(&self) -> Element {
        let shape = self.projectors[0].shape().clone();
        self.eigenvalues
            .iter()
            .zip(&self.projectors)
            .fold(Element::zeros(&shape), |acc, (&l, p)| {
                acc.add(&p.scale(l)).expect("projectors share a shape")
            })
    }
}

pub fn spectral_decompose(a: &Element) -> Result<Spectrum> {
    spectral_decompose_with(a, DEGENERACY_TOL)
}

/// Like [`spectral_decompose`] with an explicit degeneracy tolerance.
pub fn spectral_decompose_with(a: &Element, tol: f64) -> Result<Spectrum> {
    if !a.is_hermitian() {
        return Err(structural("spectral decomposition of a non-hermitian element"));
    }
    // (eigenvalue, block, eigenvector)
    let mut pairs: Vec<(f64, usize, DVector<C64>)> = Vec::new();
    for (b, m) in a.blocks().iter().enumerate() {
        let (vals, vecs) = hermitian_eigh(m);
        for (k, &l) in vals.iter().enumerate() {
            pairs.push((l, b, vecs.column(k).into_owned()));
        }
    }
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));

    let shape = a.shape().clone();
    let mut eigenvalues = Vec::new();
    let mut projectors: Vec<Element> = Vec::new();
    let mut group_sum = 0.0;
    let mut group_len = 0usize;
    let mut prev = f64::NAN;
    for (l, b, v) in pairs {
        if group_len == 0 || (prev - l).abs() > tol {
            if group_len > 0 {
                eigenvalues.push(group_sum / group_len as f64);
            }
            projectors.push(Element::zeros(&shape));
            group_sum = 0.0;
            group_len = 0;
        }
        let p = projectors.last_mut().expect("group opened above");
        p.blocks[b] += &v * v.adjoint();
        group_sum += l;
        group_len += 1;
        prev = l;
    }
    if group_len > 0 {
        eigenvalues.push(group_sum / group_len as f64);
    }
    for p in &mut projectors {
        p.hermitian = true;
        for m in &mut p.blocks {
            // exact hermitian symmetrisation of accumulated outer products
            let adj = m.adjoint();
            *m = (&*m + adj) * C64::new(0.5, 0.0);
        }
    }
    Ok(Spectrum { eigenvalues, projectors })
}

/// A positive element of unit trace.
#[derive(Clone, Debug, PartialEq)]
pub struct State(Element);

impl State {
    pub fn new(element: Element) -> Result<Self> {
        if !element.is_hermitian() {
            return Err(domain("state must be hermitian"));
        }
        let tr = element.trace().re;
        if (tr - 1.0).abs() > 1e-10 {
            return Err(domain(format!("state trace is {tr}, expected 1")));
        }
        if let Some(&l) = element.eigenvalues()?.iter().find(|&&l| l < -POSITIVITY_TOL) {
            return Err(domain(format!("state not positive: eigenvalue {l:e}")));
        }
        Ok(State(element))
    }

    /// The pure state `ψψ* / ‖ψ‖²` supported in block `block`.
    pub fn pure(shape: &AlgebraShape, block: usize, psi: &DVector<C64>) -> Result<Self> {
        if block >= shape.num_blocks() || psi.len() != shape.blocks()[block] {
            return Err(structural("vector does not fit the requested block"));
        }
        let norm2 = psi.norm_squared();
        if norm2 <= 0.0 {
            return Err(domain("zero vector has no pure state"));
        }
        let mut e = Element::zeros(shape);
        e.blocks[block] = psi * psi.adjoint() / C64::new(norm2, 0.0);
        e.hermitian = block_is_hermitian(&e.blocks[block]);
        State::new(e)
    }

    pub fn maximally_mixed(shape: &AlgebraShape) -> Self {
        State(Element::maximally_mixed(shape))
    }

    pub fn element(&self) -> &Element {
        &self.0
    }

    pub fn into_element(self) -> Element {
        self.0
    }

    pub fn shape(&self) -> &AlgebraShape {
        self.0.shape()
    }

    pub fn entropy(&self) -> f64 {
        entropy(&self.0).expect("states are positive")
    }
}

fn ginibre_block(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<C64> {
    DMatrix::from_fn(n, n, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(re, im)
    })
}

/// Random hermitian element, `(g + g*) / 2` with complex Gaussian `g` per block.
pub fn random_hermitian(shape: &AlgebraShape, seed: u64) -> Element {
    let mut rng = rng_from_seed(seed);
    random_hermitian_with(shape, &mut rng)
}

pub(crate) fn random_hermitian_with(shape: &AlgebraShape, rng: &mut ChaCha8Rng) -> Element {
    let blocks = shape
        .blocks()
        .iter()
        .map(|&n| {
            let g = ginibre_block(n, rng);
            (&g + g.adjoint()) * C64::new(0.5, 0.0)
        })
        .collect();
    Element { shape: shape.clone(), blocks, hermitian: true }
}

/// Random state `g* g / Tr(g* g)` with complex Gaussian `g` per block.
pub fn random_state(shape: &AlgebraShape, seed: u64) -> State {
    let mut rng = rng_from_seed(seed);
    random_state_with(shape, &mut rng)
}

pub(crate) fn random_state_with(shape: &AlgebraShape, rng: &mut ChaCha8Rng) -> State {
    let mut blocks: Vec<DMatrix<C64>> = shape
        .blocks()
        .iter()
        .map(|&n| {
            let g = ginibre_block(n, rng);
            let p = g.adjoint() * &g;
            (&p + p.adjoint()) * C64::new(0.5, 0.0)
        })
        .collect();
    let tr: f64 = blocks.iter().map(|m| m.trace().re).sum();
    for m in &mut blocks {
        *m /= C64::new(tr, 0.0);
    }
    State(Element { shape: shape.clone(), blocks, hermitian: true })
}

/// Random unitary (QR of a complex Gaussian matrix, phases fixed) per block.
pub fn random_unitary(shape: &AlgebraShape, seed: u64) -> Element {
    let mut rng = rng_from_seed(seed);
    let blocks = shape
        .blocks()
        .iter()
        .map(|&n| {
            let g = ginibre_block(n, &mut rng);
            let qr = g.qr();
            let mut q = qr.q();
            let r = qr.r();
            for k in 0..n {
                let d = r[(k, k)];
                let phase = if d.norm() > 0.0 { d / d.norm() } else { C64::new(1.0, 0.0) };
                let mut col = q.column_mut(k);
                col *= phase;
            }
            q
        })
        .collect();
    Element::from_blocks_unchecked(shape.clone(), blocks)
}

/// Orthonormal frame of the range of a projection, block by block, used to
/// identify the corner `eMe` with a smaller algebra.
#[derive(Clone, Debug)]
pub struct Corner {
    ambient: AlgebraShape,
    shape: AlgebraShape,
    /// `(ambient block, isometry n_b × r_b)` for every block with nonzero rank.
    frames: Vec<(usize, DMatrix<C64>)>,
}

/// Column-pivoted Gram–Schmidt on the columns of a projection block. Picks the
/// column with the largest residual (lowest index on ties) and fixes the phase
/// so that the pivot coordinate is real and positive.
fn range_frame(e: &DMatrix<C64>, rank: usize) -> DMatrix<C64> {
    let n = e.nrows();
    let mut residuals: Vec<DVector<C64>> = (0..n).map(|j| e.column(j).into_owned()).collect();
    let mut used = vec![false; n];
    let mut frame = DMatrix::zeros(n, rank);
    for k in 0..rank {
        let mut best = None;
        let mut best_norm = -1.0;
        for (j, r) in residuals.iter().enumerate() {
            if used[j] {
                continue;
            }
            let nr = r.norm();
            if nr > best_norm + 1e-12 {
                best_norm = nr;
                best = Some(j);
            }
        }
        let j = best.expect("rank does not exceed dimension");
        used[j] = true;
        let mut q = residuals[j].clone() / C64::new(best_norm, 0.0);
        let pivot = q[j];
        if pivot.norm() > 1e-12 {
            q *= pivot.conj() / pivot.norm();
        }
        for r in residuals.iter_mut() {
            let c = q.dotc(r);
            *r -= &q * c;
        }
        frame.set_column(k, &q);
    }
    frame
}

impl Corner {
    /// Build the corner of a projection `e`.
    pub fn of(e: &Element) -> Result<Self> {
        Corner::of_with_tol(e, PROJECTION_TOL)
    }

    /// Like [`Corner::of`] with an explicit projection tolerance.
    pub fn of_with_tol(e: &Element, tol: f64) -> Result<Self> {
        if !e.is_projection(tol) {
            return Err(domain("compression requires a projection"));
        }
        let mut dims = Vec::new();
        let mut frames = Vec::new();
        for (b, m) in e.blocks().iter().enumerate() {
            let rank = m.trace().re.round() as usize;
            if rank == 0 {
                continue;
            }
            dims.push(rank);
            frames.push((b, range_frame(m, rank)));
        }
        if dims.is_empty() {
            return Err(domain("compression by the zero projection"));
        }
        Ok(Corner { ambient: e.shape().clone(), shape: AlgebraShape(dims), frames })
    }

    pub fn shape(&self) -> &AlgebraShape {
        &self.shape
    }

    pub fn ambient(&self) -> &AlgebraShape {
        &self.ambient
    }

    /// `V* a V` per block: `eae` written on the corner algebra.
    pub fn compress(&self, a: &Element) -> Result<Element> {
        if a.shape() != &self.ambient {
            return Err(structural(format!(
                "cannot compress element of shape {} into a corner of {}",
                a.shape(),
                self.ambient
            )));
        }
        let blocks = self.frames.iter().map(|(b, v)| v.adjoint() * a.block(*b) * v).collect();
        Ok(Element::from_blocks_unchecked(self.shape.clone(), blocks))
    }

    /// `V x V*`: the inverse of [`Corner::compress`] on the corner.
    pub fn embed(&self, x: &Element) -> Result<Element> {
        if x.shape() != &self.shape {
            return Err(structural("element does not live on this corner"));
        }
        let mut out = Element::zeros(&self.ambient);
        for ((b, v), blk) in self.frames.iter().zip(x.blocks()) {
            out.blocks[*b] = v * blk * v.adjoint();
        }
        out.hermitian = x.is_hermitian() && out.blocks.iter().all(block_is_hermitian);
        Ok(out)
    }

    /// The projection this corner was built from, reconstructed from the frame.
    pub fn projection(&self) -> Element {
        self.embed(&Element::identity(&self.shape)).expect("shape matches")
    }
}

/// `eae` rewritten on the corner algebra `eMe`.
pub fn compress(a: &Element, e: &Element) -> Result<Element> {
    if a.shape() != e.shape() {
        return Err(structural("compress: shape mismatch"));
    }
    Corner::of(e)?.compress(a)
}
