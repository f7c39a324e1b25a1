//! Orthonormal hermitian basis of the self-adjoint part of an algebra and the
//! real coordinates it induces.
//!
//! Ordering, per block of size `n`: the diagonal units `E_kk` for `k = 1..n`,
//! then for each pair `k < l` in lexicographic order `X_kl = (E_kl + E_lk)/√2`
//! followed by `Y_kl = i(E_lk - E_kl)/√2`.

use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::{DMatrix, DVector};

use crate::algebra::{AlgebraShape, Element, C64};

#[derive(Clone, Debug)]
pub struct HermitianBasis {
    shape: AlgebraShape,
    elements: Vec<Element>,
}

impl HermitianBasis {
    pub fn new(shape: &AlgebraShape) -> Self {
        let mut elements = Vec::with_capacity(shape.sa_dim());
        for coord in 0..shape.sa_dim() {
            let mut c = DVector::zeros(shape.sa_dim());
            c[coord] = 1.0;
            elements.push(from_coords(shape, &c));
        }
        HermitianBasis { shape: shape.clone(), elements }
    }

    pub fn shape(&self) -> &AlgebraShape {
        &self.shape
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }
}

/// Real coordinates `Re Tr(b_i x)` and `Im Tr(b_i x)`: the coordinates of the
/// hermitian part and of the anti-hermitian part of `x = h + i k`.
pub fn coords_split(x: &Element) -> (DVector<f64>, DVector<f64>) {
    let shape = x.shape();
    let mut re = DVector::zeros(shape.sa_dim());
    let mut im = DVector::zeros(shape.sa_dim());
    let mut idx = 0;
    for m in x.blocks() {
        let n = m.nrows();
        for k in 0..n {
            re[idx] = m[(k, k)].re;
            im[idx] = m[(k, k)].im;
            idx += 1;
        }
        for k in 0..n {
            for l in (k + 1)..n {
                let xkl = m[(k, l)];
                let xlk = m[(l, k)];
                let tx = (xlk + xkl) * FRAC_1_SQRT_2;
                let ty = (xkl - xlk) * C64::new(0.0, FRAC_1_SQRT_2);
                re[idx] = tx.re;
                im[idx] = tx.im;
                re[idx + 1] = ty.re;
                im[idx + 1] = ty.im;
                idx += 2;
            }
        }
    }
    (re, im)
}

/// Coordinates of a hermitian element.
pub fn to_coords(x: &Element) -> DVector<f64> {
    coords_split(x).0
}

/// Hermitian element `Σ c_i b_i`.
pub fn from_coords(shape: &AlgebraShape, c: &DVector<f64>) -> Element {
    Element::from_blocks_unchecked(shape.clone(), blocks_from_coords(shape, c.as_slice()))
}

pub(crate) fn blocks_from_coords(shape: &AlgebraShape, c: &[f64]) -> Vec<DMatrix<C64>> {
    let mut idx = 0;
    shape
        .blocks()
        .iter()
        .map(|&n| {
            let mut m = DMatrix::zeros(n, n);
            for k in 0..n {
                m[(k, k)] = C64::new(c[idx], 0.0);
                idx += 1;
            }
            for k in 0..n {
                for l in (k + 1)..n {
                    let x = c[idx] * FRAC_1_SQRT_2;
                    let y = c[idx + 1] * FRAC_1_SQRT_2;
                    // X contributes x to (k,l),(l,k); Y contributes -iy to (k,l), +iy to (l,k)
                    m[(k, l)] = C64::new(x, -y);
                    m[(l, k)] = C64::new(x, y);
                    idx += 2;
                }
            }
            m
        })
        .collect()
}

/// Coordinates of the rank-one operator `ψψ*` placed in block `block`.
pub fn pure_coords(shape: &AlgebraShape, block: usize, psi: &[C64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    let offset = shape.sa_offsets()[block];
    pure_coords_block(psi, &mut out[offset..offset + psi.len() * psi.len()]);
}

/// Coordinates of `ψψ*` within a single block (length `n²`).
pub(crate) fn pure_coords_block(psi: &[C64], out: &mut [f64]) {
    let n = psi.len();
    let mut idx = 0;
    for k in 0..n {
        out[idx] = psi[k].norm_sqr();
        idx += 1;
    }
    let s2 = std::f64::consts::SQRT_2;
    for k in 0..n {
        for l in (k + 1)..n {
            let z = psi[k] * psi[l].conj();
            out[idx] = s2 * z.re;
            out[idx + 1] = -s2 * z.im;
            idx += 2;
        }
    }
}

/// Coordinates of the unit.
pub fn unit_coords(shape: &AlgebraShape) -> DVector<f64> {
    to_coords(&Element::identity(shape))
}
