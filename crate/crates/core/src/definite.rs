//! The definite set `{a = a* : Φ(a²) = Φ(a)²}` of a PTPU map, ergodicity, and
//! extraction of a partition of unity whose images are projections.
//!
//! The definite set is the kernel of the quadratic form
//! `Q(a) = ⟨a, a⟩ - ⟨Φ(a), Φ(a)⟩`. For positive unital maps Kadison's
//! inequality gives `Φ(a²) - Φ(a)² ≥ 0`, and trace preservation turns the
//! trace of that difference into `Q(a)`, so `Q(a) = 0` exactly on the set.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::algebra::{
    derive_seed, rng_from_seed, spectral_decompose, AlgebraShape, Corner, Element,
};
use crate::basis::{from_coords, to_coords};
use crate::error::{domain, Error, Result};
use crate::map::{check_partition, Certificate, PtpuMap};

pub const KERNEL_TOL: f64 = 1e-8;
pub const PARTITION_TOL: f64 = 1e-8;
pub const MAX_DEPTH: usize = 8;
pub const EXTRACTION_RETRIES: u64 = 5;
pub const MULTIPLICATIVE_TOL: f64 = 1e-7;

/// `G = I - SᵀS`, symmetric and positive semidefinite for positive maps.
pub fn gram_form(map: &PtpuMap) -> DMatrix<f64> {
    let s = map.matrix();
    let n = s.ncols();
    let g = DMatrix::identity(n, n) - s.tr_mul(s);
    (&g + g.transpose()) * 0.5
}

#[derive(Clone, Debug)]
pub struct DefiniteSet {
    map: PtpuMap,
    basis: Vec<Element>,
    /// Ascending.
    gram_eigenvalues: Vec<f64>,
    tolerance: f64,
}

impl DefiniteSet {
    pub fn map(&self) -> &PtpuMap {
        &self.map
    }

    pub fn basis(&self) -> &[Element] {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn gram_eigenvalues(&self) -> &[f64] {
        &self.gram_eigenvalues
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    /// False when the map's positivity is only asserted.
    pub fn positivity_verified(&self) -> bool {
        self.map.positivity_verified()
    }

    /// Distance of `x` from the span of the basis (HS norm of the residual).
    pub fn distance_to_span(&self, x: &Element) -> f64 {
        let c = to_coords(x);
        let mut residual = c.clone();
        for b in &self.basis {
            let bc = to_coords(b);
            residual -= &bc * bc.dot(&c);
        }
        residual.norm()
    }
}

/// `‖Φ(a²) - Φ(a)²‖_HS`.
pub fn multiplicativity_defect(map: &PtpuMap, a: &Element) -> Result<f64> {
    let lhs = map.apply(&a.mul(a)?)?;
    let fa = map.apply(a)?;
    Ok(lhs.sub(&fa.mul(&fa)?)?.hs_norm())
}

pub fn definite_set(map: &PtpuMap, tolerance: f64) -> Result<DefiniteSet> {
    let g = gram_form(map);
    let eig = SymmetricEigen::new(g);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]).then(i.cmp(&j)));
    let gram_eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();

    let mut basis = Vec::new();
    for &i in &order {
        if eig.eigenvalues[i] > tolerance {
            break;
        }
        let a = from_coords(map.source(), &eig.eigenvectors.column(i).into_owned());
        let defect = multiplicativity_defect(map, &a)?;
        if defect > 10.0 * tolerance {
            return Err(Error::Inconsistency(format!(
                "kernel vector fails Φ(a²) = Φ(a)² by {defect:e}; the map is probably not positive"
            )));
        }
        basis.push(a);
    }
    let set = DefiniteSet { map: map.clone(), basis, gram_eigenvalues, tolerance };
    let unit = Element::identity(map.source());
    let miss = set.distance_to_span(&unit);
    if miss > 10.0 * tolerance * (map.source().total_rank() as f64).sqrt() {
        return Err(Error::Inconsistency(format!("unit is not in the definite set (residual {miss:e})")));
    }
    Ok(set)
}

pub fn is_ergodic(map: &PtpuMap) -> Result<bool> {
    Ok(definite_set(map, KERNEL_TOL)?.dim() == 1)
}

/// Projections `e_i` with sum 1 whose images `Φ(e_i)` are projections.
#[derive(Clone, Debug)]
pub struct Partition {
    projections: Vec<Element>,
    images: Vec<Element>,
    certified: bool,
}

impl Partition {
    /// Check the partition invariants for `map` and record the images.
    pub fn new(map: &PtpuMap, projections: Vec<Element>) -> Result<Self> {
        let images = projections
            .iter()
            .map(|e| map.apply(e).map(|x| x.hermitian_parts().0))
            .collect::<Result<Vec<_>>>()?;
        let certified = check_partition(map.source(), &projections, PARTITION_TOL).is_ok()
            && images.iter().all(|f| f.is_projection(PARTITION_TOL));
        Ok(Partition { projections, images, certified })
    }

    pub fn projections(&self) -> &[Element] {
        &self.projections
    }

    pub fn images(&self) -> &[Element] {
        &self.images
    }

    pub fn certified(&self) -> bool {
        self.certified
    }

    pub fn len(&self) -> usize {
        self.projections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.projections.is_empty()
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.projections.iter().map(|e| e.trace().re.round() as usize).collect()
    }
}

/// A corner map together with the frames identifying its source and target corners.
#[derive(Clone, Debug)]
pub struct CornerMap {
    pub map: PtpuMap,
    pub source_corner: Corner,
    pub target_corner: Corner,
}

/// `Φ|eMe : eMe → Φ(e)PΦ(e)` for a projection `e` whose image is a projection.
pub fn corner_map_of(map: &PtpuMap, e: &Element) -> Result<CornerMap> {
    let image = map.apply(e)?.hermitian_parts().0;
    if !image.is_projection(PARTITION_TOL) {
        return Err(domain("image of the corner projection is not a projection"));
    }
    let source_corner = Corner::of_with_tol(e, PARTITION_TOL)?;
    let target_corner = Corner::of_with_tol(&image, PARTITION_TOL)?;
    let cert = if map.certificate().is_cp() { Certificate::Composition } else { Certificate::UserAsserted };
    let corner = PtpuMap::from_action(
        source_corner.shape(),
        target_corner.shape(),
        cert,
        format!("corner({})", map.name()),
        |x| {
            let y = map.apply(&source_corner.embed(x)?)?;
            Ok(target_corner.compress(&y)?.hermitian_parts().0)
        },
    )?;
    Ok(CornerMap { map: corner, source_corner, target_corner })
}

/// The `i`-th corner map of a certified partition.
pub fn corner_map(map: &PtpuMap, partition: &Partition, i: usize) -> Result<CornerMap> {
    if !partition.certified() {
        return Err(domain("corner maps need a certified partition"));
    }
    let e = partition
        .projections()
        .get(i)
        .ok_or_else(|| domain(format!("partition has no element {i}")))?;
    corner_map_of(map, e)
}

fn random_element_of(set: &DefiniteSet, seed: u64) -> Element {
    let mut rng = rng_from_seed(seed);
    let n = set.map.source().sa_dim();
    let mut c = DVector::zeros(n);
    for b in &set.basis {
        let g: f64 = rng.sample(StandardNormal);
        c += to_coords(b) * g;
    }
    from_coords(set.map.source(), &c)
}

fn split(map: &PtpuMap, set: &DefiniteSet, seed: u64, depth: usize) -> Result<Vec<Element>> {
    let unit = Element::identity(map.source());
    if set.dim() <= 1 {
        return Ok(vec![unit]);
    }
    let a = random_element_of(set, seed);
    let candidates = spectral_decompose(&a)?.projectors;
    if depth >= MAX_DEPTH {
        return Ok(candidates);
    }
    let mut out = Vec::new();
    for (k, e) in candidates.into_iter().enumerate() {
        if e.trace().re.round() as usize <= 1 {
            out.push(e);
            continue;
        }
        let corner = corner_map_of(map, &e)?;
        let sub_set = definite_set(&corner.map, set.tolerance)?;
        if sub_set.dim() <= 1 {
            out.push(e);
            continue;
        }
        let pieces = split(&corner.map, &sub_set, derive_seed(seed, k as u64 + 1), depth + 1)?;
        for p in pieces {
            out.push(corner.source_corner.embed(&p)?.hermitian_parts().0);
        }
    }
    Ok(out)
}

/// Split the unit into minimal projections of the definite set.
pub fn extract_partition(set: &DefiniteSet, seed: u64) -> Result<Partition> {
    let mut last_err = None;
    for attempt in 0..EXTRACTION_RETRIES {
        let s = if attempt == 0 { seed } else { derive_seed(seed, 1000 + attempt) };
        match split(&set.map, set, s, 0).and_then(|p| Partition::new(&set.map, p)) {
            Ok(p) if p.certified() => return Ok(p),
            Ok(_) => last_err = Some("a candidate projection has a non-projection image".to_string()),
            Err(e) => last_err = Some(e.to_string()),
        }
    }
    Err(Error::Extraction(format!(
        "no certified partition after {EXTRACTION_RETRIES} attempts: {}",
        last_err.unwrap_or_default()
    )))
}

/// `Φ(aba) = Φ(a)Φ(b)Φ(a)` on `trials` seeded random hermitian `b`.
pub fn multiplicative_check(map: &PtpuMap, a: &Element, trials: usize, seed: u64) -> Result<bool> {
    let fa = map.apply(a)?;
    let mut rng = rng_from_seed(seed);
    for _ in 0..trials {
        let b = crate::algebra::random_hermitian_with(map.source(), &mut rng);
        let lhs = map.apply(&a.mul(&b)?.mul(a)?)?;
        let rhs = fa.mul(&map.apply(&b)?)?.mul(&fa)?;
        if lhs.sub(&rhs)?.hs_norm() > MULTIPLICATIVE_TOL {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Summary produced by the `decompose` command.
#[derive(Clone, Debug)]
pub struct Decomposition {
    pub definite_dim: usize,
    pub ergodic: bool,
    pub ranks: Vec<usize>,
    pub corner_source_shapes: Vec<AlgebraShape>,
    pub corner_target_shapes: Vec<AlgebraShape>,
    pub gram_spectrum: Vec<f64>,
}

pub fn decompose(map: &PtpuMap, seed: u64) -> Result<Decomposition> {
    let set = definite_set(map, KERNEL_TOL)?;
    let partition = extract_partition(&set, seed)?;
    let mut sources = Vec::new();
    let mut targets = Vec::new();
    for i in 0..partition.len() {
        let c = corner_map(map, &partition, i)?;
        sources.push(c.map.source().clone());
        targets.push(c.map.target().clone());
    }
    Ok(Decomposition {
        definite_dim: set.dim(),
        ergodic: set.dim() == 1,
        ranks: partition.ranks(),
        corner_source_shapes: sources,
        corner_target_shapes: targets,
        gram_spectrum: set.gram_eigenvalues().to_vec(),
    })
}

impl Decomposition {
    pub fn to_json(&self) -> serde_json::Value {
        let partition: Vec<serde_json::Value> = self
            .ranks
            .iter()
            .zip(&self.corner_source_shapes)
            .zip(&self.corner_target_shapes)
            .map(|((r, s), t)| {
                serde_json::json!({"rank": r, "cornerSourceShape": s.blocks(), "cornerTargetShape": t.blocks()})
            })
            .collect();
        serde_json::json!({
            "definiteDim": self.definite_dim,
            "ergodic": self.ergodic,
            "partition": partition,
            "gramSpectrum": self.gram_spectrum,
        })
    }
}

/// True when the map's superoperator is idempotent.
pub(crate) fn is_idempotent(map: &PtpuMap, tol: f64) -> bool {
    map.source() == map.target() && (map.matrix() * map.matrix() - map.matrix()).amax() <= tol
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{random_unitary, C64};
    use crate::map::{compose_maps, random_cp_map};

    fn count_near_zero(v: &[f64]) -> usize {
        v.iter().filter(|&&x| x.abs() < 1e-10).count()
    }

    fn count_near_one(v: &[f64]) -> usize {
        v.iter().filter(|&&x| (x - 1.0).abs() < 1e-10).count()
    }

    fn mixed_fixture() -> PtpuMap {
        let s = AlgebraShape::full(3);
        PtpuMap::depolarize_corner(&s, &Element::diagonal(&s, &[0.0, 1.0, 1.0]).unwrap()).unwrap()
    }

    #[test]
    fn gram_form_examples() {
        let s = AlgebraShape::full(2);
        assert!(gram_form(&PtpuMap::identity(&s)).amax() < 1e-15);

        // oracle: direct eigendecomposition of I - SᵀS
        let d = PtpuMap::depolarize(&s);
        let eig = SymmetricEigen::new(gram_form(&d)).eigenvalues;
        let eig: Vec<f64> = eig.iter().copied().collect();
        assert_eq!(count_near_zero(&eig), 1);
        assert_eq!(count_near_one(&eig), 3);

        // brute force over the basis: Q vanishes exactly on diagonal directions
        let p = PtpuMap::diagonal_pinching(&s, &[1, 1]).unwrap();
        let g = gram_form(&p);
        let diag_q: Vec<f64> = (0..4).map(|i| g[(i, i)]).collect();
        assert_eq!(diag_q, vec![0.0, 0.0, 1.0, 1.0]);
        let eig: Vec<f64> = SymmetricEigen::new(g).eigenvalues.iter().copied().collect();
        assert_eq!(count_near_zero(&eig), 2);
    }

    #[test]
    fn definite_set_dimensions() {
        let s2 = AlgebraShape::full(2);
        assert_eq!(definite_set(&PtpuMap::identity(&s2), KERNEL_TOL).unwrap().dim(), 4);
        assert_eq!(definite_set(&PtpuMap::depolarize(&s2), KERNEL_TOL).unwrap().dim(), 1);
        let s3 = AlgebraShape::full(3);
        let p = PtpuMap::diagonal_pinching(&s3, &[1, 1, 1]).unwrap();
        let d = definite_set(&p, KERNEL_TOL).unwrap();
        assert_eq!(d.dim(), 3);
        assert!(d.distance_to_span(&Element::identity(&s3)) < 1e-10);
        assert_eq!(definite_set(&mixed_fixture(), KERNEL_TOL).unwrap().dim(), 2);
    }

    #[test]
    fn ergodicity() {
        let s2 = AlgebraShape::full(2);
        assert!(is_ergodic(&PtpuMap::depolarize(&s2)).unwrap());
        assert!(!is_ergodic(&PtpuMap::identity(&s2)).unwrap());
        assert!(!is_ergodic(&PtpuMap::diagonal_pinching(&s2, &[1, 1]).unwrap()).unwrap());
    }

    #[test]
    fn definite_set_is_closed_under_squaring() {
        for map in [mixed_fixture(), PtpuMap::diagonal_pinching(&AlgebraShape::full(3), &[2, 1]).unwrap()] {
            let d = definite_set(&map, KERNEL_TOL).unwrap();
            for b in d.basis() {
                assert!(d.distance_to_span(&b.mul(b).unwrap()) < 10.0 * KERNEL_TOL);
                assert!(multiplicative_check(&map, b, 20, 3).unwrap());
            }
        }
    }

    #[test]
    fn partition_examples() {
        let s2 = AlgebraShape::full(2);
        let ergodic = PtpuMap::depolarize(&s2);
        let p = extract_partition(&definite_set(&ergodic, KERNEL_TOL).unwrap(), 1).unwrap();
        assert_eq!(p.len(), 1);
        assert!(p.projections()[0].max_abs_diff(&Element::identity(&s2)) < 1e-12);

        let s3 = AlgebraShape::full(3);
        let pinch = PtpuMap::diagonal_pinching(&s3, &[1, 1, 1]).unwrap();
        let p = extract_partition(&definite_set(&pinch, KERNEL_TOL).unwrap(), 2).unwrap();
        assert_eq!(p.ranks(), vec![1, 1, 1]);
        for e in p.projections() {
            // rank-one diagonal projections: off-diagonal entries vanish
            let m = e.block(0);
            for r in 0..3 {
                for c in 0..3 {
                    if r != c {
                        assert!(m[(r, c)].norm() < 1e-9);
                    }
                }
            }
        }

        let id = PtpuMap::identity(&s2);
        let p = extract_partition(&definite_set(&id, KERNEL_TOL).unwrap(), 3).unwrap();
        assert_eq!(p.ranks(), vec![1, 1]);
        assert!(p.certified());
    }

    #[test]
    fn partition_of_mixed_fixture_has_ergodic_corners() {
        let map = mixed_fixture();
        let p = extract_partition(&definite_set(&map, KERNEL_TOL).unwrap(), 5).unwrap();
        let mut ranks = p.ranks();
        ranks.sort();
        assert_eq!(ranks, vec![1, 2]);
        for i in 0..p.len() {
            let c = corner_map(&map, &p, i).unwrap();
            assert!(is_ergodic(&c.map).unwrap());
        }
    }

    #[test]
    fn corner_map_examples() {
        let s2 = AlgebraShape::full(2);
        let id = PtpuMap::identity(&s2);
        let p = Partition::new(&id, vec![Element::matrix_unit(&s2, 0, 0, 0), Element::matrix_unit(&s2, 0, 1, 1)]).unwrap();
        let c = corner_map(&id, &p, 0).unwrap();
        assert_eq!(c.map.source().blocks(), &[1]);
        assert!((c.map.matrix()[(0, 0)] - 1.0).abs() < 1e-14);

        // corner of the mixed fixture at the rank-2 projection is the full depolarizer on M2
        let map = mixed_fixture();
        let s3 = AlgebraShape::full(3);
        let e1 = Element::diagonal(&s3, &[1.0, 0.0, 0.0]).unwrap();
        let e2 = Element::diagonal(&s3, &[0.0, 1.0, 1.0]).unwrap();
        let p = Partition::new(&map, vec![e1, e2]).unwrap();
        assert!(p.certified());
        let c = corner_map(&map, &p, 1).unwrap();
        let expected = PtpuMap::depolarize(&s2);
        assert!((c.map.matrix() - expected.matrix()).amax() < 1e-9);

        let uncertified = Partition::new(&map, vec![Element::identity(&s3).scale(0.5), Element::identity(&s3).scale(0.5)]).unwrap();
        assert!(!uncertified.certified());
        assert!(corner_map(&map, &uncertified, 0).is_err());
    }

    #[test]
    fn multiplicative_examples() {
        let s2 = AlgebraShape::full(2);
        let pinch = PtpuMap::diagonal_pinching(&s2, &[1, 1]).unwrap();
        assert!(multiplicative_check(&pinch, &Element::identity(&s2), 10, 1).unwrap());
        assert!(multiplicative_check(&pinch, &Element::matrix_unit(&s2, 0, 0, 0), 100, 2).unwrap());
        let x = Element::from_matrix(DMatrix::from_fn(2, 2, |r, c| C64::new(if r != c { 1.0 } else { 0.0 }, 0.0))).unwrap();
        assert!(multiplicativity_defect(&pinch, &x).unwrap() > 0.1);
        assert!(!multiplicative_check(&pinch, &x, 100, 3).unwrap());
    }

    #[test]
    fn gram_form_is_psd_for_random_cp_maps() {
        for seed in 0..10 {
            let shape = if seed % 2 == 0 { AlgebraShape::full(3) } else { AlgebraShape::new(vec![2, 1]).unwrap() };
            let m = random_cp_map(&shape, seed).unwrap();
            let eig = SymmetricEigen::new(gram_form(&m)).eigenvalues;
            assert!(eig.min() >= -1e-9);
        }
    }

    #[test]
    fn definite_dim_invariant_under_target_rotation() {
        let map = mixed_fixture();
        let u = random_unitary(map.target(), 4);
        let rotated = compose_maps(&PtpuMap::unitary_conjugation(map.target(), &u).unwrap(), &map).unwrap();
        assert_eq!(
            definite_set(&rotated, KERNEL_TOL).unwrap().dim(),
            definite_set(&map, KERNEL_TOL).unwrap().dim()
        );
    }

    #[test]
    fn decompose_summary() {
        let map = mixed_fixture();
        let d = decompose(&map, 42).unwrap();
        assert_eq!(d.definite_dim, 2);
        assert!(!d.ergodic);
        let json = d.to_json();
        assert_eq!(json["partition"].as_array().unwrap().len(), 2);
        assert_eq!(json["gramSpectrum"].as_array().unwrap().len(), 9);
    }
}
