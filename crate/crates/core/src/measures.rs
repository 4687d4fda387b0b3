//! Atomic probability measures on real projective space and the lattice of
//! subspaces spanned by their atoms.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use crate::error::{Error, Result};
use crate::exact;
use crate::linalg::{canonicalize_sign, distance_to_span, gram_schmidt, SpecialLinear};

/// Two atoms with `1 - |<x, y>| <= MERGE_TOL` are the same projective point.
pub const MERGE_TOL: f64 = 1e-10;
/// An atom lies in a subspace when its distance to it is at most this.
pub const MEMBERSHIP_TOL: f64 = 1e-9;
/// Accepted drift of the total weight in float-mode input.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;
/// Largest atom count for exhaustive flat enumeration.
pub const MAX_ENUM_ATOMS: usize = 24;

/// A point of RP^n as a unit vector whose first entry above 1e-12 in
/// magnitude is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjPoint {
    coords: DVector<f64>,
}

impl ProjPoint {
    pub fn new(v: DVector<f64>) -> Result<Self> {
        if v.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidMeasure("non-finite coordinate".into()));
        }
        let norm = v.norm();
        if norm <= 1e-300 {
            return Err(Error::InvalidMeasure("zero vector is not a projective point".into()));
        }
        let mut coords = v / norm;
        canonicalize_sign(&mut coords);
        Ok(Self { coords })
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(v))
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    /// `1 - |<x, y>|`, zero exactly for equal projective points.
    pub fn distance(&self, other: &Self) -> f64 {
        1.0 - self.coords.dot(&other.coords).abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub point: ProjPoint,
    pub weight: f64,
}

/// Exact companion data for measures given with rational coordinates.
/// `coords[i]` is a primitive integer representative of atom `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactAtoms {
    pub coords: Vec<Vec<BigInt>>,
    pub weights: Vec<BigRational>,
}

/// Finite probability measure `sum_i w_i delta_{[x_i]}` on RP^n.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicMeasure {
    n_plus_1: usize,
    atoms: Vec<Atom>,
    exact: Option<ExactAtoms>,
}

impl AtomicMeasure {
    /// Builds a measure from raw vectors and weights. Vectors are normalized
    /// and sign-canonicalized, coincident points merged, and the total weight
    /// must be one within [`WEIGHT_SUM_TOL`] (it is then renormalized).
    pub fn new(n_plus_1: usize, atoms: Vec<(DVector<f64>, f64)>) -> Result<Self> {
        let total: f64 = atoms.iter().map(|(_, w)| *w).sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidMeasure(format!("weights sum to {total}, not 1")));
        }
        Self::from_unnormalized(n_plus_1, atoms)
    }

    /// Like [`AtomicMeasure::new`] but rescales any positive total weight to one.
    pub fn from_unnormalized(n_plus_1: usize, atoms: Vec<(DVector<f64>, f64)>) -> Result<Self> {
        if n_plus_1 == 0 {
            return Err(Error::InvalidMeasure("ambient dimension must be positive".into()));
        }
        if atoms.is_empty() {
            return Err(Error::InvalidMeasure("no atoms".into()));
        }
        let mut points = Vec::with_capacity(atoms.len());
        for (v, w) in atoms {
            if v.len() != n_plus_1 {
                return Err(Error::DimensionMismatch { expected: n_plus_1, got: v.len() });
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::InvalidMeasure(format!("weight {w} is not positive")));
            }
            points.push((ProjPoint::new(v)?, w));
        }
        Ok(Self::merged(n_plus_1, points))
    }

    fn merged(n_plus_1: usize, points: Vec<(ProjPoint, f64)>) -> Self {
        let mut atoms: Vec<Atom> = Vec::with_capacity(points.len());
        for (point, weight) in points {
            match atoms.iter_mut().find(|a| a.point.distance(&point) <= MERGE_TOL) {
                Some(a) => a.weight += weight,
                None => atoms.push(Atom { point, weight }),
            }
        }
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        for a in &mut atoms {
            a.weight /= total;
        }
        Self { n_plus_1, atoms, exact: None }
    }

    /// Builds a measure from rational coordinates and weights; incidence and
    /// masses of this measure are then decided exactly. Weights must sum to
    /// exactly one.
    pub fn from_rational(n_plus_1: usize, atoms: Vec<(Vec<BigRational>, BigRational)>) -> Result<Self> {
        if n_plus_1 == 0 {
            return Err(Error::InvalidMeasure("ambient dimension must be positive".into()));
        }
        if atoms.is_empty() {
            return Err(Error::InvalidMeasure("no atoms".into()));
        }
        let mut total = BigRational::zero();
        let mut merged: Vec<(Vec<BigInt>, BigRational)> = Vec::new();
        for (v, w) in atoms {
            if v.len() != n_plus_1 {
                return Err(Error::DimensionMismatch { expected: n_plus_1, got: v.len() });
            }
            if !w.is_positive() {
                return Err(Error::InvalidMeasure(format!("weight {w} is not positive")));
            }
            total += &w;
            let ints = exact::primitive_integer_vector(&v)
                .ok_or_else(|| Error::InvalidMeasure("zero vector is not a projective point".into()))?;
            match merged.iter_mut().find(|(c, _)| *c == ints) {
                Some((_, acc)) => *acc += w,
                None => merged.push((ints, w)),
            }
        }
        if !total.is_one() {
            return Err(Error::InvalidMeasure(format!("weights sum to {total}, not 1")));
        }
        let mut float_atoms = Vec::with_capacity(merged.len());
        for (c, w) in &merged {
            let v = DVector::from_iterator(n_plus_1, c.iter().map(|x| exact::to_f64(&BigRational::from_integer(x.clone()))));
            float_atoms.push(Atom { point: ProjPoint::new(v)?, weight: exact::to_f64(w) });
        }
        for i in 0..float_atoms.len() {
            for j in 0..i {
                if float_atoms[i].point.distance(&float_atoms[j].point) <= MERGE_TOL {
                    return Err(Error::InvalidMeasure(format!(
                        "atoms {j} and {i} are distinct but numerically indistinguishable"
                    )));
                }
            }
        }
        let total: f64 = float_atoms.iter().map(|a| a.weight).sum();
        for a in &mut float_atoms {
            a.weight /= total;
        }
        let (coords, weights) = merged.into_iter().unzip();
        Ok(Self { n_plus_1, atoms: float_atoms, exact: Some(ExactAtoms { coords, weights }) })
    }

    pub fn n_plus_1(&self) -> usize {
        self.n_plus_1
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn exact(&self) -> Option<&ExactAtoms> {
        self.exact.as_ref()
    }

    pub fn is_exact(&self) -> bool {
        self.exact.is_some()
    }

    /// Copy of this measure without the exact companion data.
    pub fn to_float(&self) -> Self {
        Self { n_plus_1: self.n_plus_1, atoms: self.atoms.clone(), exact: None }
    }

    pub fn total_weight(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    /// Set equality of atoms within `tol` on points and weights.
    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        self.n_plus_1 == other.n_plus_1
            && self.len() == other.len()
            && self.atoms.iter().all(|a| {
                other
                    .atoms
                    .iter()
                    .any(|b| a.point.distance(&b.point) <= tol && (a.weight - b.weight).abs() <= tol)
            })
    }

    /// The measure of a flat rescaled to a probability measure on the flat,
    /// written in coordinates of the flat. Float measures use the flat's
    /// orthonormal basis; exact measures use its spanning atoms as a basis,
    /// which keeps the coordinates rational.
    pub fn restrict_to_flat(&self, flat: &SupportFlat) -> Result<Self> {
        if let Some(ex) = &self.exact {
            let basis: Vec<Vec<BigInt>> = flat.spanning_atoms.iter().map(|&i| ex.coords[i].clone()).collect();
            let mass = flat.exact_mass.clone().unwrap_or_else(|| {
                flat.atom_indices.iter().fold(BigRational::zero(), |acc, &i| acc + &ex.weights[i])
            });
            let mut atoms = Vec::with_capacity(flat.atom_indices.len());
            for &i in &flat.atom_indices {
                let c = exact::solve_in_span(&basis, &ex.coords[i])
                    .ok_or_else(|| Error::InvalidMeasure(format!("atom {i} is not in the flat")))?;
                atoms.push((c, &ex.weights[i] / &mass));
            }
            return Self::from_rational(flat.dim, atoms);
        }
        let atoms = flat
            .atom_indices
            .iter()
            .map(|&i| (flat.basis.transpose() * self.atoms[i].point.coords(), self.atoms[i].weight))
            .collect();
        Self::from_unnormalized(flat.dim, atoms)
    }
}

/// `g_* nu`: atoms mapped to `[g x_i]` with the same weights; atoms that
/// collide after the map are merged.
pub fn pushforward(g: &SpecialLinear, nu: &AtomicMeasure) -> Result<AtomicMeasure> {
    if g.dim() != nu.n_plus_1 {
        return Err(Error::DimensionMismatch { expected: nu.n_plus_1, got: g.dim() });
    }
    let mut points = Vec::with_capacity(nu.len());
    for (i, a) in nu.atoms.iter().enumerate() {
        let y = g.apply(a.point.coords());
        if y.norm() <= 1e-12 {
            return Err(Error::SingularInput(format!("|g x_{i}| = {:e}", y.norm())));
        }
        points.push((ProjPoint::new(y)?, a.weight));
    }
    Ok(AtomicMeasure::merged(nu.n_plus_1, points))
}

/// Exact pushforward of an exact measure by an invertible rational matrix
/// (rows of `g`). The projective action of `g` agrees with that of
/// `g / det(g)^(1/(n+1))`, so no determinant normalization is needed.
pub fn pushforward_rational(g: &[Vec<BigRational>], nu: &AtomicMeasure) -> Result<AtomicMeasure> {
    let ex = nu.exact.as_ref().ok_or_else(|| Error::InvalidMeasure("measure has no exact data".into()))?;
    let n = nu.n_plus_1;
    if g.len() != n || g.iter().any(|r| r.len() != n) {
        return Err(Error::DimensionMismatch { expected: n, got: g.len() });
    }
    let int_rows: Vec<Vec<BigInt>> = g
        .iter()
        .map(|r| exact::primitive_integer_vector(r).unwrap_or_else(|| vec![BigInt::zero(); n]))
        .collect();
    // Row scaling changes the map, so check invertibility on the true matrix
    // via the rank of the scaled rows (same rank).
    if exact::rank(&int_rows) < n {
        return Err(Error::SingularInput("rational matrix is singular".into()));
    }
    let atoms = ex
        .coords
        .iter()
        .zip(&ex.weights)
        .map(|(x, w)| {
            let y = g
                .iter()
                .map(|row| row.iter().zip(x).fold(BigRational::zero(), |acc, (a, b)| acc + a * BigRational::from_integer(b.clone())))
                .collect();
            (y, w.clone())
        })
        .collect();
    AtomicMeasure::from_rational(n, atoms)
}

/// A linear subspace given by an orthonormal basis (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    basis: DMatrix<f64>,
}

impl Subspace {
    /// Checks orthonormality of the columns within 1e-9.
    pub fn from_orthonormal(basis: DMatrix<f64>) -> Result<Self> {
        let d = basis.ncols();
        let err = (basis.transpose() * &basis - DMatrix::identity(d, d)).amax();
        if err > 1e-9 {
            return Err(Error::InvalidMatrix(format!("basis is not orthonormal (error {err:e})")));
        }
        Ok(Self { basis })
    }

    /// Span of the given vectors.
    pub fn span(vectors: &[DVector<f64>]) -> Self {
        let refs: Vec<&DVector<f64>> = vectors.iter().collect();
        Self { basis: gram_schmidt(&refs, 1e-12).0 }
    }

    pub fn full(n: usize) -> Self {
        Self { basis: DMatrix::identity(n, n) }
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        distance_to_span(&self.basis, x) <= tol
    }
}

/// `nu(P(L))`: total weight of atoms within [`MEMBERSHIP_TOL`] of `L`.
pub fn subspace_mass(nu: &AtomicMeasure, subspace: &Subspace) -> f64 {
    subspace_mass_with(nu, subspace, MEMBERSHIP_TOL)
}

pub fn subspace_mass_with(nu: &AtomicMeasure, subspace: &Subspace, tol: f64) -> f64 {
    nu.atoms.iter().filter(|a| subspace.contains(a.point.coords(), tol)).map(|a| a.weight).sum::<f64>().min(1.0)
}

/// A proper linear subspace spanned by atoms of a measure.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportFlat {
    /// Orthonormal basis, `(n+1) x dim`.
    pub basis: DMatrix<f64>,
    pub dim: usize,
    /// Total weight of the atoms in the flat.
    pub mass: f64,
    /// The same mass in exact arithmetic, for exact measures.
    pub exact_mass: Option<BigRational>,
    /// All atoms lying in the flat, ascending.
    pub atom_indices: Vec<usize>,
    /// `dim` linearly independent atoms among `atom_indices` spanning the flat.
    pub spanning_atoms: Vec<usize>,
}

impl SupportFlat {
    pub fn subspace(&self) -> Subspace {
        Subspace { basis: self.basis.clone() }
    }
}

/// Decides spans and membership for subsets of atoms, in float or exact mode.
pub(crate) struct SpanEngine<'a> {
    nu: &'a AtomicMeasure,
    tol: f64,
}

/// Result of closing a set of atoms under span.
pub(crate) struct Closure {
    pub members: Vec<usize>,
    pub independent: Vec<usize>,
}

impl<'a> SpanEngine<'a> {
    pub fn new(nu: &'a AtomicMeasure, tol: f64) -> Self {
        Self { nu, tol }
    }

    /// Independent subset of `gens` (greedy, in order) and every atom in their span.
    pub fn closure(&self, gens: &[usize]) -> Closure {
        match &self.nu.exact {
            Some(ex) => {
                let mut independent: Vec<usize> = Vec::new();
                let mut rows: Vec<Vec<BigInt>> = Vec::new();
                for &g in gens {
                    rows.push(ex.coords[g].clone());
                    if exact::rank(&rows) > independent.len() {
                        independent.push(g);
                    } else {
                        rows.pop();
                    }
                }
                let r = rows.len();
                let members = (0..self.nu.len())
                    .filter(|&i| {
                        if independent.contains(&i) {
                            return true;
                        }
                        let mut aug = rows.clone();
                        aug.push(ex.coords[i].clone());
                        exact::rank(&aug) == r
                    })
                    .collect();
                Closure { members, independent }
            }
            None => {
                let vecs: Vec<&DVector<f64>> = gens.iter().map(|&g| self.nu.atoms[g].point.coords()).collect();
                let (basis, kept) = gram_schmidt(&vecs, self.tol);
                let independent: Vec<usize> = kept.iter().map(|&k| gens[k]).collect();
                let members = (0..self.nu.len())
                    .filter(|&i| independent.contains(&i) || distance_to_span(&basis, self.nu.atoms[i].point.coords()) <= self.tol)
                    .collect();
                Closure { members, independent }
            }
        }
    }

    /// Rank of the span of the given atoms.
    pub fn rank(&self, atoms: &[usize]) -> usize {
        self.closure(atoms).independent.len()
    }

    pub fn flat(&self, closure: Closure) -> SupportFlat {
        let vecs: Vec<&DVector<f64>> = closure.independent.iter().map(|&g| self.nu.atoms[g].point.coords()).collect();
        let (basis, _) = gram_schmidt(&vecs, 0.0);
        let mass = closure.members.iter().map(|&i| self.nu.atoms[i].weight).sum::<f64>().min(1.0);
        let exact_mass = self
            .nu
            .exact
            .as_ref()
            .map(|ex| closure.members.iter().fold(BigRational::zero(), |acc, &i| acc + &ex.weights[i]));
        SupportFlat {
            basis,
            dim: closure.independent.len(),
            mass,
            exact_mass,
            atom_indices: closure.members,
            spanning_atoms: closure.independent,
        }
    }
}

/// All proper subspaces spanned by nonempty subsets of atoms, deduplicated by
/// their atom membership and sorted by `(dim, atom_indices)`. The ambient
/// space itself is never listed.
pub fn support_flats(nu: &AtomicMeasure) -> Result<Vec<SupportFlat>> {
    support_flats_with(nu, MEMBERSHIP_TOL)
}

pub fn support_flats_with(nu: &AtomicMeasure, tol: f64) -> Result<Vec<SupportFlat>> {
    if nu.len() > MAX_ENUM_ATOMS {
        return Err(Error::TooManyAtoms { count: nu.len(), limit: MAX_ENUM_ATOMS });
    }
    let engine = SpanEngine::new(nu, tol);
    let n1 = nu.n_plus_1;
    let mut found: BTreeMap<(usize, Vec<usize>), SupportFlat> = BTreeMap::new();
    let mut frontier: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    let mut seen: HashMap<Vec<usize>, ()> = HashMap::new();
    for i in 0..nu.len() {
        let c = engine.closure(&[i]);
        if seen.insert(c.members.clone(), ()).is_none() {
            frontier.push((c.members.clone(), c.independent.clone()));
            let f = engine.flat(c);
            if f.dim < n1 {
                found.insert((f.dim, f.atom_indices.clone()), f);
            }
        }
    }
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for (members, independent) in &frontier {
            if independent.len() + 1 >= n1 {
                continue;
            }
            for a in 0..nu.len() {
                if members.binary_search(&a).is_ok() {
                    continue;
                }
                let mut gens = independent.clone();
                gens.push(a);
                let c = engine.closure(&gens);
                if seen.insert(c.members.clone(), ()).is_some() {
                    continue;
                }
                next.push((c.members.clone(), c.independent.clone()));
                let f = engine.flat(c);
                if f.dim < n1 {
                    found.insert((f.dim, f.atom_indices.clone()), f);
                }
            }
        }
        frontier = next;
    }
    Ok(found.into_values().collect())
}

/// Dimension of the span of all atoms.
pub fn support_span_dim(nu: &AtomicMeasure) -> usize {
    let all: Vec<usize> = (0..nu.len()).collect();
    SpanEngine::new(nu, MEMBERSHIP_TOL).rank(&all)
}
