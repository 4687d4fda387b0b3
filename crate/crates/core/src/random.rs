//! Seeded samplers for group elements, directions, and measures.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::linalg::{exp_sym, SpecialLinear, TracelessSym};

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn gaussian_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| gaussian(rng))
}

/// Haar-distributed element of SO(n).
pub fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> SpecialLinear {
    let a = DMatrix::from_fn(n, n, |_, _| gaussian(rng));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    if q.determinant() < 0.0 {
        q.column_mut(0).neg_mut();
    }
    SpecialLinear::from_matrix_unchecked(q)
}

/// Traceless symmetric matrix with independent Gaussian entries (GOE shape).
pub fn random_traceless<R: Rng + ?Sized>(n: usize, rng: &mut R) -> TracelessSym {
    let a = DMatrix::from_fn(n, n, |_, _| gaussian(rng));
    TracelessSym::project(a).0
}

/// Uniform point of the unit sphere in `sym_0(n)`.
pub fn random_direction<R: Rng + ?Sized>(n: usize, rng: &mut R) -> TracelessSym {
    loop {
        let xi = random_traceless(n, rng);
        if let Ok(u) = xi.normalized() {
            return u;
        }
    }
}

/// `k exp(xi)` with Haar `k` and `|xi|_F <= max_norm`.
pub fn random_special_linear<R: Rng + ?Sized>(n: usize, max_norm: f64, rng: &mut R) -> SpecialLinear {
    let k = random_orthogonal(n, rng);
    let r: f64 = rng.random_range(0.0..max_norm);
    let xi = random_direction(n, rng).scale(r);
    k.mul(&exp_sym(&xi))
}

/// Weights drawn uniformly and normalized to sum one.
pub fn random_weights<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}
