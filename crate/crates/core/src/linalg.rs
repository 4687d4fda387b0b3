//! Dense linear algebra for the pair (SL(n+1, R), SO(n+1)).
//!
//! The tangent space of the symmetric space SL(n+1)/SO(n+1) at the base point
//! is the space of traceless symmetric matrices, paired with itself through
//! `<a, b> = tr(ab)`. Everything here works on small dense matrices; the
//! symmetric exponential and logarithm go through an eigendecomposition.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative tolerance for symmetry and trace checks on construction.
pub const STRUCTURE_TOL: f64 = 1e-12;
/// Accepted determinant drift of a [`SpecialLinear`] after construction.
pub const DET_TOL: f64 = 1e-9;
/// Largest determinant drift that construction silently renormalizes.
pub const DET_RENORMALIZE_TOL: f64 = 1e-6;

/// Element of `sym_0(n+1)`: a traceless symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TracelessSym {
    m: DMatrix<f64>,
}

impl TracelessSym {
    /// Checks symmetry and tracelessness, then symmetrizes and removes the
    /// residual trace exactly.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_square(&m)?;
        if m.nrows() < 2 {
            return Err(Error::InvalidMatrix("dimension must be at least 2".into()));
        }
        let scale = m.amax();
        let asym = (&m - m.transpose()).amax();
        if asym > STRUCTURE_TOL * scale {
            return Err(Error::InvalidMatrix(format!("not symmetric (|M - M^T| = {asym:e})")));
        }
        let trace = m.trace();
        if trace.abs() > STRUCTURE_TOL * (1.0 + m.norm()) {
            return Err(Error::InvalidMatrix(format!("trace {trace:e} is not zero")));
        }
        Ok(Self::project(m).0)
    }

    /// Orthogonal projection of an arbitrary square matrix onto `sym_0`.
    /// Returns the projection and the Frobenius size of the adjustment.
    pub fn project(m: DMatrix<f64>) -> (Self, f64) {
        let n = m.nrows();
        let mut s = (&m + m.transpose()) * 0.5;
        let shift = s.trace() / n as f64;
        for i in 0..n {
            s[(i, i)] -= shift;
        }
        let adjustment = (&s - &m).norm();
        (Self { m: s }, adjustment)
    }

    pub fn zeros(n_plus_1: usize) -> Self {
        Self { m: DMatrix::zeros(n_plus_1, n_plus_1) }
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    /// `sum_j eig_j u_j u_j^T` for orthonormal columns `u_j` of `basis`.
    pub fn from_eigen(basis: &DMatrix<f64>, eigs: &[f64]) -> Self {
        let scaled = DMatrix::from_fn(basis.nrows(), basis.ncols(), |i, j| basis[(i, j)] * eigs[j]);
        Self::project(&scaled * basis.transpose()).0
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.m.norm()
    }

    /// Trace pairing `tr(self * other)`.
    pub fn inner(&self, other: &Self) -> f64 {
        self.m.dot(&other.m)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { m: &self.m * s }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self { m: &self.m + &other.m }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self { m: &self.m - &other.m }
    }

    /// Unit Frobenius-norm rescaling.
    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n <= 1e-12 {
            return Err(Error::ZeroDirection);
        }
        Ok(self.scale(1.0 / n))
    }

    /// `k * self * k^T`.
    pub fn conjugate(&self, k: &DMatrix<f64>) -> Self {
        Self::project(k * &self.m * k.transpose()).0
    }

    /// Frobenius norm of the commutator `[self, other]`.
    pub fn commutator_norm(&self, other: &Self) -> f64 {
        (&self.m * &other.m - &other.m * &self.m).norm()
    }

    /// Quadratic form `x^T self x`.
    pub fn quad(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.m * x))
    }
}

/// Element of SL(n+1, R).
#[derive(Debug, Clone, PartialEq)]
pub struct SpecialLinear {
    m: DMatrix<f64>,
}

impl SpecialLinear {
    /// Accepts matrices with `|det - 1| <= 1e-6`, rescaling by `det^(1/(n+1))`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_square(&m)?;
        let det = m.determinant();
        if !det.is_finite() || (det - 1.0).abs() > DET_RENORMALIZE_TOL {
            return Err(Error::InvalidMatrix(format!("determinant {det} is not 1")));
        }
        if det == 1.0 {
            return Ok(Self { m });
        }
        let s = det.powf(-1.0 / m.nrows() as f64);
        Ok(Self { m: m * s })
    }

    /// Rescales an invertible matrix to determinant one. When the determinant
    /// is negative the first row is negated, so the result is the original map
    /// followed by the reflection in the first coordinate.
    pub fn normalize_invertible(mut m: DMatrix<f64>) -> Result<Self> {
        check_square(&m)?;
        let mut det = m.determinant();
        if !det.is_finite() || det.abs() <= 1e-300 {
            return Err(Error::SingularInput(format!("determinant {det}")));
        }
        if det < 0.0 {
            m.row_mut(0).neg_mut();
            det = -det;
        }
        let s = det.powf(-1.0 / m.nrows() as f64);
        Ok(Self { m: m * s })
    }

    pub(crate) fn from_matrix_unchecked(m: DMatrix<f64>) -> Self {
        Self { m }
    }

    pub fn identity(n_plus_1: usize) -> Self {
        Self { m: DMatrix::identity(n_plus_1, n_plus_1) }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    pub fn mul(&self, other: &Self) -> Self {
        Self { m: &self.m * &other.m }
    }

    pub fn transpose(&self) -> Self {
        Self { m: self.m.transpose() }
    }

    pub fn inverse(&self) -> Result<Self> {
        self.m
            .clone()
            .try_inverse()
            .map(|m| Self { m })
            .ok_or_else(|| Error::SingularInput("matrix is not invertible".into()))
    }

    pub fn is_orthogonal(&self, tol: f64) -> bool {
        let n = self.dim();
        (self.m.transpose() * &self.m - DMatrix::identity(n, n)).amax() <= tol
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.m * x
    }
}

/// Eigenvalues of a traceless symmetric matrix grouped by a tolerance, in
/// strictly descending order, with an orthonormal basis of each eigenspace.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralData {
    pub eigs: Vec<f64>,
    pub spaces: Vec<DMatrix<f64>>,
    pub group_tol: f64,
}

impl SpectralData {
    pub fn dims(&self) -> Vec<usize> {
        self.spaces.iter().map(|v| v.ncols()).collect()
    }

    pub fn len(&self) -> usize {
        self.eigs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigs.is_empty()
    }

    /// Orthonormal basis of `V_j + ... + V_k` (zero-based `j`).
    pub fn tail_basis(&self, j: usize) -> DMatrix<f64> {
        let n = self.spaces[0].nrows();
        let cols: usize = self.spaces[j..].iter().map(|v| v.ncols()).sum();
        let mut out = DMatrix::zeros(n, cols);
        let mut c = 0;
        for v in &self.spaces[j..] {
            out.columns_mut(c, v.ncols()).copy_from(v);
            c += v.ncols();
        }
        out
    }

    /// `sum_j eig_j P_{V_j}`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let n = self.spaces[0].nrows();
        let mut out = DMatrix::zeros(n, n);
        for (lambda, v) in self.eigs.iter().zip(&self.spaces) {
            out += v * v.transpose() * *lambda;
        }
        out
    }

    /// Smallest distance between consecutive grouped eigenvalues; infinite for
    /// a single group.
    pub fn min_gap(&self) -> f64 {
        self.eigs.windows(2).map(|w| w[0] - w[1]).fold(f64::INFINITY, f64::min)
    }
}

/// Default grouping tolerance `1e-8 (1 + |xi|_F)`.
pub fn default_group_tol(xi: &TracelessSym) -> f64 {
    1e-8 * (1.0 + xi.norm())
}

/// Raw eigendecomposition with descending eigenvalues and sign-canonical
/// eigenvectors (first entry above 1e-12 in magnitude is positive).
pub fn sorted_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(i).into_owned();
        canonicalize_sign(&mut col);
        vectors.set_column(c, &col);
    }
    (values, vectors)
}

/// Spectral decomposition with eigenvalues merged when consecutive sorted
/// values differ by at most `group_tol` (the transitive closure of
/// `|l_i - l_j| <= group_tol`). Each group is represented by its mean.
pub fn spectral(xi: &TracelessSym, group_tol: f64) -> SpectralData {
    let (values, vectors) = sorted_eigen(xi.matrix());
    let n = values.len();
    let mut eigs = Vec::new();
    let mut spaces = Vec::new();
    let mut start = 0;
    for i in 1..=n {
        if i == n || values[i - 1] - values[i] > group_tol {
            let group = &values[start..i];
            eigs.push(group.iter().sum::<f64>() / group.len() as f64);
            spaces.push(vectors.columns(start, i - start).into_owned());
            start = i;
        }
    }
    SpectralData { eigs, spaces, group_tol }
}

/// Symmetric positive-definite exponential with determinant one.
pub fn exp_sym(xi: &TracelessSym) -> SpecialLinear {
    let (values, vectors) = sorted_eigen(xi.matrix());
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let exps: Vec<f64> = values.iter().map(|l| (l - mean).exp()).collect();
    let scaled = DMatrix::from_fn(vectors.nrows(), vectors.ncols(), |i, j| vectors[(i, j)] * exps[j]);
    let m = &scaled * vectors.transpose();
    SpecialLinear::from_matrix_unchecked((&m + m.transpose()) * 0.5)
}

/// Cartan decomposition `g = k exp(xi)` with `k` orthogonal and
/// `xi = 1/2 log(g^T g)`.
pub fn polar_cartan(g: &SpecialLinear) -> Result<(SpecialLinear, TracelessSym)> {
    let gtg = g.matrix().transpose() * g.matrix();
    let gtg = (&gtg + gtg.transpose()) * 0.5;
    let (values, vectors) = sorted_eigen(&gtg);
    let top = values[0].abs().max(1.0);
    if values.iter().any(|&v| v <= 1e-14 * top) {
        return Err(Error::SingularInput("g^T g is not positive definite".into()));
    }
    let half_logs: Vec<f64> = values.iter().map(|v| 0.5 * v.ln()).collect();
    let xi = TracelessSym::from_eigen(&vectors, &half_logs);
    let inv_exp: Vec<f64> = half_logs.iter().map(|l| (-l).exp()).collect();
    let p_inv = {
        let s = DMatrix::from_fn(vectors.nrows(), vectors.ncols(), |i, j| vectors[(i, j)] * inv_exp[j]);
        &s * vectors.transpose()
    };
    let k = g.matrix() * p_inv;
    Ok((SpecialLinear::from_matrix_unchecked(k), xi))
}

/// One step of the right Cartan factor under left multiplication:
/// given `xi = U diag(beta) U^T` and a symmetric `a`, returns an orthogonal
/// `r` and the spectral form of `xi'` with `exp(a) exp(xi) = r exp(xi')`.
///
/// The product is formed as `U (S D) U^T` with `S = U^T exp(a) U` and
/// `D = diag(e^beta)`; the SVD of the column-graded `S D` is taken with
/// one-sided Jacobi, which keeps relative accuracy in the small singular
/// values even when `beta` spans many orders of magnitude.
pub fn polar_left_step(u: &DMatrix<f64>, beta: &[f64], a: &TracelessSym) -> (DMatrix<f64>, DMatrix<f64>, Vec<f64>) {
    let n = u.nrows();
    let exp_a = exp_sym(a).into_matrix();
    let s = u.transpose() * exp_a * u;
    let graded = DMatrix::from_fn(n, n, |i, j| s[(i, j)] * beta[j].exp());
    let (w, sigma, v) = one_sided_jacobi(graded);
    let mut new_beta: Vec<f64> = sigma.iter().map(|s| s.ln()).collect();
    let mean = new_beta.iter().sum::<f64>() / n as f64;
    for b in &mut new_beta {
        *b -= mean;
    }
    let new_u = orthonormalize_columns(&(u * &v));
    let r = u * w * v.transpose() * u.transpose();
    (r, new_u, new_beta)
}

/// Hestenes one-sided Jacobi SVD: returns `(W, sigma, V)` with `A V = W diag(sigma)`,
/// `W` and `V` orthogonal.
pub fn one_sided_jacobi(mut a: DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let n = a.ncols();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dot(&a.column(q));
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_columns(&mut a, p, q, c, s);
                rotate_columns(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let sigma: Vec<f64> = (0..n).map(|j| a.column(j).norm()).collect();
    for (j, s) in sigma.iter().enumerate() {
        a.column_mut(j).scale_mut(1.0 / s);
    }
    (a, sigma, v)
}

fn rotate_columns(m: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    for i in 0..m.nrows() {
        let mp = m[(i, p)];
        let mq = m[(i, q)];
        m[(i, p)] = c * mp - s * mq;
        m[(i, q)] = s * mp + c * mq;
    }
}

/// Modified Gram-Schmidt on the columns of a nearly orthogonal square matrix.
pub fn orthonormalize_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for j in 0..out.ncols() {
        for _ in 0..2 {
            for i in 0..j {
                let proj = out.column(i).dot(&out.column(j));
                let ci = out.column(i).into_owned();
                out.column_mut(j).axpy(-proj, &ci, 1.0);
            }
        }
        let nrm = out.column(j).norm();
        out.column_mut(j).scale_mut(1.0 / nrm);
    }
    out
}

/// Grows an orthonormal basis from `vectors`, skipping any whose residual
/// against the current span has norm at most `tol`. Returns the basis
/// (columns) and the indices of the vectors that were kept.
pub fn gram_schmidt(vectors: &[&DVector<f64>], tol: f64) -> (DMatrix<f64>, Vec<usize>) {
    let dim = vectors.first().map_or(0, |v| v.len());
    let mut cols: Vec<DVector<f64>> = Vec::new();
    let mut kept = Vec::new();
    for (idx, v) in vectors.iter().enumerate() {
        let mut r = (*v).clone();
        for _ in 0..2 {
            for q in &cols {
                let p = q.dot(&r);
                r.axpy(-p, q, 1.0);
            }
        }
        let nrm = r.norm();
        if nrm > tol {
            cols.push(r / nrm);
            kept.push(idx);
        }
    }
    let mut basis = DMatrix::zeros(dim, cols.len());
    for (j, c) in cols.iter().enumerate() {
        basis.set_column(j, c);
    }
    (basis, kept)
}

/// Orthonormal basis of the orthogonal complement of the column span of an
/// orthonormal `basis`.
pub fn complement_basis(basis: &DMatrix<f64>) -> DMatrix<f64> {
    let n = basis.nrows();
    let proj = basis * basis.transpose();
    let id = DMatrix::<f64>::identity(n, n);
    let resid = &id - &proj;
    let mut candidates: Vec<DVector<f64>> = (0..n).map(|j| resid.column(j).into_owned()).collect();
    candidates.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
    let mut all: Vec<DVector<f64>> = (0..basis.ncols()).map(|j| basis.column(j).into_owned()).collect();
    all.extend(candidates);
    let refs: Vec<&DVector<f64>> = all.iter().collect();
    let (full, _) = gram_schmidt(&refs, 1e-8);
    full.columns(basis.ncols(), n - basis.ncols()).into_owned()
}

/// Distance from `x` to the column span of an orthonormal `basis`.
pub fn distance_to_span(basis: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    if basis.ncols() == 0 {
        return x.norm();
    }
    let coeffs = basis.transpose() * x;
    (x - basis * coeffs).norm()
}

/// First entry with magnitude above 1e-12 made positive.
pub fn canonicalize_sign(v: &mut DVector<f64>) {
    if let Some(first) = v.iter().find(|c| c.abs() > 1e-12) {
        if *first < 0.0 {
            v.neg_mut();
        }
    }
}

fn check_square(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::InvalidMatrix(format!("{}x{} is not a non-empty square", m.nrows(), m.ncols())));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidMatrix("non-finite entry".into()));
    }
    Ok(())
}
