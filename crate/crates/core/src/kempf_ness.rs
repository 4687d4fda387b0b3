//! The Kempf-Ness system of probability measures on RP^n under SL(n+1, R):
//! gradient map, Kempf-Ness function, maximal weights, and a residual
//! harness for the axioms a Kempf-Ness function must satisfy.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{default_group_tol, exp_sym, spectral, SpecialLinear, SpectralData, TracelessSym};
use crate::measures::{pushforward, subspace_mass_with, AtomicMeasure, ProjPoint, Subspace, MEMBERSHIP_TOL};

/// A unit vector of `sym_0(n+1)`, standing for a point at infinity of the
/// symmetric space.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    xi: TracelessSym,
}

impl Direction {
    /// Normalizes `xi`; fails with `ZeroDirection` when `|xi|_F <= 1e-12`.
    pub fn new(xi: &TracelessSym) -> Result<Self> {
        Ok(Self { xi: xi.normalized()? })
    }

    pub fn xi(&self) -> &TracelessSym {
        &self.xi
    }

    pub fn into_inner(self) -> TracelessSym {
        self.xi
    }
}

/// `mu(x) = 1/2 (x x^T - Id/(n+1))` for a unit representative `x`.
pub fn moment_mu(x: &ProjPoint) -> TracelessSym {
    let v = x.coords();
    let n = v.len();
    let mut m = v * v.transpose();
    for i in 0..n {
        m[(i, i)] -= 1.0 / n as f64;
    }
    TracelessSym::project(m * 0.5).0
}

/// Gradient map of a measure: `sum_i w_i mu(x_i)`.
pub fn grad_f(nu: &AtomicMeasure) -> TracelessSym {
    let n = nu.n_plus_1();
    let mut m = DMatrix::zeros(n, n);
    for a in nu.atoms() {
        let v = a.point.coords();
        m += v * v.transpose() * a.weight;
    }
    let total = nu.total_weight();
    for i in 0..n {
        m[(i, i)] -= total / n as f64;
    }
    TracelessSym::project(m * 0.5).0
}

/// `Psi(nu, g) = 1/4 sum_i w_i log |g x_i|^2`.
pub fn kn_function(nu: &AtomicMeasure, g: &SpecialLinear) -> Result<f64> {
    if g.dim() != nu.n_plus_1() {
        return Err(Error::DimensionMismatch { expected: nu.n_plus_1(), got: g.dim() });
    }
    let mut total = 0.0;
    for (i, a) in nu.atoms().iter().enumerate() {
        let y = g.apply(a.point.coords());
        let norm = y.norm();
        if norm <= 1e-12 {
            return Err(Error::SingularInput(format!("|g x_{i}| = {norm:e}")));
        }
        total += a.weight * 2.0 * norm.ln();
    }
    Ok(0.25 * total)
}

/// Morse-Bott data of the height function `x -> <mu(x), xi>`: eigenvalue
/// groups `l_1 > ... > l_k`, critical values `c_j = l_j / 2`, and masses
/// `m_j = nu(W_j)` of the unstable manifolds.
#[derive(Debug, Clone, PartialEq)]
pub struct MorseBottDecomposition {
    pub spectrum: SpectralData,
    pub critical_values: Vec<f64>,
    pub unstable_masses: Vec<f64>,
}

impl MorseBottDecomposition {
    /// `sum_j c_j m_j`.
    pub fn weight(&self) -> f64 {
        self.critical_values.iter().zip(&self.unstable_masses).map(|(c, m)| c * m).sum()
    }
}

pub fn morse_bott(nu: &AtomicMeasure, xi: &TracelessSym, group_tol: f64) -> Result<MorseBottDecomposition> {
    if xi.dim() != nu.n_plus_1() {
        return Err(Error::DimensionMismatch { expected: nu.n_plus_1(), got: xi.dim() });
    }
    if xi.norm() <= 1e-12 {
        return Err(Error::ZeroDirection);
    }
    Ok(morse_bott_spectral(nu, spectral(xi, group_tol)))
}

pub(crate) fn morse_bott_spectral(nu: &AtomicMeasure, spectrum: SpectralData) -> MorseBottDecomposition {
    let k = spectrum.len();
    let mut tails = vec![0.0; k + 1];
    tails[0] = 1.0;
    for (j, tail) in tails.iter_mut().enumerate().take(k).skip(1) {
        let sub = Subspace::from_orthonormal(spectrum.tail_basis(j)).expect("eigenbasis is orthonormal");
        *tail = subspace_mass_with(nu, &sub, MEMBERSHIP_TOL);
    }
    let unstable_masses = (0..k).map(|j| (tails[j] - tails[j + 1]).max(0.0)).collect();
    let critical_values = spectrum.eigs.iter().map(|l| 0.5 * l).collect();
    MorseBottDecomposition { spectrum, critical_values, unstable_masses }
}

/// Maximal weight `lambda_nu(e(-xi/|xi|))` from the Morse-Bott data of the
/// normalized direction. It equals the asymptotic slope of
/// `t -> Psi(nu, exp(t xi/|xi|))`.
pub fn maximal_weight(nu: &AtomicMeasure, xi: &TracelessSym) -> Result<f64> {
    let unit = Direction::new(xi)?;
    let tol = default_group_tol(unit.xi());
    Ok(morse_bott(nu, unit.xi(), tol)?.weight())
}

/// `Lambda(nu, xi) = |xi|_F * maximal_weight(nu, xi)`, zero at `xi = 0`.
pub fn big_lambda(nu: &AtomicMeasure, xi: &TracelessSym) -> Result<f64> {
    if xi.norm() <= 1e-12 {
        return Ok(0.0);
    }
    Ok(xi.norm() * maximal_weight(nu, xi)?)
}

/// Squared components of each atom in the eigenspaces of `spectrum`, with the
/// leading groups set to zero while the atom is within membership tolerance
/// of the remaining tail.
fn ray_components(nu: &AtomicMeasure, spectrum: &SpectralData) -> Vec<Vec<f64>> {
    nu.atoms()
        .iter()
        .map(|a| {
            let mut comps: Vec<f64> = spectrum.spaces.iter().map(|v| (v.transpose() * a.point.coords()).norm_squared()).collect();
            let mut head = 0.0;
            for c in comps.iter_mut().take(spectrum.len() - 1) {
                head += *c;
                if head.sqrt() > MEMBERSHIP_TOL {
                    break;
                }
                *c = 0.0;
            }
            comps
        })
        .collect()
}

/// `Psi(nu, exp(t xi))` evaluated in the eigenbasis of `xi` with a
/// log-sum-exp, usable at large `t`.
pub fn psi_along_ray(nu: &AtomicMeasure, xi: &TracelessSym, t: f64) -> Result<f64> {
    if xi.dim() != nu.n_plus_1() {
        return Err(Error::DimensionMismatch { expected: nu.n_plus_1(), got: xi.dim() });
    }
    let spectrum = spectral(xi, default_group_tol(xi));
    let comps = ray_components(nu, &spectrum);
    let mut total = 0.0;
    for (a, c) in nu.atoms().iter().zip(&comps) {
        let exps: Vec<(f64, f64)> = spectrum.eigs.iter().zip(c).filter(|(_, &c)| c > 0.0).map(|(l, &c)| (2.0 * t * l, c)).collect();
        let top = exps.iter().map(|(e, _)| *e).fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = exps.iter().map(|(e, c)| c * (e - top).exp()).sum();
        total += a.weight * (top + s.ln());
    }
    Ok(0.25 * total)
}

/// Exact derivative of `t -> Psi(nu, exp(t xi))` at `t`, from the same
/// spectral form as [`psi_along_ray`].
pub fn ray_slope(nu: &AtomicMeasure, xi: &TracelessSym, t: f64) -> Result<f64> {
    if xi.dim() != nu.n_plus_1() {
        return Err(Error::DimensionMismatch { expected: nu.n_plus_1(), got: xi.dim() });
    }
    let spectrum = spectral(xi, default_group_tol(xi));
    let comps = ray_components(nu, &spectrum);
    let mut total = 0.0;
    for (a, c) in nu.atoms().iter().zip(&comps) {
        let exps: Vec<(f64, f64, f64)> =
            spectrum.eigs.iter().zip(c).filter(|(_, &c)| c > 0.0).map(|(l, &c)| (2.0 * t * l, c, *l)).collect();
        let top = exps.iter().map(|(e, _, _)| *e).fold(f64::NEG_INFINITY, f64::max);
        let (mut num, mut den) = (0.0, 0.0);
        for (e, c, l) in exps {
            let p = c * (e - top).exp();
            num += l * p;
            den += p;
        }
        total += a.weight * 0.5 * num / den;
    }
    Ok(total)
}

/// Time along the unit ray at which the slope has settled to its limit:
/// `max(40, 20 / gap)` for the smallest eigenvalue gap of `xi/|xi|`. The
/// remaining error is about `gap * exp(-40) * r`, where `r` is the largest
/// ratio between an atom's components in adjacent eigenspaces.
pub fn limit_horizon(xi: &TracelessSym) -> Result<f64> {
    let unit = xi.normalized()?;
    let gap = spectral(&unit, default_group_tol(&unit)).min_gap();
    Ok(if gap.is_finite() { (20.0 / gap).max(40.0) } else { 40.0 })
}

/// Slope of `Psi(nu, exp(t xi/|xi|))` at `t` (the numerical-limit side of
/// [`maximal_weight`]).
pub fn numerical_limit_weight(nu: &AtomicMeasure, xi: &TracelessSym, t: f64) -> Result<f64> {
    let unit = xi.normalized()?;
    ray_slope(nu, &unit, t)
}

/// Gradient map of the torus of matrices diagonal in `frame`: the diagonal
/// of `frame^T grad_f(nu) frame`.
pub fn abelian_moment(nu: &AtomicMeasure, frame: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = nu.n_plus_1();
    if frame.nrows() != n || frame.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: frame.nrows() });
    }
    let err = (frame.transpose() * frame - DMatrix::identity(n, n)).amax();
    if err > 1e-9 {
        return Err(Error::InvalidMatrix(format!("frame is not orthonormal (error {err:e})")));
    }
    let f = grad_f(nu);
    Ok((frame.transpose() * f.matrix() * frame).diagonal())
}

/// Data for one evaluation of the axiom harness.
#[derive(Debug, Clone)]
pub struct AxiomInstance {
    pub g: SpecialLinear,
    pub h: SpecialLinear,
    /// Orthogonal element for the K-invariance check.
    pub k: SpecialLinear,
    pub xi: TracelessSym,
    pub t_grid: Vec<f64>,
}

impl AxiomInstance {
    /// Evenly spaced grid of `count` points on `[-t_max, t_max]`.
    pub fn grid(t_max: f64, count: usize) -> Vec<f64> {
        (0..count).map(|i| -t_max + 2.0 * t_max * i as f64 / (count - 1) as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AxiomResidual {
    pub axiom: &'static str,
    pub check: &'static str,
    pub residual: f64,
    pub bound: f64,
}

impl AxiomResidual {
    pub fn passed(&self) -> bool {
        self.residual <= self.bound
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AxiomReport {
    pub residuals: Vec<AxiomResidual>,
}

impl AxiomReport {
    pub fn passed(&self) -> bool {
        self.residuals.iter().all(AxiomResidual::passed)
    }

    pub fn first_failure(&self) -> Option<&AxiomResidual> {
        self.residuals.iter().find(|r| !r.passed())
    }

    pub fn get(&self, check: &str) -> Option<&AxiomResidual> {
        self.residuals.iter().find(|r| r.check == check)
    }
}

pub const AXIOM_BOUND: f64 = 1e-8;
/// Second derivative below which a ray counts as flat.
pub const FLAT_TOL: f64 = 1e-8;
/// An atom with `|xi x - (x^T xi x) x| <= FIXED_TOL` is fixed by `exp(t xi)`.
pub const FIXED_TOL: f64 = 1e-4;

/// Residuals of the Kempf-Ness axioms for `Psi = kn_function`.
pub fn axiom_residuals(nu: &AtomicMeasure, inst: &AxiomInstance) -> Result<AxiomReport> {
    axiom_residuals_with(nu, inst, &kn_function)
}

/// Residuals of the Kempf-Ness axioms for an arbitrary candidate `psi`,
/// listed in axiom order:
/// P1 normalization `Psi(nu, Id) = 0`; P2 left K-invariance; P3 convexity
/// along the ray and flatness exactly when all atoms are fixed; P4 cocycle;
/// P5 derivative at the identity equal to `<grad_f(nu), xi>`; P6 slope
/// bounded by `1/2 max |eig(xi)|`.
pub fn axiom_residuals_with<F>(nu: &AtomicMeasure, inst: &AxiomInstance, psi: &F) -> Result<AxiomReport>
where
    F: Fn(&AtomicMeasure, &SpecialLinear) -> Result<f64>,
{
    let n = nu.n_plus_1();
    let id = SpecialLinear::identity(n);
    let along = |t: f64| psi(nu, &exp_sym(&inst.xi.scale(t)));
    let mut residuals = Vec::new();
    let mut push = |axiom, check, residual: f64| residuals.push(AxiomResidual { axiom, check, residual, bound: AXIOM_BOUND });

    push("P1", "normalization", psi(nu, &id)?.abs());

    let kg = inst.k.mul(&inst.g);
    push("P2", "k_invariance", (psi(nu, &kg)? - psi(nu, &inst.g)?).abs());

    let values: Vec<f64> = inst.t_grid.iter().map(|&t| along(t)).collect::<Result<_>>()?;
    let worst = values.windows(3).map(|w| w[0] - 2.0 * w[1] + w[2]).fold(0.0, f64::min);
    push("P3", "convexity", -worst);

    let h = 1e-3;
    let f = [along(-2.0 * h)?, along(-h)?, along(0.0)?, along(h)?, along(2.0 * h)?];
    let second = (-f[0] + 16.0 * f[1] - 30.0 * f[2] + 16.0 * f[3] - f[4]) / (12.0 * h * h);
    let displacement = nu
        .atoms()
        .iter()
        .map(|a| {
            let x = a.point.coords();
            let y = inst.xi.matrix() * x;
            (&y - x * x.dot(&y)).norm()
        })
        .fold(0.0, f64::max);
    let flat = second <= FLAT_TOL;
    let fixed = displacement <= FIXED_TOL;
    push("P3", "flatness", if flat == fixed { 0.0 } else { second.abs() + displacement * displacement });

    let gnu = pushforward(&inst.g, nu)?;
    let hg = inst.h.mul(&inst.g);
    push("P4", "cocycle", (psi(nu, &inst.g)? + psi(&gnu, &inst.h)? - psi(nu, &hg)?).abs());

    let first = (f[0] - 8.0 * f[1] + 8.0 * f[3] - f[4]) / (12.0 * h);
    push("P5", "gradient_consistency", (first - grad_f(nu).inner(&inst.xi)).abs());

    let bound = 0.5 * inst.xi.matrix().symmetric_eigenvalues().amax();
    let mut excess: f64 = 0.0;
    for w in inst.t_grid.windows(2).zip(values.windows(2)) {
        let ((t0, t1), (v0, v1)) = ((w.0[0], w.0[1]), (w.1[0], w.1[1]));
        if t1 > t0 {
            excess = excess.max(((v1 - v0) / (t1 - t0)).abs() - bound);
        }
    }
    push("P6", "lipschitz", excess.max(0.0));

    Ok(AxiomReport { residuals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{gaussian_vector, random_direction, random_orthogonal, random_special_linear, random_weights};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn diag(d: &[f64]) -> TracelessSym {
        TracelessSym::from_diagonal(d).unwrap()
    }

    fn two_point() -> AtomicMeasure {
        AtomicMeasure::new(2, vec![(v(&[1.0, 0.0]), 0.5), (v(&[0.0, 1.0]), 0.5)]).unwrap()
    }

    fn random_measure(n1: usize, m: usize, rng: &mut ChaCha8Rng) -> AtomicMeasure {
        let w = random_weights(m, rng);
        AtomicMeasure::new(n1, w.into_iter().map(|w| (gaussian_vector(n1, rng), w)).collect()).unwrap()
    }

    #[test]
    fn moment_map_values() {
        let mu = moment_mu(&ProjPoint::from_slice(&[1.0, 0.0]).unwrap());
        assert!((mu.matrix() - diag(&[0.25, -0.25]).matrix()).amax() < 1e-15);
        let s = 1.0 / 3f64.sqrt();
        let mu = moment_mu(&ProjPoint::from_slice(&[s, s, s]).unwrap());
        let expected = (DMatrix::from_element(3, 3, 1.0 / 3.0) - DMatrix::identity(3, 3) / 3.0) * 0.5;
        assert!((mu.matrix() - expected).amax() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n1 in 2..6 {
            let p = ProjPoint::new(gaussian_vector(n1, &mut rng)).unwrap();
            let norm = moment_mu(&p).norm();
            assert!((norm - 0.5 * ((n1 - 1) as f64 / n1 as f64).sqrt()).abs() < 1e-14);
        }
    }

    #[test]
    fn gradient_map_values() {
        assert!(grad_f(&two_point()).norm() < 1e-15);
        for n1 in 2..6 {
            let atoms = (0..n1).map(|i| (DVector::from_fn(n1, |r, _| if r == i { 1.0 } else { 0.0 }), 1.0 / n1 as f64)).collect();
            assert!(grad_f(&AtomicMeasure::new(n1, atoms).unwrap()).norm() < 1e-15);
        }
        let delta = AtomicMeasure::new(2, vec![(v(&[1.0, 0.0]), 1.0)]).unwrap();
        assert!((grad_f(&delta).matrix() - diag(&[0.25, -0.25]).matrix()).amax() < 1e-15);
    }

    #[test]
    fn gradient_map_is_k_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n1 in 2..5 {
            let nu = random_measure(n1, 5, &mut rng);
            let k = random_orthogonal(n1, &mut rng);
            let lhs = grad_f(&pushforward(&k, &nu).unwrap());
            let rhs = grad_f(&nu).conjugate(k.matrix());
            assert!(lhs.sub(&rhs).norm() < 1e-13);
        }
    }

    #[test]
    fn gradient_in_convex_hull_of_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n1 in 2..5 {
            let nu = random_measure(n1, 4, &mut rng);
            let f = grad_f(&nu);
            for _ in 0..50 {
                let xi = random_direction(n1, &mut rng);
                let best = nu.atoms().iter().map(|a| moment_mu(&a.point).inner(&xi)).fold(f64::NEG_INFINITY, f64::max);
                assert!(f.inner(&xi) <= best + 1e-14);
            }
        }
    }

    #[test]
    fn kempf_ness_values() {
        let delta = AtomicMeasure::new(2, vec![(v(&[1.0, 0.0]), 1.0)]).unwrap();
        assert_eq!(kn_function(&delta, &SpecialLinear::identity(2)).unwrap(), 0.0);
        for &t in &[-1.5, 0.3, 2.0] {
            let g = exp_sym(&diag(&[t, -t]));
            assert!((kn_function(&delta, &g).unwrap() - t / 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn kempf_ness_derivative_is_moment_at_flowed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n1 in 2..5 {
            for _ in 0..10 {
                let x = ProjPoint::new(gaussian_vector(n1, &mut rng)).unwrap();
                let nu = AtomicMeasure::new(n1, vec![(x.coords().clone(), 1.0)]).unwrap();
                let xi = random_direction(n1, &mut rng);
                let t0 = 0.7;
                let h = 1e-4;
                let psi = |t: f64| kn_function(&nu, &exp_sym(&xi.scale(t))).unwrap();
                let fd = (psi(t0 + h) - psi(t0 - h)) / (2.0 * h);
                let flowed = ProjPoint::new(exp_sym(&xi.scale(t0)).apply(x.coords())).unwrap();
                assert!((fd - moment_mu(&flowed).inner(&xi)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn kempf_ness_singular_guard() {
        let nu = AtomicMeasure::new(2, vec![(v(&[0.0, 1.0]), 1.0)]).unwrap();
        let g = SpecialLinear::from_matrix_unchecked(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        assert!(matches!(kn_function(&nu, &g), Err(Error::SingularInput(_))));
    }

    #[test]
    fn morse_bott_examples() {
        let mb = morse_bott(&two_point(), &diag(&[1.0, -1.0]), 1e-8).unwrap();
        assert_eq!(mb.unstable_masses, vec![0.5, 0.5]);
        assert_eq!(mb.critical_values, vec![0.5, -0.5]);

        let top = AtomicMeasure::new(3, vec![(v(&[1.0, 0.0, 0.0]), 0.5), (v(&[0.0, 1.0, 0.0]), 0.5)]).unwrap();
        let mb = morse_bott(&top, &diag(&[1.0, 1.0, -2.0]), 1e-8).unwrap();
        assert_eq!(mb.spectrum.dims(), vec![2, 1]);
        assert_eq!(mb.unstable_masses, vec![1.0, 0.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n1 in 2..5 {
            let nu = random_measure(n1, 4, &mut rng);
            let xi = random_direction(n1, &mut rng);
            let mb = morse_bott(&nu, &xi, 1e-8).unwrap();
            assert!((mb.unstable_masses.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(morse_bott(&top, &TracelessSym::zeros(3), 1e-8), Err(Error::ZeroDirection));
    }

    #[test]
    fn maximal_weight_examples() {
        let xi = diag(&[1.0, -1.0]).scale(1.0 / 2f64.sqrt());
        assert!(maximal_weight(&two_point(), &xi).unwrap().abs() < 1e-15);

        let p3 = AtomicMeasure::new(3, vec![(v(&[0.0, 0.0, 1.0]), 1.0)]).unwrap();
        let xi = diag(&[1.0, 1.0, -2.0]).scale(1.0 / 6f64.sqrt());
        assert!((maximal_weight(&p3, &xi).unwrap() + 1.0 / 6f64.sqrt()).abs() < 1e-14);

        assert_eq!(maximal_weight(&p3, &TracelessSym::zeros(3)), Err(Error::ZeroDirection));
    }

    /// Closed form on RP^1: with xi = diag(1,-1)/sqrt(2), the weight is
    /// (l_1/2)(1 - 2 nu(p_2)) where p_2 = [0:1].
    #[test]
    fn maximal_weight_rp1_formula() {
        let l1 = 1.0 / 2f64.sqrt();
        let xi = diag(&[l1, -l1]);
        for &m in &[0.0, 0.2, 0.5, 0.9] {
            let mut atoms = vec![(v(&[1.0, 0.3]), 1.0 - m)];
            if m > 0.0 {
                atoms.push((v(&[0.0, 1.0]), m));
            }
            let nu = AtomicMeasure::new(2, atoms).unwrap();
            assert!((maximal_weight(&nu, &xi).unwrap() - 0.5 * l1 * (1.0 - 2.0 * m)).abs() < 1e-14);
        }
    }

    #[test]
    fn big_lambda_homogeneity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        assert_eq!(big_lambda(&two_point(), &TracelessSym::zeros(2)).unwrap(), 0.0);
        for n1 in 2..5 {
            let nu = random_measure(n1, 3, &mut rng);
            let xi = random_direction(n1, &mut rng).scale(1.7);
            let a = big_lambda(&nu, &xi).unwrap();
            let b = big_lambda(&nu, &xi.scale(2.0)).unwrap();
            assert!((b - 2.0 * a).abs() < 1e-12);
            assert!((maximal_weight(&nu, &xi).unwrap() - maximal_weight(&nu, &xi.scale(5.0)).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn maximal_weight_k_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n1 in 2..5 {
            for _ in 0..10 {
                let nu = random_measure(n1, 4, &mut rng);
                let xi = random_direction(n1, &mut rng);
                let k = random_orthogonal(n1, &mut rng);
                let lhs = maximal_weight(&pushforward(&k, &nu).unwrap(), &xi.conjugate(k.matrix())).unwrap();
                assert!((lhs - maximal_weight(&nu, &xi).unwrap()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ray_forms_agree_with_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for n1 in 2..5 {
            let nu = random_measure(n1, 4, &mut rng);
            let xi = random_direction(n1, &mut rng);
            for &t in &[-1.0, 0.0, 0.5, 2.0] {
                let direct = kn_function(&nu, &exp_sym(&xi.scale(t))).unwrap();
                assert!((psi_along_ray(&nu, &xi, t).unwrap() - direct).abs() < 1e-12);
                let h = 1e-5;
                let fd = (psi_along_ray(&nu, &xi, t + h).unwrap() - psi_along_ray(&nu, &xi, t - h).unwrap()) / (2.0 * h);
                assert!((ray_slope(&nu, &xi, t).unwrap() - fd).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn limit_slope_matches_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n1 in 2..5 {
            for _ in 0..20 {
                let xi = random_direction(n1, &mut rng);
                let spectrum = spectral(&xi, 1e-8);
                // Atoms inside tails of the eigenflag so that several W_j carry mass.
                let mut atoms = Vec::new();
                for j in 0..spectrum.len() {
                    let tail = spectrum.tail_basis(j);
                    let c = gaussian_vector(tail.ncols(), &mut rng);
                    atoms.push((&tail * c, 1.0 / spectrum.len() as f64));
                }
                let nu = AtomicMeasure::new(n1, atoms).unwrap();
                let t = limit_horizon(&xi).unwrap();
                let lim = numerical_limit_weight(&nu, &xi, t).unwrap();
                let mw = maximal_weight(&nu, &xi).unwrap();
                assert!((lim - mw).abs() < 1e-9, "{lim} {mw} t={t} gap={}", spectrum.min_gap());
            }
        }
    }

    #[test]
    fn abelian_moment_values() {
        let id2 = DMatrix::identity(2, 2);
        let delta = AtomicMeasure::new(2, vec![(v(&[1.0, 0.0]), 1.0)]).unwrap();
        assert!((abelian_moment(&delta, &id2).unwrap() - v(&[0.25, -0.25])).amax() < 1e-15);
        assert!(abelian_moment(&two_point(), &id2).unwrap().amax() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let nu = random_measure(4, 5, &mut rng);
        let frame = random_orthogonal(4, &mut rng).into_matrix();
        assert!(abelian_moment(&nu, &frame).unwrap().sum().abs() < 1e-12);
        assert!(abelian_moment(&nu, &(frame * 2.0)).is_err());
    }

    fn instance(n1: usize, rng: &mut ChaCha8Rng) -> AxiomInstance {
        AxiomInstance {
            g: random_special_linear(n1, 1.5, rng),
            h: random_special_linear(n1, 1.5, rng),
            k: random_orthogonal(n1, rng),
            xi: random_direction(n1, rng),
            t_grid: AxiomInstance::grid(2.0, 41),
        }
    }

    #[test]
    fn axioms_hold_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n1 in 2..5 {
            for _ in 0..20 {
                let nu = random_measure(n1, 4, &mut rng);
                let report = axiom_residuals(&nu, &instance(n1, &mut rng)).unwrap();
                assert!(report.passed(), "{report:?}");
            }
        }
    }

    #[test]
    fn flatness_detects_fixed_atoms() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut inst = instance(2, &mut rng);
        inst.xi = diag(&[1.0, -1.0]);
        let report = axiom_residuals(&two_point(), &inst).unwrap();
        assert!(report.passed(), "{report:?}");

        let tilted = AtomicMeasure::new(2, vec![(v(&[1.0, 1.0]), 1.0)]).unwrap();
        let h = 1e-3;
        let psi = |t: f64| kn_function(&tilted, &exp_sym(&inst.xi.scale(t))).unwrap();
        assert!((psi(h) - 2.0 * psi(0.0) + psi(-h)) / (h * h) > 0.5);
        assert!(axiom_residuals(&tilted, &inst).unwrap().passed());
    }

    #[test]
    fn broken_cocycle_is_reported_first_at_p4() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let nu = random_measure(3, 4, &mut rng);
        let inst = instance(3, &mut rng);
        let broken = |m: &AtomicMeasure, g: &SpecialLinear| -> Result<f64> {
            let bias: f64 = m.atoms().iter().map(|a| a.weight * a.point.coords()[0].powi(2)).sum();
            Ok(kn_function(m, g)? * (1.0 - 0.1 * bias))
        };
        let report = axiom_residuals_with(&nu, &inst, &broken).unwrap();
        assert_eq!(report.first_failure().unwrap().axiom, "P4");
    }
}
