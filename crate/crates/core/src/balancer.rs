//! Balancing by geodesic descent of the Kempf-Ness function: finds `g` with
//! `grad_f(g_* nu) = 0`, or reports the direction in which the orbit escapes.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::classifier::{StabilityVerdict, Witness};
use crate::error::{Error, Result};
use crate::kempf_ness::{grad_f, psi_along_ray, ray_slope, Direction};
use crate::linalg::{polar_left_step, sorted_eigen, SpecialLinear, TracelessSym};
use crate::measures::{pushforward, AtomicMeasure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BalanceStatus {
    Converged,
    Diverged,
    MaxIterations,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalanceOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// `|xi|_F` of the polar part of `g` beyond which the run may be declared divergent.
    pub divergence_norm: f64,
    /// Divergence also requires the residual to stay above this floor.
    pub divergence_residual: f64,
    /// Condition number of `g` past which the atoms' images carry no reliable
    /// digits; the run stops there, as Diverged if the residual is above the floor.
    pub condition_limit: f64,
    pub initial_step: f64,
    pub armijo: f64,
    pub record_trace: bool,
}

impl Default for BalanceOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 10_000,
            divergence_norm: 50.0,
            divergence_residual: 1e-6,
            condition_limit: 1e12,
            initial_step: 1.0,
            armijo: 1e-4,
            record_trace: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub psi: f64,
    pub residual: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceResult {
    pub g: SpecialLinear,
    /// `|grad_f(g_* nu)|_F`.
    pub residual: f64,
    pub iterations: usize,
    pub status: BalanceStatus,
    /// `Psi(nu, g)`.
    pub psi: f64,
    /// `|xi|_F` for the polar decomposition `g = k exp(xi)`.
    pub xi_norm: f64,
    /// `xi / |xi|_F`, when `xi` is not zero.
    pub escape_direction: Option<TracelessSym>,
    pub trace: Vec<TraceEntry>,
}

/// Running state: `g = k exp(xi)` with `xi = U diag(beta) U^T`, and the unit
/// images `y_i` of the atoms, updated step by step so they stay accurate when
/// `exp(xi)` is badly conditioned.
struct State {
    k: DMatrix<f64>,
    u: DMatrix<f64>,
    beta: Vec<f64>,
    ys: Vec<DVector<f64>>,
    weights: Vec<f64>,
    psi: f64,
}

impl State {
    fn new(nu: &AtomicMeasure) -> Self {
        let n = nu.n_plus_1();
        Self {
            k: DMatrix::identity(n, n),
            u: DMatrix::identity(n, n),
            beta: vec![0.0; n],
            ys: nu.atoms().iter().map(|a| a.point.coords().clone()).collect(),
            weights: nu.atoms().iter().map(|a| a.weight).collect(),
            psi: 0.0,
        }
    }

    fn gradient(&self) -> TracelessSym {
        let n = self.k.nrows();
        let mut m = DMatrix::zeros(n, n);
        for (y, w) in self.ys.iter().zip(&self.weights) {
            m += y * y.transpose() * *w;
        }
        let total: f64 = self.weights.iter().sum();
        for i in 0..n {
            m[(i, i)] -= total / n as f64;
        }
        TracelessSym::project(m * 0.5).0
    }

    fn g(&self) -> SpecialLinear {
        let exp_xi = DMatrix::from_fn(self.u.nrows(), self.u.ncols(), |i, j| self.u[(i, j)] * self.beta[j].exp()) * self.u.transpose();
        SpecialLinear::from_matrix_unchecked(&self.k * exp_xi)
    }

    fn xi(&self) -> TracelessSym {
        TracelessSym::from_eigen(&self.u, &self.beta)
    }

    fn xi_norm(&self) -> f64 {
        self.beta.iter().map(|b| b * b).sum::<f64>().sqrt()
    }

    fn log_condition(&self) -> f64 {
        let max = self.beta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = self.beta.iter().copied().fold(f64::INFINITY, f64::min);
        max - min
    }

    fn resync(&mut self, nu: &AtomicMeasure) -> Result<()> {
        let g = self.g();
        for (y, a) in self.ys.iter_mut().zip(nu.atoms()) {
            let v = g.apply(a.point.coords());
            let norm = v.norm();
            if norm <= 1e-12 {
                return Err(Error::SingularInput(format!("|g x| = {norm:e}")));
            }
            *y = v / norm;
        }
        Ok(())
    }
}

/// `exp(a) - Id` for symmetric `a`, accurate for small `a`.
fn expm1_sym(a: &TracelessSym) -> DMatrix<f64> {
    let (values, vectors) = sorted_eigen(a.matrix());
    let scaled = DMatrix::from_fn(vectors.nrows(), vectors.ncols(), |i, j| vectors[(i, j)] * values[j].exp_m1());
    scaled * vectors.transpose()
}

/// Change of `Psi` when every atom `y_i` is mapped by `exp(a)`:
/// `1/4 sum_i w_i log(1 + 2 y_i^T z_i + |z_i|^2)` with `z_i = (exp(a) - Id) y_i`.
fn psi_increment(ys: &[DVector<f64>], weights: &[f64], em1: &DMatrix<f64>) -> f64 {
    ys.iter()
        .zip(weights)
        .map(|(y, w)| {
            let z = em1 * y;
            w * (2.0 * y.dot(&z) + z.norm_squared()).ln_1p()
        })
        .sum::<f64>()
        * 0.25
}

pub fn balance(nu: &AtomicMeasure, tol: f64, max_iter: usize) -> Result<BalanceResult> {
    balance_with(nu, &BalanceOptions { tol, max_iter, ..BalanceOptions::default() })
}

/// Descent `g <- exp(-eta F) g` with `F = grad_f(g_* nu)` and Armijo
/// backtracking on `Psi(nu, g)`.
pub fn balance_with(nu: &AtomicMeasure, opts: &BalanceOptions) -> Result<BalanceResult> {
    if opts.tol.is_nan() || opts.tol <= 0.0 || opts.max_iter == 0 {
        return Err(Error::InvalidMeasure("tolerance must be positive and max_iter at least 1".into()));
    }
    let mut state = State::new(nu);
    let mut trace = Vec::new();
    let mut iterations = 0;
    let status = loop {
        let f = state.gradient();
        let mut residual = f.norm();
        if residual <= opts.tol {
            state.resync(nu)?;
            residual = state.gradient().norm();
            if residual <= opts.tol {
                break BalanceStatus::Converged;
            }
        }
        if state.xi_norm() > opts.divergence_norm && residual > opts.divergence_residual {
            break BalanceStatus::Diverged;
        }
        if state.log_condition() > opts.condition_limit.ln() {
            break if residual > opts.divergence_residual { BalanceStatus::Diverged } else { BalanceStatus::MaxIterations };
        }
        if iterations >= opts.max_iter {
            break BalanceStatus::MaxIterations;
        }
        let f = state.gradient();
        let slope = -f.norm() * f.norm();
        let mut eta = opts.initial_step;
        let mut accepted = None;
        while eta > 1e-20 {
            let a = f.scale(-eta);
            let em1 = expm1_sym(&a);
            let delta = psi_increment(&state.ys, &state.weights, &em1);
            if delta <= opts.armijo * eta * slope {
                accepted = Some((a, em1, delta));
                break;
            }
            eta *= 0.5;
        }
        let Some((a, em1, delta)) = accepted else {
            break BalanceStatus::MaxIterations;
        };
        let a_local = a.conjugate(&state.k.transpose());
        let (r, new_u, new_beta) = polar_left_step(&state.u, &state.beta, &a_local);
        state.k = &state.k * r;
        state.u = new_u;
        state.beta = new_beta;
        for y in state.ys.iter_mut() {
            let v = &*y + &em1 * &*y;
            *y = &v / v.norm();
        }
        state.psi += delta;
        iterations += 1;
        if opts.record_trace {
            trace.push(TraceEntry { iteration: iterations, psi: state.psi, residual, step: eta });
        }
    };
    let g = state.g();
    let residual = state.gradient().norm();
    let xi_norm = state.xi_norm();
    let escape_direction = if xi_norm > 1e-12 { Some(state.xi().scale(1.0 / xi_norm)) } else { None };
    Ok(BalanceResult { g, residual, iterations, status, psi: state.psi, xi_norm, escape_direction, trace })
}

/// `|sum_i w_i (g x_i)(g x_i)^T / |g x_i|^2 - Id/(n+1)|_F`, which is
/// `2 |grad_f(g_* nu)|_F`.
pub fn isotropy_check(nu: &AtomicMeasure, g: &SpecialLinear) -> Result<f64> {
    let n = nu.n_plus_1();
    if g.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, got: g.dim() });
    }
    let mut m = DMatrix::<f64>::zeros(n, n);
    for a in nu.atoms() {
        let y = g.apply(a.point.coords());
        let s = y.norm_squared();
        if s.sqrt() <= 1e-12 {
            return Err(Error::SingularInput(format!("|g x| = {:e}", s.sqrt())));
        }
        m += &y * y.transpose() * (a.weight / s);
    }
    m -= DMatrix::identity(n, n) / n as f64;
    Ok(m.norm())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropernessReport {
    /// Whether `t <= c1 Psi(nu, exp(t xi)) + c2` holds on every probed ray.
    pub holds: bool,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    /// Slope of `Psi` at `t_max` on each ray.
    pub tail_slopes: Vec<f64>,
    pub t_max: f64,
}

/// Slopes below this count as zero growth.
pub const GROWTH_FLOOR: f64 = 1e-6;

/// Samples `Psi(nu, exp(t xi))` for `t` in `[0, t_max]` on each unit
/// direction and fits a linear lower bound `t <= c1 Psi + c2`. The bound exists
/// exactly when `Psi` eventually grows on every ray, which for a convex
/// function is decided by the slope at `t_max`.
pub fn linear_properness_probe(nu: &AtomicMeasure, directions: &[Direction], t_max: f64) -> Result<PropernessReport> {
    const SAMPLES: usize = 64;
    let mut tail_slopes = Vec::with_capacity(directions.len());
    let mut rays = Vec::with_capacity(directions.len());
    for d in directions {
        tail_slopes.push(ray_slope(nu, d.xi(), t_max)?);
        let values: Vec<(f64, f64)> = (0..=SAMPLES)
            .map(|i| {
                let t = t_max * i as f64 / SAMPLES as f64;
                psi_along_ray(nu, d.xi(), t).map(|p| (t, p))
            })
            .collect::<Result<_>>()?;
        rays.push(values);
    }
    let min_slope = tail_slopes.iter().copied().fold(f64::INFINITY, f64::min);
    if directions.is_empty() || min_slope <= GROWTH_FLOOR {
        return Ok(PropernessReport { holds: directions.is_empty(), c1: None, c2: None, tail_slopes, t_max });
    }
    let c1 = 1.0 / min_slope;
    let c2 = rays.iter().flatten().map(|(t, p)| t - c1 * p).fold(f64::NEG_INFINITY, f64::max);
    Ok(PropernessReport { holds: true, c1: Some(c1), c2: Some(c2), tail_slopes, t_max })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolystableBalance {
    /// `h g0`: `g0` sends the pieces to coordinate blocks, `h` balances each block.
    pub g: SpecialLinear,
    pub residual: f64,
    pub pieces: Vec<BalanceResult>,
}

/// Balances a polystable measure through its splitting: maps each piece of
/// the splitting onto a block of coordinates and balances the pieces
/// separately.
pub fn balance_polystable(nu: &AtomicMeasure, verdict: &StabilityVerdict, opts: &BalanceOptions) -> Result<PolystableBalance> {
    let pieces = match &verdict.witness {
        Witness::Polystable { pieces } => pieces,
        _ => return Err(Error::InvalidMeasure("verdict carries no splitting".into())),
    };
    let n = nu.n_plus_1();
    let mut b = DMatrix::zeros(n, n);
    let mut col = 0;
    for p in pieces {
        b.columns_mut(col, p.flat.dim).copy_from(&p.flat.basis);
        col += p.flat.dim;
    }
    if col != n {
        return Err(Error::DimensionMismatch { expected: n, got: col });
    }
    let b_inv = b.try_inverse().ok_or_else(|| Error::SingularInput("splitting is not a direct sum".into()))?;
    let g0 = SpecialLinear::normalize_invertible(b_inv)?;
    let mut h = DMatrix::zeros(n, n);
    let mut results = Vec::with_capacity(pieces.len());
    let mut start = 0;
    for p in pieces {
        let d = p.flat.dim;
        let atoms: Vec<(DVector<f64>, f64)> = p
            .flat
            .atom_indices
            .iter()
            .map(|&i| {
                let y = g0.apply(nu.atoms()[i].point.coords());
                (y.rows(start, d).into_owned(), nu.atoms()[i].weight)
            })
            .collect();
        let block = if d == 1 {
            DMatrix::identity(1, 1)
        } else {
            let piece = AtomicMeasure::from_unnormalized(d, atoms)?;
            let r = balance_with(&piece, opts)?;
            let m = r.g.matrix().clone();
            results.push(r);
            m
        };
        h.view_mut((start, start), (d, d)).copy_from(&block);
        start += d;
    }
    let g = SpecialLinear::from_matrix_unchecked(h).mul(&g0);
    let residual = grad_f(&pushforward(&g, nu)?).norm();
    Ok(PolystableBalance { g, residual, pieces: results })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{classify, VerdictKind};
    use crate::kempf_ness::kn_function;
    use crate::linalg::{exp_sym, polar_cartan};
    use crate::random::{gaussian_vector, random_direction, random_orthogonal, random_special_linear, random_weights};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn stable_measure(n1: usize, m: usize, rng: &mut ChaCha8Rng) -> AtomicMeasure {
        loop {
            let w = random_weights(m, rng);
            let nu = AtomicMeasure::new(n1, w.into_iter().map(|w| (gaussian_vector(n1, rng), w)).collect()).unwrap();
            if classify(&nu).unwrap().kind == VerdictKind::Stable {
                return nu;
            }
        }
    }

    #[test]
    fn uniform_basis_is_already_balanced() {
        for n1 in 2..5 {
            let atoms = (0..n1).map(|i| (DVector::from_fn(n1, |r, _| if r == i { 1.0 } else { 0.0 }), 1.0 / n1 as f64)).collect();
            let nu = AtomicMeasure::new(n1, atoms).unwrap();
            let r = balance(&nu, 1e-10, 10).unwrap();
            assert_eq!(r.status, BalanceStatus::Converged);
            assert_eq!(r.iterations, 0);
            assert_eq!(r.g, SpecialLinear::identity(n1));
            assert!(isotropy_check(&nu, &SpecialLinear::identity(n1)).unwrap() < 1e-15);
        }
    }

    #[test]
    fn two_diagonal_atoms_become_orthogonal() {
        let s = 1.0 / 2f64.sqrt();
        let nu = AtomicMeasure::new(2, vec![(v(&[s, s]), 0.5), (v(&[s, -s]), 0.5)]).unwrap();
        let r = balance(&nu, 1e-10, 10_000).unwrap();
        assert_eq!(r.status, BalanceStatus::Converged);
        assert!(r.residual < 1e-10);

        let nu = AtomicMeasure::new(2, vec![(v(&[1.0, 0.0]), 0.5), (v(&[1.0, 0.3]), 0.5)]).unwrap();
        let r = balance(&nu, 1e-10, 10_000).unwrap();
        assert_eq!(r.status, BalanceStatus::Converged);
        let y0 = r.g.apply(&v(&[1.0, 0.0]));
        let y1 = r.g.apply(&v(&[1.0, 0.3]));
        assert!(y0.dot(&y1).abs() / (y0.norm() * y1.norm()) < 1e-9);
    }

    #[test]
    fn heavy_point_diverges_along_its_direction() {
        let nu = AtomicMeasure::new(2, vec![(v(&[1.0, 0.0]), 0.6), (v(&[1.0, 1.0]), 0.4)]).unwrap();
        let r = balance(&nu, 1e-10, 10_000).unwrap();
        assert_eq!(r.status, BalanceStatus::Diverged);
        let witness = match classify(&nu).unwrap().witness {
            Witness::Unstable { direction, .. } => direction,
            w => panic!("{w:?}"),
        };
        let cos = r.escape_direction.unwrap().inner(witness.xi());
        assert!(cos > 0.99, "cos = {cos}");
    }

    #[test]
    fn heavy_line_in_rp2_stops_at_the_condition_limit() {
        // Three atoms on the line e3 = 0 carry 0.87 > 2/3; rounding off that
        // line would grow without bound past the condition limit.
        let nu = AtomicMeasure::new(
            3,
            vec![(v(&[1.0, 0.0, 0.0]), 0.29), (v(&[0.0, 1.0, 0.0]), 0.29), (v(&[1.0, 1.0, 0.0]), 0.29), (v(&[0.3, -0.2, 1.0]), 0.13)],
        )
        .unwrap();
        let r = balance(&nu, 1e-10, 10_000).unwrap();
        assert_eq!(r.status, BalanceStatus::Diverged);
        assert!(r.iterations < 10_000);
        let direct = isotropy_check(&nu, &r.g).unwrap() / 2.0;
        assert!((direct - r.residual).abs() < 1e-3, "{direct} vs {}", r.residual);
        let witness = TracelessSym::from_diagonal(&[1.0, 1.0, -2.0]).unwrap().normalized().unwrap();
        assert!(r.escape_direction.unwrap().inner(&witness) < -0.9);
    }

    #[test]
    fn trace_is_monotone_and_psi_is_tracked() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for n1 in 2..5 {
            let nu = stable_measure(n1, n1 + 3, &mut rng);
            let r = balance(&nu, 1e-10, 10_000).unwrap();
            assert_eq!(r.status, BalanceStatus::Converged);
            assert!(r.trace.windows(2).all(|w| w[1].psi <= w[0].psi));
            assert!((kn_function(&nu, &r.g).unwrap() - r.psi).abs() < 1e-10);
            assert!((isotropy_check(&nu, &r.g).unwrap() - 2.0 * r.residual).abs() < 1e-12);
            let (k, xi) = polar_cartan(&r.g).unwrap();
            assert!(k.is_orthogonal(1e-9));
            assert!((xi.norm() - r.xi_norm).abs() < 1e-8);
        }
    }

    #[test]
    fn balanced_point_minimizes_psi() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let nu = stable_measure(3, 6, &mut rng);
        let r = balance(&nu, 1e-10, 10_000).unwrap();
        for _ in 0..100 {
            let xi = random_direction(3, &mut rng).scale(0.5);
            assert!(kn_function(&nu, &exp_sym(&xi).mul(&r.g)).unwrap() >= r.psi - 1e-12);
        }
    }

    #[test]
    fn balancing_is_unique_up_to_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let nu = stable_measure(3, 6, &mut rng);
        let gram = |g: &SpecialLinear, pre: &SpecialLinear| -> Vec<f64> {
            let ys: Vec<DVector<f64>> = nu.atoms().iter().map(|a| g.apply(&pre.apply(a.point.coords())).normalize()).collect();
            let mut out = Vec::new();
            for i in 0..ys.len() {
                for j in 0..i {
                    out.push(ys[i].dot(&ys[j]).abs());
                }
            }
            out
        };
        let r0 = balance(&nu, 1e-12, 10_000).unwrap();
        let base = gram(&r0.g, &SpecialLinear::identity(3));
        for _ in 0..3 {
            let pre = random_special_linear(3, 1.0, &mut rng).mul(&random_orthogonal(3, &mut rng));
            let pushed = pushforward(&pre, &nu).unwrap();
            let r = balance(&pushed, 1e-12, 10_000).unwrap();
            let other = gram(&r.g, &pre);
            for (a, b) in base.iter().zip(&other) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn polystable_round_trip() {
        let nu = AtomicMeasure::new(
            3,
            vec![(v(&[1.0, 0.0, 0.0]), 2.0 / 9.0), (v(&[0.0, 1.0, 0.0]), 2.0 / 9.0), (v(&[1.0, 1.0, 0.0]), 2.0 / 9.0), (v(&[1.0, 2.0, 3.0]), 1.0 / 3.0)],
        )
        .unwrap();
        let verdict = classify(&nu).unwrap();
        assert_eq!(verdict.kind, VerdictKind::PolystableNotStable);
        let pb = balance_polystable(&nu, &verdict, &BalanceOptions { tol: 1e-12, ..BalanceOptions::default() }).unwrap();
        assert!(pb.residual <= 1e-9, "{}", pb.residual);
    }

    #[test]
    fn isotropy_values() {
        let nu = AtomicMeasure::new(2, vec![(v(&[1.0, 0.0]), 1.0)]).unwrap();
        let val = isotropy_check(&nu, &SpecialLinear::identity(2)).unwrap();
        assert!((val - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn properness_probe() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let stable = stable_measure(3, 6, &mut rng);
        let flats = crate::measures::support_flats(&stable).unwrap();
        let dirs: Vec<Direction> = crate::classifier::flat_derived_directions(&stable, &flats)
            .iter()
            .map(|xi| Direction::new(xi).unwrap())
            .collect();
        let rep = linear_properness_probe(&stable, &dirs, 20.0).unwrap();
        assert!(rep.holds && rep.c1.unwrap().is_finite());

        let poly = AtomicMeasure::new(2, vec![(v(&[1.0, 0.0]), 0.5), (v(&[0.0, 1.0]), 0.5)]).unwrap();
        let fixing = Direction::new(&TracelessSym::from_diagonal(&[1.0, -1.0]).unwrap()).unwrap();
        let rep = linear_properness_probe(&poly, &[fixing], 20.0).unwrap();
        assert!(!rep.holds);
        assert!(rep.tail_slopes[0].abs() < 1e-15);

        let heavy = AtomicMeasure::new(2, vec![(v(&[1.0, 0.0]), 0.4), (v(&[0.0, 1.0]), 0.6)]).unwrap();
        let witness = match classify(&heavy).unwrap().witness {
            Witness::Unstable { direction, .. } => direction,
            w => panic!("{w:?}"),
        };
        let rep = linear_properness_probe(&heavy, &[witness], 20.0).unwrap();
        assert!(!rep.holds && rep.tail_slopes[0] < 0.0);
    }
}
