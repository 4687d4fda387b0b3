//! Stability of atomic measures on real projective space under the action
//! of `SL(n+1, R)`.
//!
//! A measure `nu = sum_i w_i delta_[x_i]` on RP^n is stable, polystable,
//! semistable or unstable according to whether its orbit meets the zero set
//! of the gradient map `grad_f`. The classifier decides this from the masses
//! of subspaces spanned by atoms; the balancer finds the balancing
//! transformation by descending the Kempf-Ness function; the maximal weight
//! connects the two through the asymptotic slopes of that function.

pub mod balancer;
pub mod classifier;
pub mod error;
pub mod exact;
pub mod io;
pub mod kempf_ness;
pub mod linalg;
pub mod measures;
pub mod random;

pub use balancer::{balance, balance_polystable, balance_with, isotropy_check, linear_properness_probe, BalanceOptions, BalanceResult, BalanceStatus};
pub use classifier::{
    classify, classify_sampled, classify_with, destabilizing_direction, numerical_cross_check, verify, ClassifyOptions,
    StabilityVerdict, VerdictKind, Witness,
};
pub use error::{Error, Result};
pub use kempf_ness::{
    abelian_moment, axiom_residuals, big_lambda, grad_f, kn_function, maximal_weight, moment_mu, morse_bott, Direction,
    MorseBottDecomposition,
};
pub use linalg::{exp_sym, polar_cartan, spectral, SpecialLinear, SpectralData, TracelessSym};
pub use measures::{pushforward, subspace_mass, support_flats, AtomicMeasure, ProjPoint, Subspace, SupportFlat};
