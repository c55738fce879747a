//! Prior covariances compatible with the dynamics: spin-up construction,
//! compatibility checking, and the nearest-NSD modification of an
//! incompatible covariance.
//!
//! A covariance `Γ` is compatible with `A` when `AΓ + ΓAᵀ` is negative
//! semidefinite, which makes `Γ` the reachability Gramian of some input
//! port. The prior mean is zero throughout.

use nalgebra::{Cholesky, DMatrix};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{
    nearest_nsd_split, solve_lyapunov_factored, symmetric_part, GramianFactor, STABILITY_TOL,
};
use crate::lti::spectral_abscissa;

/// Default relative tolerance for the compatibility residual; Schur-solve
/// round-off lives at this scale.
pub const COMPAT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PriorProvenance {
    /// Stationary covariance of the white-noise-driven system.
    SpinUp,
    /// Spin-up with a diagonal ridge added to `BBᵀ`.
    SpinUpRidged,
    /// Incompatible covariance repaired by the nearest-NSD modification.
    Modified,
    /// Supplied by the caller and verified, not constructed here.
    UserAsserted,
}

/// A symmetric positive definite prior covariance together with a square
/// factor `Γ_pr = R Rᵀ` and its compatibility residual.
#[derive(Debug, Clone)]
pub struct CompatiblePrior {
    pub cov: DMatrix<f64>,
    pub factor: GramianFactor,
    /// Max eigenvalue of `A Γ_pr + Γ_pr Aᵀ`.
    pub residual_abscissa: f64,
    pub provenance: PriorProvenance,
}

impl CompatiblePrior {
    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    /// Draws `x₀ ~ N(0, Γ_pr)` from the seeded generator (ChaCha12 keyed by
    /// the 64-bit seed, standard normals via the ziggurat sampler).
    pub fn sample(&self, seed: u64) -> nalgebra::DVector<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let z = nalgebra::DVector::from_fn(self.factor.factor.ncols(), |_, _| {
            rng.sample::<f64, _>(StandardNormal)
        });
        &self.factor.factor * z
    }
}

fn compatibility_residual(a: &DMatrix<f64>, gamma: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let m = symmetric_part(&(a * gamma + gamma * a.transpose()));
    let max_eig = m.symmetric_eigenvalues().max();
    (m, max_eig)
}

/// Checks `A Γ + Γ Aᵀ ⪯ 0` up to `tol ‖M‖_F`; returns the flag and the
/// residual abscissa (max eigenvalue of the residual).
pub fn check_compatibility(
    a: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    tol: f64,
) -> Result<(bool, f64)> {
    const OP: &str = "check_compatibility";
    if a.nrows() != a.ncols() {
        return Err(Error::NonSquare {
            op: OP,
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    if gamma.nrows() != a.nrows() || gamma.ncols() != a.ncols() {
        return Err(Error::DimensionMismatch {
            op: OP,
            detail: format!(
                "A is {}x{} but Γ is {}x{}",
                a.nrows(),
                a.ncols(),
                gamma.nrows(),
                gamma.ncols()
            ),
        });
    }
    let (m, max_eig) = compatibility_residual(a, gamma);
    Ok((max_eig <= tol * m.norm(), max_eig))
}

/// Spin-up prior: the stationary covariance `Γ_pr = P∞` of the system driven
/// by white noise through `B`, i.e. the solution of `AΓ + ΓAᵀ + BBᵀ = 0`.
///
/// Unreachable pairs produce a singular covariance and are rejected unless a
/// ridge `ε` is supplied, in which case `BBᵀ + εI` is used instead and the
/// provenance records the regularization.
pub fn spin_up_prior(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    ridge: Option<f64>,
) -> Result<CompatiblePrior> {
    const OP: &str = "spin_up_prior";
    if b.nrows() != a.nrows() {
        return Err(Error::DimensionMismatch {
            op: OP,
            detail: format!("A has {} rows but B has {}", a.nrows(), b.nrows()),
        });
    }
    let d = a.nrows();
    let (input, provenance) = match ridge {
        None => (b.clone(), PriorProvenance::SpinUp),
        Some(eps) => {
            if !eps.is_finite() || eps <= 0.0 {
                return Err(Error::InvalidArgument {
                    op: OP,
                    detail: "ridge must be positive".into(),
                });
            }
            let mut f = DMatrix::zeros(d, b.ncols() + d);
            f.view_mut((0, 0), (d, b.ncols())).copy_from(b);
            f.view_mut((0, b.ncols()), (d, d))
                .copy_from(&(DMatrix::identity(d, d) * eps.sqrt()));
            (f, PriorProvenance::SpinUpRidged)
        }
    };
    let factor = solve_lyapunov_factored(a, &input)?;
    if factor.rank < d {
        return Err(Error::SingularPrior {
            rank: factor.rank,
            dim: d,
        });
    }
    let cov = symmetric_part(&factor.product());
    let (_, residual_abscissa) = compatibility_residual(a, &cov);
    Ok(CompatiblePrior {
        cov,
        factor,
        residual_abscissa,
        provenance,
    })
}

/// Repairs an incompatible SPD covariance `Γ₀`.
///
/// The residual `M₀ = AΓ₀ + Γ₀Aᵀ` is split into its nearest negative
/// semidefinite part `M₋` plus a strictly positive remainder `U₊Λ₊U₊ᵀ`; the
/// correction solves `AΔ + ΔAᵀ + U₊Λ₊U₊ᵀ = 0`, so that
/// `A(Γ₀+Δ) + (Γ₀+Δ)Aᵀ = M₋ ⪯ 0`.
///
/// Returns the repaired prior, the dense correction `Δ`, and a factor `E`
/// with `Δ = EEᵀ`. When `Γ₀` is already compatible within `tol`, `Δ = 0` and
/// `Γ₀` is passed through unchanged.
pub fn make_compatible(
    a: &DMatrix<f64>,
    gamma0: &DMatrix<f64>,
    tol: f64,
) -> Result<(CompatiblePrior, DMatrix<f64>, DMatrix<f64>)> {
    const OP: &str = "make_compatible";
    let d = a.nrows();
    let chol0 = Cholesky::new(symmetric_part(gamma0))
        .ok_or(Error::NotPositiveDefinite { op: OP })?;
    let abscissa = spectral_abscissa(a)?;
    if abscissa >= -STABILITY_TOL * a.norm() {
        return Err(Error::Unstable { op: OP, abscissa });
    }

    let (m0, max_eig) = compatibility_residual(a, gamma0);
    if max_eig <= tol * m0.norm() {
        let prior = CompatiblePrior {
            cov: symmetric_part(gamma0),
            factor: GramianFactor::from_square(chol0.l()),
            residual_abscissa: max_eig,
            provenance: PriorProvenance::UserAsserted,
        };
        return Ok((prior, DMatrix::zeros(d, d), DMatrix::zeros(d, 0)));
    }

    let (_, pos_factor) = nearest_nsd_split(&m0)?;
    let delta_factor = solve_lyapunov_factored(a, &pos_factor)?;
    let delta = symmetric_part(&delta_factor.product());
    let cov = symmetric_part(&(gamma0 + &delta));

    // Factor of Γ₀ + Δ from the stacked factors: Γ₀ + EEᵀ = [R₀ E][R₀ E]ᵀ,
    // compressed to a square lower-triangular factor by QR.
    let r0 = chol0.l();
    let e = &delta_factor.factor;
    let mut stacked = DMatrix::zeros(d + e.ncols(), d);
    stacked
        .view_mut((0, 0), (d, d))
        .copy_from(&r0.transpose());
    stacked
        .view_mut((d, 0), (e.ncols(), d))
        .copy_from(&e.transpose());
    let r_upper = stacked.qr().r();
    let factor = GramianFactor::from_square(r_upper.transpose());

    let (_, residual_abscissa) = compatibility_residual(a, &cov);
    let prior = CompatiblePrior {
        cov,
        factor,
        residual_abscissa,
        provenance: PriorProvenance::Modified,
    };
    Ok((prior, delta, delta_factor.factor.clone()))
}

/// Euler–Maruyama estimate of the stationary covariance of
/// `dx = Ax dt + B dW` at `t = 0`, started from `x(-t_burn) = 0`.
///
/// Returns the entrywise second-moment estimate and its standard errors.
/// Per-path streams are derived from `(seed, path_index)` so the result is
/// deterministic for a fixed seed. The step must resolve the slowest mode
/// (`dt <= 0.1/|abscissa|`) and the burn-in must cover it
/// (`t_burn >= 10/|abscissa|`); this is a validation oracle, not a solver.
pub fn monte_carlo_stationary_cov(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    n_paths: usize,
    t_burn: f64,
    dt: f64,
    seed: u64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    const OP: &str = "monte_carlo_stationary_cov";
    let d = a.nrows();
    if b.nrows() != d {
        return Err(Error::DimensionMismatch {
            op: OP,
            detail: format!("A has {} rows but B has {}", d, b.nrows()),
        });
    }
    let abscissa = spectral_abscissa(a)?;
    if abscissa >= -STABILITY_TOL * a.norm() {
        return Err(Error::Unstable { op: OP, abscissa });
    }
    let scale = abscissa.abs();
    if dt <= 0.0 || dt > 0.1 / scale {
        return Err(Error::InvalidArgument {
            op: OP,
            detail: format!("dt = {dt} exceeds the resolution bound {:.3e}", 0.1 / scale),
        });
    }
    if t_burn < 10.0 / scale {
        return Err(Error::InvalidArgument {
            op: OP,
            detail: format!("t_burn = {t_burn} is below the burn-in bound {:.3e}", 10.0 / scale),
        });
    }
    if n_paths < 2 {
        return Err(Error::InvalidArgument {
            op: OP,
            detail: "need at least two paths".into(),
        });
    }

    let steps = (t_burn / dt).ceil() as usize;
    let sqrt_dt = dt.sqrt();
    let m = b.ncols();
    let mut sum = DMatrix::<f64>::zeros(d, d);
    let mut sum_sq = DMatrix::<f64>::zeros(d, d);
    for path in 0..n_paths {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(path as u64 + 1);
        let mut x = nalgebra::DVector::<f64>::zeros(d);
        for _ in 0..steps {
            let noise =
                nalgebra::DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
            x += a * &x * dt + b * noise * sqrt_dt;
        }
        let outer = &x * x.transpose();
        sum += &outer;
        sum_sq += outer.component_mul(&outer);
    }
    let n = n_paths as f64;
    let mean = &sum / n;
    // Standard error of the mean of x_i x_j across paths.
    let var = (&sum_sq / n - mean.component_mul(&mean)).map(|v| v.max(0.0));
    let std_err = (var / (n - 1.0)).map(f64::sqrt);
    Ok((mean, std_err))
}
