//! Seeded generators and independent numerical oracles for tests.
//!
//! Nothing here is used by the solvers themselves; the quadrature Gramian in
//! particular exists so tests can cross-check Lyapunov-based results against
//! a route that never touches the Lyapunov solver.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::linalg::mat_exp;
use crate::lti::LtiSystem;

/// Deterministic, platform-independent generator keyed by a 64-bit seed.
pub fn seeded_rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Dense matrix with i.i.d. uniform entries in [-1, 1].
pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha12Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Random vector with i.i.d. uniform entries in [-1, 1].
pub fn random_vector(len: usize, rng: &mut ChaCha12Rng) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.random_range(-1.0..1.0))
}

/// Random stable matrix: a uniform draw shifted left so the spectral
/// abscissa lands in roughly [-1.3, -0.3].
pub fn random_stable(d: usize, rng: &mut ChaCha12Rng) -> DMatrix<f64> {
    let g = random_matrix(d, d, rng);
    let abscissa = crate::lti::spectral_abscissa(&g).expect("eigenvalues of a finite matrix");
    let margin = rng.random_range(0.3..1.3);
    g - DMatrix::identity(d, d) * (abscissa + margin)
}

/// Random symmetric positive definite matrix with a mild condition number.
pub fn random_spd(d: usize, rng: &mut ChaCha12Rng) -> DMatrix<f64> {
    let g = random_matrix(d, d, rng);
    &g * g.transpose() / (d as f64) + DMatrix::identity(d, d) * 0.2
}

/// Random orthogonal matrix (Q factor of a uniform draw).
pub fn random_orthogonal(d: usize, rng: &mut ChaCha12Rng) -> DMatrix<f64> {
    random_matrix(d, d, rng).qr().q()
}

/// Random stable system with `m` inputs, `k` outputs, and unit output noise.
/// Draws are rejected until both Gramian factors are full rank, which makes
/// the realization minimal in practice.
pub fn random_minimal_system(d: usize, m: usize, k: usize, rng: &mut ChaCha12Rng) -> LtiSystem {
    for _ in 0..64 {
        let a = random_stable(d, rng);
        let b = random_matrix(d, m, rng);
        let c = random_matrix(k, d, rng);
        let sys = LtiSystem::new(a, Some(b), c, DMatrix::identity(k, k))
            .expect("random draws are dimensionally consistent");
        let reach = crate::linalg::solve_lyapunov_factored(
            sys.a(),
            sys.b().expect("input port was provided"),
        );
        let obs =
            crate::linalg::solve_lyapunov_factored(&sys.a().transpose(), &sys.c().transpose());
        match (reach, obs) {
            (Ok(p), Ok(q)) if p.rank == d && q.rank == d => return sys,
            _ => continue,
        }
    }
    panic!("no numerically minimal draw in 64 attempts at d = {d}, m = {m}, k = {k}");
}

/// Composite-Simpson quadrature of the Gramian integrand
/// `∫₀ᵀ e^{At} F Fᵀ e^{Aᵀt} dt` with `steps` panels (rounded up to even).
///
/// Truncating at `T ≈ 40 / |abscissa|` leaves a tail below 1e-15 relative,
/// so this serves as an independent oracle for Lyapunov-based Gramians.
pub fn quadrature_gramian(
    a: &DMatrix<f64>,
    f: &DMatrix<f64>,
    t_max: f64,
    steps: usize,
) -> DMatrix<f64> {
    let n = if steps.is_multiple_of(2) { steps } else { steps + 1 };
    let h = t_max / n as f64;
    let w = f * f.transpose();
    let e = mat_exp(a, h).expect("stable matrix exponential");
    let d = a.nrows();
    let mut phi = DMatrix::identity(d, d);
    let mut acc = DMatrix::zeros(d, d);
    for j in 0..=n {
        let g = &phi * &w * phi.transpose();
        let weight = if j == 0 || j == n {
            1.0
        } else if j % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += g * weight;
        if j < n {
            phi = &e * phi;
        }
    }
    acc * (h / 3.0)
}

/// Largest principal angle (radians) between the column spaces of `x` and `y`.
pub fn subspace_angle(x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    let qx = x.clone().qr().q();
    let qy = y.clone().qr().q();
    let svd = (qx.transpose() * qy).svd(false, false);
    let mut min_sigma = 1.0f64;
    for s in svd.singular_values.iter() {
        min_sigma = min_sigma.min(*s);
    }
    min_sigma.clamp(-1.0, 1.0).acos()
}
