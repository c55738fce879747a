//! Dense Lyapunov solvers.
//!
//! `solve_lyapunov` reduces A to real Schur form (Bartels–Stewart) and solves
//! the transformed equation block by block; a symmetric A takes the cheaper
//! eigendecomposition route. Benchmark dimensions stay below a few hundred,
//! so dense O(d^3) solves are the right tool.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{
    max_real_eigenvalue_via_schur, spsd_sqrt_factor, symmetric_part, symmetry_defect,
    GramianFactor, DEFAULT_CLIP_TOL, STABILITY_TOL, SYMMETRY_TOL,
};

/// Solves `A X + X Aᵀ + W = 0` for stable `A` and symmetric PSD `W`.
///
/// The result is symmetrized; the residual satisfies
/// `‖AX + XAᵀ + W‖_F <= rtol (‖A‖‖X‖ + ‖W‖)` with `rtol` at the 1e-13 scale
/// of the underlying Schur/eigen decompositions.
pub fn solve_lyapunov(a: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    const OP: &str = "solve_lyapunov";
    check_square(a, OP)?;
    if a.iter().any(|v| !v.is_finite()) || w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: OP });
    }
    if w.nrows() != a.nrows() || w.ncols() != a.ncols() {
        return Err(Error::DimensionMismatch {
            op: OP,
            detail: format!(
                "A is {}x{} but W is {}x{}",
                a.nrows(),
                a.ncols(),
                w.nrows(),
                w.ncols()
            ),
        });
    }
    let asym = symmetry_defect(w);
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric {
            op: OP,
            asymmetry: asym,
        });
    }
    let w = symmetric_part(w);
    let a_scale = a.norm();
    let stab_bound = -STABILITY_TOL * a_scale;

    if symmetry_defect(a) <= 1e-13 {
        // A symmetric: diagonalize once, divide by eigenvalue sums.
        let eig = nalgebra::SymmetricEigen::new(a.clone());
        let abscissa = eig.eigenvalues.max();
        if abscissa >= stab_bound {
            return Err(Error::Unstable { op: OP, abscissa });
        }
        let v = &eig.eigenvectors;
        let wt = v.transpose() * &w * v;
        let d = a.nrows();
        let y = DMatrix::from_fn(d, d, |i, j| {
            -wt[(i, j)] / (eig.eigenvalues[i] + eig.eigenvalues[j])
        });
        let x = v * y * v.transpose();
        return Ok(symmetric_part(&x));
    }

    let schur = nalgebra::Schur::try_new(a.clone(), f64::EPSILON, 0).ok_or(Error::SchurFailed)?;
    let (q, t) = schur.unpack();
    let abscissa = max_real_eigenvalue_via_schur(&t);
    if abscissa >= stab_bound {
        return Err(Error::Unstable { op: OP, abscissa });
    }
    let c = -(q.transpose() * &w * &q);
    let y = solve_quasi_triangular(&t, &c)?;
    let x = &q * y * q.transpose();
    Ok(symmetric_part(&x))
}

/// Solves `A (RRᵀ) + (RRᵀ) Aᵀ + FFᵀ = 0` and returns the factor `R`.
///
/// Implemented as the dense solve on `FFᵀ` followed by a clipped semidefinite
/// square-root factorization; the product `RRᵀ` is what the contract fixes.
pub fn solve_lyapunov_factored(a: &DMatrix<f64>, f: &DMatrix<f64>) -> Result<GramianFactor> {
    const OP: &str = "solve_lyapunov_factored";
    if f.nrows() != a.nrows() {
        return Err(Error::DimensionMismatch {
            op: OP,
            detail: format!("A has {} rows but F has {}", a.nrows(), f.nrows()),
        });
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: OP });
    }
    let w = f * f.transpose();
    let x = solve_lyapunov(a, &w)?;
    spsd_sqrt_factor(&x, DEFAULT_CLIP_TOL)
}

fn check_square(m: &DMatrix<f64>, op: &'static str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::NonSquare {
            op,
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(())
}

/// Solves `T Y + Y Tᵀ = C` for quasi-upper-triangular `T` (real Schur form).
///
/// Diagonal blocks are 1x1 or 2x2 (complex pairs); the unknown block at (I, J)
/// couples only to blocks below and to the right, so a reverse sweep reduces
/// the problem to at most 4x4 linear solves.
fn solve_quasi_triangular(t: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = t.nrows();
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < d {
        if i + 1 < d && t[(i + 1, i)] != 0.0 {
            blocks.push((i, 2));
            i += 2;
        } else {
            blocks.push((i, 1));
            i += 1;
        }
    }

    let mut y = DMatrix::zeros(d, d);
    for &(i0, p) in blocks.iter().rev() {
        for &(j0, q) in blocks.iter().rev() {
            let mut rhs = c.view((i0, j0), (p, q)).clone_owned();
            let below = i0 + p;
            if below < d {
                rhs -= t.view((i0, below), (p, d - below)) * y.view((below, j0), (d - below, q));
            }
            let right = j0 + q;
            if right < d {
                rhs -= y.view((i0, right), (p, d - right))
                    * t.view((j0, right), (q, d - right)).transpose();
            }

            // Vectorized small system: (I ⊗ T_II + T_JJ ⊗ I) vec(Y_IJ) = vec(rhs).
            let n_small = p * q;
            let mut m_small = DMatrix::<f64>::zeros(n_small, n_small);
            for col in 0..q {
                for row in 0..p {
                    let eq = row + col * p;
                    for row2 in 0..p {
                        m_small[(eq, row2 + col * p)] += t[(i0 + row, i0 + row2)];
                    }
                    for col2 in 0..q {
                        m_small[(eq, row + col2 * p)] += t[(j0 + col, j0 + col2)];
                    }
                }
            }
            let rhs_vec = DVector::from_fn(n_small, |idx, _| rhs[(idx % p, idx / p)]);
            let sol = m_small
                .full_piv_lu()
                .solve(&rhs_vec)
                .ok_or(Error::SchurFailed)?;
            for col in 0..q {
                for row in 0..p {
                    y[(i0 + row, j0 + col)] = sol[row + col * p];
                }
            }
        }
    }
    Ok(y)
}
