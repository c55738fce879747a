//! Dense linear-algebra kernels: matrix exponential, Lyapunov solvers,
//! semidefinite square-root factors, spectral splitting, and the
//! symmetric-definite generalized eigensolver.
//!
//! Matrices are `nalgebra::DMatrix<f64>` (column-major storage).

mod expm;
mod lyapunov;

pub use expm::mat_exp;
pub use lyapunov::{solve_lyapunov, solve_lyapunov_factored};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Relative eigenvalue clip for semidefinite factorizations; Schur-based
/// solves leave round-off at this scale.
pub const DEFAULT_CLIP_TOL: f64 = 1e-12;

/// A matrix is treated as stable iff its spectral abscissa is below
/// `-STABILITY_TOL * ‖A‖_F`; Lyapunov solvability degrades at the boundary.
pub const STABILITY_TOL: f64 = 1e-10;

/// Relative asymmetry allowed before an input is rejected as non-symmetric.
pub const SYMMETRY_TOL: f64 = 1e-8;

/// Relative gap under which neighboring eigenvalues are flagged as tied.
pub const TIE_TOL: f64 = 1e-8;

/// A tall factor `F` (d x k, k <= d) with `F Fᵀ` equal to a symmetric
/// positive semidefinite matrix.
#[derive(Debug, Clone)]
pub struct GramianFactor {
    /// Columns are eigen or Cholesky directions scaled to reproduce the
    /// Gramian as `factor * factorᵀ`.
    pub factor: DMatrix<f64>,
    /// Number of retained columns.
    pub rank: usize,
    /// Relative eigenvalue threshold used when the factor was clipped.
    pub clip_tol: f64,
}

impl GramianFactor {
    /// Wraps an already-square factor (e.g. a Cholesky factor of an SPD
    /// matrix) without any clipping.
    pub fn from_square(factor: DMatrix<f64>) -> Self {
        let rank = factor.ncols();
        GramianFactor {
            factor,
            rank,
            clip_tol: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    /// Reconstructs the Gramian `F Fᵀ`.
    pub fn product(&self) -> DMatrix<f64> {
        &self.factor * self.factor.transpose()
    }
}

/// Eigenpairs of a pencil `(Q, P⁻¹)` with the normalization
/// `vᵢᵀ P⁻¹ vⱼ = δᵢⱼ`, sorted by descending eigenvalue.
#[derive(Debug, Clone)]
pub struct GeneralizedEigenpairs {
    /// Descending nonnegative eigenvalues.
    pub values: Vec<f64>,
    /// Columns are the eigenvectors, matching `values`.
    pub vectors: DMatrix<f64>,
    /// `tie_flags[i]` marks `values[i]` and `values[i+1]` as coinciding
    /// within `TIE_TOL` relative to the largest value.
    pub tie_flags: Vec<bool>,
}

impl GeneralizedEigenpairs {
    /// True when the eigenvalues at the truncation boundary `r` coincide,
    /// so that rank-`r` subspaces are not unique.
    pub fn tied_at(&self, r: usize) -> bool {
        r > 0 && r < self.values.len() && self.tie_flags[r - 1]
    }
}

pub fn symmetric_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `‖M - Mᵀ‖_F / ‖M‖_F`, zero for the zero matrix.
pub fn symmetry_defect(m: &DMatrix<f64>) -> f64 {
    let n = m.norm();
    if n == 0.0 {
        return 0.0;
    }
    (m - m.transpose()).norm() / n
}

fn require_symmetric(m: &DMatrix<f64>, op: &'static str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::NonSquare {
            op,
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op });
    }
    let asym = symmetry_defect(m);
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric {
            op,
            asymmetry: asym,
        });
    }
    Ok(())
}

/// Symmetric eigendecomposition with eigenvalues sorted descending.
/// Ties keep the order produced by the decomposition (a fixed, deterministic
/// rule for fixed input).
pub(crate) fn sym_eigen_sorted(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = nalgebra::SymmetricEigen::new(symmetric_part(m));
    let d = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .expect("finite eigenvalues")
    });
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(d, d);
    for (col, &i) in order.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

/// Max real part over the eigenvalues of a real Schur form `T`.
pub(crate) fn max_real_eigenvalue_via_schur(t: &DMatrix<f64>) -> f64 {
    let d = t.nrows();
    let mut best = f64::NEG_INFINITY;
    let mut i = 0;
    while i < d {
        if i + 1 < d && t[(i + 1, i)] != 0.0 {
            let t11 = t[(i, i)];
            let t22 = t[(i + 1, i + 1)];
            let mid = 0.5 * (t11 + t22);
            let disc = 0.25 * (t11 - t22) * (t11 - t22) + t[(i, i + 1)] * t[(i + 1, i)];
            if disc >= 0.0 {
                best = best.max(mid + disc.sqrt());
            } else {
                best = best.max(mid);
            }
            i += 2;
        } else {
            best = best.max(t[(i, i)]);
            i += 1;
        }
    }
    best
}

/// Max real part over eigenvalues of a general square matrix.
pub(crate) fn max_real_eigenvalue(a: &DMatrix<f64>) -> Result<f64> {
    if a.nrows() != a.ncols() {
        return Err(Error::NonSquare {
            op: "spectral_abscissa",
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument {
            op: "spectral_abscissa",
            detail: "empty matrix".into(),
        });
    }
    if symmetry_defect(a) <= 1e-13 {
        let vals = symmetric_part(a).symmetric_eigenvalues();
        return Ok(vals.max());
    }
    let schur =
        nalgebra::Schur::try_new(a.clone(), f64::EPSILON, 0).ok_or(Error::SchurFailed)?;
    let (_, t) = schur.unpack();
    Ok(max_real_eigenvalue_via_schur(&t))
}

/// Clipped square-root factor of a symmetric positive semidefinite matrix.
///
/// Eigenvalues below `clip_tol * λ_max` (including small negatives from
/// round-off) are discarded. Eigenvalues more negative than
/// `-10 clip_tol max|λ|` signal a genuinely indefinite input and are
/// rejected.
pub fn spsd_sqrt_factor(m: &DMatrix<f64>, clip_tol: f64) -> Result<GramianFactor> {
    const OP: &str = "spsd_sqrt_factor";
    require_symmetric(m, OP)?;
    let d = m.nrows();
    let (values, vectors) = sym_eigen_sorted(m);
    let max_abs = values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let allowance = -10.0 * clip_tol * max_abs;
    let min_eig = values.last().copied().unwrap_or(0.0);
    if min_eig < allowance {
        return Err(Error::Indefinite {
            op: OP,
            min_eig,
            allowance,
        });
    }
    let lambda_max = values.first().copied().unwrap_or(0.0).max(0.0);
    let kept: Vec<usize> = (0..d)
        .filter(|&i| values[i] > clip_tol * lambda_max && values[i] > 0.0)
        .collect();
    let mut factor = DMatrix::zeros(d, kept.len());
    for (col, &i) in kept.iter().enumerate() {
        factor.set_column(col, &(vectors.column(i) * values[i].sqrt()));
    }
    Ok(GramianFactor {
        rank: kept.len(),
        factor,
        clip_tol,
    })
}

/// Spectral split of a symmetric matrix into its nearest negative
/// semidefinite part and a factor of the strictly positive remainder.
///
/// Returns `(M₋, F₊)` with `M = M₋ + F₊F₊ᵀ`, where `M₋` collects the
/// nonpositive eigendirections (zeros included) and `F₊ = U₊ diag(√λ₊)`.
/// Eigenvalues are treated as strictly positive above `DEFAULT_CLIP_TOL`
/// relative to the largest magnitude.
pub fn nearest_nsd_split(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    const OP: &str = "nearest_nsd_split";
    require_symmetric(m, OP)?;
    let d = m.nrows();
    let (values, vectors) = sym_eigen_sorted(m);
    let max_abs = values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let pos_cut = DEFAULT_CLIP_TOL * max_abs;
    let pos: Vec<usize> = (0..d).filter(|&i| values[i] > pos_cut).collect();
    let neg: Vec<usize> = (0..d).filter(|&i| values[i] <= pos_cut).collect();

    let mut pos_factor = DMatrix::zeros(d, pos.len());
    for (col, &i) in pos.iter().enumerate() {
        pos_factor.set_column(col, &(vectors.column(i) * values[i].sqrt()));
    }
    let mut m_minus = DMatrix::zeros(d, d);
    for &i in &neg {
        let v = vectors.column(i);
        m_minus += v * v.transpose() * values[i];
    }
    Ok((m_minus, pos_factor))
}

/// Generalized symmetric-definite eigensolver for the pencil `(Q, P⁻¹)`
/// with `P = R Rᵀ` given through its square full-rank factor `R`.
///
/// Computed as the symmetric eigendecomposition of `Rᵀ Q R`; eigenvectors map
/// back as `v = R u`, which yields `Q vᵢ = λᵢ P⁻¹ vᵢ` and `vᵢᵀ P⁻¹ vⱼ = δᵢⱼ`.
/// Tiny negative eigenvalues (round-off from a PSD `Q`) are clamped to zero.
pub fn sym_def_geig(q: &DMatrix<f64>, p_factor: &GramianFactor) -> Result<GeneralizedEigenpairs> {
    const OP: &str = "sym_def_geig";
    require_symmetric(q, OP)?;
    let d = q.nrows();
    let r = &p_factor.factor;
    if r.nrows() != d {
        return Err(Error::DimensionMismatch {
            op: OP,
            detail: format!("Q is {}x{} but the factor has {} rows", d, d, r.nrows()),
        });
    }
    if r.ncols() != d || p_factor.rank != d {
        return Err(Error::RankDeficient {
            op: OP,
            rank: p_factor.rank.min(r.ncols()),
            dim: d,
        });
    }
    let inner = r.transpose() * q * r;
    let (mut values, u) = sym_eigen_sorted(&inner);
    let max_abs = values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    for v in values.iter_mut() {
        if *v < 0.0 {
            if *v < -SYMMETRY_TOL * max_abs {
                return Err(Error::Indefinite {
                    op: OP,
                    min_eig: *v,
                    allowance: -SYMMETRY_TOL * max_abs,
                });
            }
            *v = 0.0;
        }
    }
    let vectors = r * u;
    let top = values.first().copied().unwrap_or(0.0);
    let tie_flags: Vec<bool> = (0..d)
        .map(|i| i + 1 < d && (values[i] - values[i + 1]).abs() <= TIE_TOL * top.max(f64::MIN_POSITIVE))
        .collect();
    Ok(GeneralizedEigenpairs {
        values,
        vectors,
        tie_flags,
    })
}
