//! Optimal low-rank posterior baselines and the Förstner metric.
//!
//! The pencil `(H, Γ_pr⁻¹)` with eigenpairs `(τᵢ², wᵢ)` drives everything:
//! the posterior covariance is the prior minus a sum of rank-one updates
//! weighted by `τᵢ²/(1+τᵢ²)`, truncating that sum at rank `r` is the
//! Förstner-optimal member of the class of rank-`r` negative semidefinite
//! prior updates, and the oblique projector `Π_r = Σᵢ w̃ᵢwᵢᵀ` produces the
//! matching low-rank means. These baselines evolve the full dynamics;
//! they are the yardstick the reduced models are scored against.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{sym_def_geig, symmetric_part, symmetry_defect, DEFAULT_CLIP_TOL, TIE_TOL};
use crate::prior::CompatiblePrior;

/// Eigenpairs of the pencil `(H, Γ_pr⁻¹)`: descending values `τᵢ²`, columns
/// `wᵢ` with `wᵢᵀΓ_pr⁻¹wⱼ = δᵢⱼ`, and the dual directions `w̃ᵢ = Γ_pr⁻¹wᵢ`.
#[derive(Debug, Clone)]
pub struct PencilDecomposition {
    pub tau_sq: Vec<f64>,
    pub w: DMatrix<f64>,
    pub w_tilde: DMatrix<f64>,
    /// Count of eigenvalues at numerical zero (relative to the largest).
    pub zero_count: usize,
    tie_flags: Vec<bool>,
}

impl PencilDecomposition {
    pub fn dim(&self) -> usize {
        self.tau_sq.len()
    }

    /// True when the eigenvalues at the truncation boundary coincide within
    /// `TIE_TOL` relative to `τ₁`, so the rank-`r` optimizer is not unique.
    pub fn truncation_tie(&self, r: usize) -> bool {
        r > 0 && r < self.dim() && self.tie_flags[r - 1]
    }

    /// Square roots `τᵢ` of the eigenvalues.
    pub fn tau(&self) -> Vec<f64> {
        self.tau_sq.iter().map(|v| v.sqrt()).collect()
    }
}

/// Decomposes the pencil `(H, Γ_pr⁻¹)` through the prior factor.
pub fn spantini_eigenpairs(h: &DMatrix<f64>, prior: &CompatiblePrior) -> Result<PencilDecomposition> {
    let pairs = sym_def_geig(h, &prior.factor)?;
    let d = pairs.values.len();
    // w̃ = Γ_pr⁻¹ w through the square factor: R Rᵀ w̃ = w.
    let r = &prior.factor.factor;
    let lu_r = r.clone().lu();
    let lu_rt = r.transpose().lu();
    let inner = lu_r
        .solve(&pairs.vectors)
        .ok_or(Error::RankDeficient {
            op: "spantini_eigenpairs",
            rank: prior.factor.rank,
            dim: d,
        })?;
    let w_tilde = lu_rt.solve(&inner).ok_or(Error::RankDeficient {
        op: "spantini_eigenpairs",
        rank: prior.factor.rank,
        dim: d,
    })?;
    let top = pairs.values.first().copied().unwrap_or(0.0);
    let zero_count = pairs
        .values
        .iter()
        .filter(|&&v| v <= DEFAULT_CLIP_TOL * top)
        .count();
    Ok(PencilDecomposition {
        tau_sq: pairs.values,
        w: pairs.vectors,
        w_tilde,
        zero_count,
        tie_flags: pairs.tie_flags,
    })
}

/// Optimal rank-`r` negative-semidefinite update of the prior covariance:
/// `Γ_pr - Σ_{i<=r} τᵢ²/(1+τᵢ²) wᵢwᵢᵀ`. SPD for every `r`.
pub fn olru_covariance(
    prior: &CompatiblePrior,
    pencil: &PencilDecomposition,
    r: usize,
) -> Result<DMatrix<f64>> {
    check_rank(pencil, r)?;
    let mut cov = prior.cov.clone();
    for i in 0..r {
        let coeff = pencil.tau_sq[i] / (1.0 + pencil.tau_sq[i]);
        let w = pencil.w.column(i);
        cov -= (w * w.transpose()) * coeff;
    }
    Ok(symmetric_part(&cov))
}

/// Förstner distance `Σᵢ ln²(σᵢ)` over the eigenvalues `σᵢ` of the pencil
/// `(A, B)` of SPD matrices. Symmetric in its arguments and invariant to
/// congruence `(SASᵀ, SBSᵀ)` and joint inversion `(A⁻¹, B⁻¹)`.
pub fn forstner_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    const OP: &str = "forstner_distance";
    if a.nrows() != b.nrows() || a.ncols() != b.ncols() || a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch {
            op: OP,
            detail: format!(
                "A is {}x{} and B is {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            ),
        });
    }
    if symmetry_defect(a) > crate::linalg::SYMMETRY_TOL
        || symmetry_defect(b) > crate::linalg::SYMMETRY_TOL
    {
        return Err(Error::NotSymmetric {
            op: OP,
            asymmetry: symmetry_defect(a).max(symmetry_defect(b)),
        });
    }
    let chol_b = nalgebra::Cholesky::new(symmetric_part(b))
        .ok_or(Error::NotPositiveDefinite { op: OP })?;
    let l = chol_b.l();
    // Whitened matrix L⁻¹ A L⁻ᵀ via two triangular solves.
    let y = l
        .solve_lower_triangular(&symmetric_part(a))
        .ok_or(Error::NotPositiveDefinite { op: OP })?;
    let m = l
        .solve_lower_triangular(&y.transpose())
        .ok_or(Error::NotPositiveDefinite { op: OP })?;
    let eig = symmetric_part(&m).symmetric_eigenvalues();
    let mut dist = 0.0;
    for sigma in eig.iter() {
        if *sigma <= 0.0 {
            return Err(Error::NotPositiveDefinite { op: OP });
        }
        dist += sigma.ln().powi(2);
    }
    Ok(dist)
}

/// Closed-form optimal Förstner distance of the rank-`r` update:
/// `Σ_{i>r} ln²(1/(1+τᵢ²))`. Zero eigenvalues contribute nothing.
pub fn olru_optimal_distance(pencil: &PencilDecomposition, r: usize) -> f64 {
    pencil.tau_sq[r.min(pencil.dim())..]
        .iter()
        .map(|t2| (1.0 / (1.0 + t2)).ln().powi(2))
        .sum()
}

/// Projected Fisher information `Ĥ = Π_r H Π_rᵀ` with the oblique spectral
/// projector `Π_r = Σ_{i<=r} w̃ᵢwᵢᵀ`, computed without forming the projected
/// forward map. Satisfies `(Γ_pr⁻¹ + Ĥ)⁻¹ = olru_covariance` at the same
/// rank.
pub fn projected_fisher(
    pencil: &PencilDecomposition,
    h: &DMatrix<f64>,
    r: usize,
) -> Result<DMatrix<f64>> {
    check_rank(pencil, r)?;
    if h.nrows() != pencil.dim() || h.ncols() != pencil.dim() {
        return Err(Error::DimensionMismatch {
            op: "projected_fisher",
            detail: format!(
                "H is {}x{} for pencil dimension {}",
                h.nrows(),
                h.ncols(),
                pencil.dim()
            ),
        });
    }
    if r == 0 {
        return Ok(DMatrix::zeros(pencil.dim(), pencil.dim()));
    }
    let w_r = pencil.w.columns(0, r);
    let wt_r = pencil.w_tilde.columns(0, r);
    let inner = w_r.tr_mul(&(h * w_r));
    Ok(symmetric_part(&(wt_r * inner * wt_r.transpose())))
}

/// Applies the oblique projector `Π_r` to an adjoint-data vector:
/// `Π_r z = W̃_r (W_rᵀ z)`. This is how the projected forward map acts on
/// data without ever being formed.
pub fn project_adjoint(
    pencil: &PencilDecomposition,
    r: usize,
    z: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_rank(pencil, r)?;
    if z.len() != pencil.dim() {
        return Err(Error::DimensionMismatch {
            op: "project_adjoint",
            detail: format!("z has length {} for dimension {}", z.len(), pencil.dim()),
        });
    }
    if r == 0 {
        return Ok(DVector::zeros(pencil.dim()));
    }
    let w_r = pencil.w.columns(0, r);
    let wt_r = pencil.w_tilde.columns(0, r);
    Ok(wt_r * w_r.tr_mul(z))
}

/// Optimal low-rank posterior mean: the truncated covariance applied to the
/// projected adjoint data, `Γ̂_pos Π_r z`.
pub fn olr_mean(
    prior: &CompatiblePrior,
    pencil: &PencilDecomposition,
    r: usize,
    z: &DVector<f64>,
) -> Result<DVector<f64>> {
    let cov = olru_covariance(prior, pencil, r)?;
    let projected = project_adjoint(pencil, r, z)?;
    Ok(&cov * projected)
}

/// Optimal low-rank-update posterior mean: the truncated covariance applied
/// to the full adjoint data, `Γ̂_pos z`.
pub fn olru_mean(
    prior: &CompatiblePrior,
    pencil: &PencilDecomposition,
    r: usize,
    z: &DVector<f64>,
) -> Result<DVector<f64>> {
    if z.len() != pencil.dim() {
        return Err(Error::DimensionMismatch {
            op: "olru_mean",
            detail: format!("z has length {} for dimension {}", z.len(), pencil.dim()),
        });
    }
    let cov = olru_covariance(prior, pencil, r)?;
    Ok(&cov * z)
}

fn check_rank(pencil: &PencilDecomposition, r: usize) -> Result<()> {
    if r > pencil.dim() {
        return Err(Error::OverTruncation {
            requested: r,
            usable: pencil.dim(),
        });
    }
    Ok(())
}

/// Warns about optimizer non-uniqueness: eigenvalues within `TIE_TOL` of the
/// truncation boundary. Exposed for reporting layers.
pub fn tie_tolerance() -> f64 {
    TIE_TOL
}
