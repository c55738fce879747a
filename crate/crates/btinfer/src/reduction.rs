//! Square-root balanced truncation and its inference variants.
//!
//! Balancing uses the factored pencil: with `P = RRᵀ` and `Q = LLᵀ`, the SVD
//! `U Δ Zᵀ = LᵀR` yields the Hankel values `Δ` and the Petrov–Galerkin bases
//! `T_r = R Z_r Δ_r^{-1/2}`, `S_rᵀ = Δ_r^{-1/2} U_rᵀ Lᵀ` with `S_rᵀT_r = I`.
//!
//! Two pencils matter for inference: the prior covariance paired with the
//! noise-weighted observability Gramian (stability and balance guarantees
//! carry over from the LTI setting), or paired with the Fisher information
//! of a concrete schedule (no stability guarantee, rank capped by the
//! number of scalar observations).

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::inference::{
    accumulate_adjoint, fisher_information, posterior_from_parts, MeasurementSet,
    ObservationSchedule, Posterior,
};
use crate::linalg::{
    solve_lyapunov, solve_lyapunov_factored, spsd_sqrt_factor, symmetric_part, GramianFactor,
    DEFAULT_CLIP_TOL,
};
use crate::lti::{spectral_abscissa, LtiSystem};
use crate::prior::{check_compatibility, CompatiblePrior, COMPAT_TOL};

/// Usable Hankel values keep `σ >= RANK_TOL * σ₁`; requesting more errors
/// out with the usable rank instead of silently padding.
pub const RANK_TOL: f64 = 1e-12;

/// Which observability-side Gramian defined the balancing pencil.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PencilKind {
    /// Prior covariance vs. noise-weighted observability Gramian.
    BtQ,
    /// Prior covariance vs. Fisher information of a schedule.
    BtH,
    /// Reachability vs. observability Gramian of a driven LTI system.
    Standard,
}

impl PencilKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PencilKind::BtQ => "bt-q",
            PencilKind::BtH => "bt-h",
            PencilKind::Standard => "standard",
        }
    }
}

/// One SVD of `LᵀR`, reusable across truncation orders.
#[derive(Debug, Clone)]
pub struct BalancedCore {
    p_factor: DMatrix<f64>,
    q_factor: DMatrix<f64>,
    u: DMatrix<f64>,
    z: DMatrix<f64>,
    sigma: Vec<f64>,
    usable: usize,
    pencil: PencilKind,
}

impl BalancedCore {
    pub fn new(
        p_factor: &GramianFactor,
        q_factor: &GramianFactor,
        pencil: PencilKind,
    ) -> Result<Self> {
        const OP: &str = "BalancedCore::new";
        if p_factor.dim() != q_factor.dim() {
            return Err(Error::DimensionMismatch {
                op: OP,
                detail: format!(
                    "P factor has {} rows but Q factor has {}",
                    p_factor.dim(),
                    q_factor.dim()
                ),
            });
        }
        let m = q_factor.factor.tr_mul(&p_factor.factor);
        let svd = m.svd(true, true);
        let u_raw = svd.u.expect("requested");
        let vt_raw = svd.v_t.expect("requested");
        // The SVD does not guarantee ordering; sort descending, ties keep
        // decomposition order.
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&i, &j| {
            svd.singular_values[j]
                .partial_cmp(&svd.singular_values[i])
                .expect("finite singular values")
        });
        let sigma: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
        let mut u = DMatrix::zeros(u_raw.nrows(), order.len());
        let mut z = DMatrix::zeros(vt_raw.ncols(), order.len());
        for (col, &i) in order.iter().enumerate() {
            u.set_column(col, &u_raw.column(i));
            z.set_column(col, &vt_raw.row(i).transpose());
        }
        let top = sigma.first().copied().unwrap_or(0.0);
        let usable = sigma
            .iter()
            .filter(|&&s| s >= RANK_TOL * top && s > 0.0)
            .count();
        Ok(BalancedCore {
            p_factor: p_factor.factor.clone(),
            q_factor: q_factor.factor.clone(),
            u,
            z,
            sigma,
            usable,
            pencil,
        })
    }

    /// Number of Hankel values above the rank tolerance.
    pub fn usable_rank(&self) -> usize {
        self.usable
    }

    /// Retained Hankel spectrum `σ₁ >= ... >= σ_q`.
    pub fn hankel_spectrum(&self) -> &[f64] {
        &self.sigma[..self.usable]
    }

    /// Truncation bases at order `r`.
    pub fn bases(&self, r: usize) -> Result<BalancingBases> {
        if r == 0 || r > self.usable {
            return Err(Error::OverTruncation {
                requested: r,
                usable: self.usable,
            });
        }
        let scale =
            DMatrix::from_diagonal(&DVector::from_fn(r, |i, _| 1.0 / self.sigma[i].sqrt()));
        let t_r = &self.p_factor * self.z.columns(0, r) * &scale;
        let s_r = &self.q_factor * self.u.columns(0, r) * &scale;
        Ok(BalancingBases {
            t_r,
            s_r,
            hankel: self.sigma[..r].to_vec(),
            hankel_full: self.hankel_spectrum().to_vec(),
            pencil: self.pencil,
        })
    }
}

/// Truncation bases `T_r`, `S_r` with `S_rᵀ T_r = I_r` and the Hankel values.
#[derive(Debug, Clone)]
pub struct BalancingBases {
    pub t_r: DMatrix<f64>,
    pub s_r: DMatrix<f64>,
    /// Retained Hankel values `δ₁..δ_r`.
    pub hankel: Vec<f64>,
    /// Full spectrum up to the numerical rank, for diagnostics.
    pub hankel_full: Vec<f64>,
    pub pencil: PencilKind,
}

impl BalancingBases {
    pub fn order(&self) -> usize {
        self.t_r.ncols()
    }
}

/// Balanced reduction with projected operators filled in.
#[derive(Debug, Clone)]
pub struct BalancedReduction {
    pub bases: BalancingBases,
    pub a_r: DMatrix<f64>,
    pub c_r: DMatrix<f64>,
    pub b_r: Option<DMatrix<f64>>,
    /// Spectral abscissa of `A_r`; negative iff the reduced dynamics are
    /// stable (guaranteed for the Gramian pencil, not for the Fisher one).
    pub reduced_abscissa: f64,
}

impl BalancedReduction {
    pub fn order(&self) -> usize {
        self.bases.order()
    }

    /// Reduced system for propagating the r-dimensional dynamics, carrying
    /// the original noise covariance.
    pub fn reduced_system(&self, noise_cov: DMatrix<f64>) -> Result<LtiSystem> {
        LtiSystem::new(
            self.a_r.clone(),
            self.b_r.clone(),
            self.c_r.clone(),
            noise_cov,
        )
    }
}

/// Square-root balanced truncation of the pencil defined by the two factors,
/// truncated at order `r`. Operators are filled by [`project`].
pub fn balance_square_root(
    p_factor: &GramianFactor,
    q_factor: &GramianFactor,
    r: usize,
) -> Result<BalancingBases> {
    BalancedCore::new(p_factor, q_factor, PencilKind::Standard)?.bases(r)
}

/// Petrov–Galerkin projection of the system operators onto the balancing
/// bases: `A_r = S_rᵀ A T_r`, `C_r = C T_r`, `B_r = S_rᵀ B`.
pub fn project(
    bases: BalancingBases,
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    b: Option<&DMatrix<f64>>,
) -> Result<BalancedReduction> {
    const OP: &str = "project";
    let d = bases.t_r.nrows();
    if a.nrows() != d || a.ncols() != d || c.ncols() != d {
        return Err(Error::DimensionMismatch {
            op: OP,
            detail: format!(
                "bases are for dimension {} but A is {}x{} and C is {}x{}",
                d,
                a.nrows(),
                a.ncols(),
                c.nrows(),
                c.ncols()
            ),
        });
    }
    if let Some(b) = b {
        if b.nrows() != d {
            return Err(Error::DimensionMismatch {
                op: OP,
                detail: format!("B has {} rows for dimension {}", b.nrows(), d),
            });
        }
    }
    let a_r = bases.s_r.tr_mul(&(a * &bases.t_r));
    let c_r = c * &bases.t_r;
    let b_r = b.map(|b| bases.s_r.tr_mul(b));
    let reduced_abscissa = spectral_abscissa(&a_r)?;
    Ok(BalancedReduction {
        bases,
        a_r,
        c_r,
        b_r,
        reduced_abscissa,
    })
}

/// Factor of the noise-weighted observability Gramian:
/// `Q_m = L Lᵀ` from the Lyapunov solve on `Aᵀ` with input `Cᵀ Γ_ε^{-ᵀ/2}`.
pub fn noisy_observability_factor(sys: &LtiSystem) -> Result<GramianFactor> {
    let f = sys.whitened_output().transpose();
    solve_lyapunov_factored(&sys.a().transpose(), &f)
}

/// Balanced truncation on the pencil (prior covariance, noise-weighted
/// observability Gramian). The reduced dynamics inherit stability.
pub fn bt_q_reduce(
    sys: &LtiSystem,
    prior: &CompatiblePrior,
    r: usize,
) -> Result<BalancedReduction> {
    let core = bt_q_core(sys, prior)?;
    project(core.bases(r)?, sys.a(), sys.c(), sys.b())
}

/// The reusable factorization behind [`bt_q_reduce`].
pub fn bt_q_core(sys: &LtiSystem, prior: &CompatiblePrior) -> Result<BalancedCore> {
    let (compatible, residual_abscissa) = check_compatibility(sys.a(), &prior.cov, COMPAT_TOL)?;
    if !compatible {
        return Err(Error::IncompatiblePrior { residual_abscissa });
    }
    let q_factor = noisy_observability_factor(sys)?;
    BalancedCore::new(&prior.factor, &q_factor, PencilKind::BtQ)
}

/// Square factor of the Fisher information over a schedule.
///
/// With `n·k < d` the stacked tall factor (one whitened output block per
/// observation) is built directly and the Fisher matrix is never formed;
/// otherwise the `d x d` Fisher matrix is assembled and factored. Either way
/// the usable rank is capped at `n·k`.
pub fn fisher_factor(sys: &LtiSystem, schedule: &ObservationSchedule) -> Result<GramianFactor> {
    let d = sys.state_dim();
    let k = sys.output_dim();
    let n = schedule.n;
    if n == 0 {
        return Err(Error::EmptySchedule);
    }
    if n * k < d {
        let mut factor = DMatrix::zeros(d, n * k);
        let mut rows = sys.whitened_output();
        let mut prev = 0.0;
        for (i, &t) in schedule.times.iter().enumerate() {
            let e = crate::linalg::mat_exp(sys.a(), t - prev)?;
            prev = t;
            rows = &rows * e;
            factor
                .view_mut((0, i * k), (d, k))
                .copy_from(&rows.transpose());
        }
        Ok(GramianFactor {
            factor,
            rank: n * k,
            clip_tol: 0.0,
        })
    } else {
        let h = fisher_information(sys, schedule)?;
        spsd_sqrt_factor(&h, DEFAULT_CLIP_TOL)
    }
}

/// Balanced truncation on the pencil (prior covariance, Fisher information).
/// Stability of the reduced dynamics is recorded but not guaranteed.
pub fn bt_h_reduce(
    sys: &LtiSystem,
    prior: &CompatiblePrior,
    schedule: &ObservationSchedule,
    r: usize,
) -> Result<BalancedReduction> {
    let core = bt_h_core(sys, prior, schedule)?;
    project(core.bases(r)?, sys.a(), sys.c(), sys.b())
}

/// The reusable factorization behind [`bt_h_reduce`].
pub fn bt_h_core(
    sys: &LtiSystem,
    prior: &CompatiblePrior,
    schedule: &ObservationSchedule,
) -> Result<BalancedCore> {
    let q_factor = fisher_factor(sys, schedule)?;
    BalancedCore::new(&prior.factor, &q_factor, PencilKind::BtH)
}

/// Reduced-order Fisher information lifted back to the full state:
/// `H_BT = S_r (Σᵢ e^{A_rᵀtᵢ} C_rᵀ Γ_ε⁻¹ C_r e^{A_rtᵢ}) S_rᵀ`.
/// Only the r-dimensional dynamics are evolved.
pub fn bt_fisher_information(
    reduction: &BalancedReduction,
    sys: &LtiSystem,
    schedule: &ObservationSchedule,
) -> Result<DMatrix<f64>> {
    let reduced = reduction.reduced_system(sys.noise_cov().clone())?;
    let inner = fisher_information(&reduced, schedule)?;
    Ok(symmetric_part(
        &(&reduction.bases.s_r * inner * reduction.bases.s_r.transpose()),
    ))
}

/// Noise-weighted observability Gramian of the reduced model, lifted to the
/// full state: `S_r X_r S_rᵀ` where `X_r` solves the reduced Lyapunov
/// equation. For the Gramian pencil `X_r` equals `diag(δ₁..δ_r)`.
pub fn qm_bt(reduction: &BalancedReduction, sys: &LtiSystem) -> Result<DMatrix<f64>> {
    const OP: &str = "qm_bt";
    if reduction.bases.pencil != PencilKind::BtQ {
        return Err(Error::InvalidArgument {
            op: OP,
            detail: "reduced Gramian lift is defined for the Gramian pencil".into(),
        });
    }
    if reduction.reduced_abscissa >= 0.0 {
        return Err(Error::Unstable {
            op: OP,
            abscissa: reduction.reduced_abscissa,
        });
    }
    let reduced = reduction.reduced_system(sys.noise_cov().clone())?;
    let x_r = solve_lyapunov(&reduced.a().transpose(), &reduced.output_information())?;
    Ok(symmetric_part(
        &(&reduction.bases.s_r * x_r * reduction.bases.s_r.transpose()),
    ))
}

/// Posterior approximation from the reduced model: the Fisher information and
/// the adjoint data are assembled on the reduced dynamics and lifted through
/// `S_r`, then combined with the prior in the factored sandwich form.
pub fn bt_posterior(
    reduction: &BalancedReduction,
    prior: &CompatiblePrior,
    sys: &LtiSystem,
    measurements: &MeasurementSet,
) -> Result<Posterior> {
    let reduced = reduction.reduced_system(sys.noise_cov().clone())?;
    let h_bt = bt_fisher_information(reduction, sys, &measurements.schedule)?;
    let z_r = accumulate_adjoint(&reduced, &measurements.schedule, &measurements.values)?;
    let z = &reduction.bases.s_r * z_r;
    posterior_from_parts(
        prior,
        &h_bt,
        &z,
        reduction.bases.pencil.as_str(),
        Some(reduction.order()),
    )
}

/// Writes the reduction (bases, operators, Hankel values) as Matrix Market
/// files plus a `manifest` text file.
pub fn export_reduction(reduction: &BalancedReduction, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    crate::mm::write_matrix(&dir.join("t_r.mtx"), &reduction.bases.t_r)?;
    crate::mm::write_matrix(&dir.join("s_r.mtx"), &reduction.bases.s_r)?;
    crate::mm::write_matrix(&dir.join("a_r.mtx"), &reduction.a_r)?;
    crate::mm::write_matrix(&dir.join("c_r.mtx"), &reduction.c_r)?;
    if let Some(b_r) = &reduction.b_r {
        crate::mm::write_matrix(&dir.join("b_r.mtx"), b_r)?;
    }
    let hankel = DMatrix::from_fn(reduction.bases.hankel_full.len(), 1, |i, _| {
        reduction.bases.hankel_full[i]
    });
    crate::mm::write_matrix(&dir.join("hankel.mtx"), &hankel)?;

    let mut manifest = String::new();
    let _ = writeln!(manifest, "pencil = \"{}\"", reduction.bases.pencil.as_str());
    let _ = writeln!(manifest, "order = {}", reduction.order());
    let _ = writeln!(manifest, "state_dim = {}", reduction.bases.t_r.nrows());
    let _ = writeln!(
        manifest,
        "reduced_abscissa = {:.16e}",
        reduction.reduced_abscissa
    );
    let _ = writeln!(
        manifest,
        "usable_rank = {}",
        reduction.bases.hankel_full.len()
    );
    let path = dir.join("manifest");
    std::fs::write(&path, manifest).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}
