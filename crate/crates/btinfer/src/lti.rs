//! The LTI system model, its Gramians (standard, noisy, time-limited),
//! stability diagnostics, and the stacked forward map.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};
use crate::linalg::{self, mat_exp, solve_lyapunov, symmetric_part};

/// Linear time-invariant dynamics `ẋ = Ax (+ Bu)` observed through
/// `y = Cx` with per-sample Gaussian measurement noise of covariance
/// `noise_cov`.
///
/// Stability is checked on demand, not at construction.
#[derive(Debug, Clone)]
pub struct LtiSystem {
    a: DMatrix<f64>,
    b: Option<DMatrix<f64>>,
    c: DMatrix<f64>,
    noise_cov: DMatrix<f64>,
}

impl LtiSystem {
    pub fn new(
        a: DMatrix<f64>,
        b: Option<DMatrix<f64>>,
        c: DMatrix<f64>,
        noise_cov: DMatrix<f64>,
    ) -> Result<Self> {
        const OP: &str = "LtiSystem::new";
        let d = a.nrows();
        if a.ncols() != d || d == 0 {
            return Err(Error::NonSquare {
                op: OP,
                rows: a.nrows(),
                cols: a.ncols(),
            });
        }
        if c.ncols() != d || c.nrows() == 0 {
            return Err(Error::DimensionMismatch {
                op: OP,
                detail: format!("C is {}x{} for a state of dimension {}", c.nrows(), c.ncols(), d),
            });
        }
        if let Some(b) = &b {
            if b.nrows() != d || b.ncols() == 0 {
                return Err(Error::DimensionMismatch {
                    op: OP,
                    detail: format!("B is {}x{} for a state of dimension {}", b.nrows(), b.ncols(), d),
                });
            }
        }
        let k = c.nrows();
        if noise_cov.nrows() != k || noise_cov.ncols() != k {
            return Err(Error::DimensionMismatch {
                op: OP,
                detail: format!(
                    "noise covariance is {}x{} for {} outputs",
                    noise_cov.nrows(),
                    noise_cov.ncols(),
                    k
                ),
            });
        }
        let finite = a.iter().all(|v| v.is_finite())
            && c.iter().all(|v| v.is_finite())
            && noise_cov.iter().all(|v| v.is_finite())
            && b.as_ref().is_none_or(|b| b.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::NonFinite { op: OP });
        }
        // Noise covariance must be symmetric positive definite.
        if linalg::symmetry_defect(&noise_cov) > linalg::SYMMETRY_TOL {
            return Err(Error::NotSymmetric {
                op: OP,
                asymmetry: linalg::symmetry_defect(&noise_cov),
            });
        }
        let noise_cov = symmetric_part(&noise_cov);
        if Cholesky::new(noise_cov.clone()).is_none() {
            return Err(Error::NotPositiveDefinite { op: OP });
        }
        Ok(LtiSystem { a, b, c, noise_cov })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> Option<&DMatrix<f64>> {
        self.b.as_ref()
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn noise_cov(&self) -> &DMatrix<f64> {
        &self.noise_cov
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.b.as_ref().map(|b| b.ncols())
    }

    /// Replaces the measurement-noise covariance.
    pub fn with_noise_cov(self, noise_cov: DMatrix<f64>) -> Result<Self> {
        LtiSystem::new(self.a, self.b, self.c, noise_cov)
    }

    /// Cholesky factor `L` of the noise covariance (`Γ_ε = L Lᵀ`).
    pub fn noise_cholesky(&self) -> Cholesky<f64, Dyn> {
        Cholesky::new(self.noise_cov.clone()).expect("validated at construction")
    }

    /// Noise-whitened output operator `Γ_ε^{-1/2} C`, applied through the
    /// Cholesky factor rather than an explicit inverse.
    pub fn whitened_output(&self) -> DMatrix<f64> {
        self.noise_cholesky()
            .l()
            .solve_lower_triangular(&self.c)
            .expect("Cholesky factor is nonsingular")
    }

    /// `Cᵀ Γ_ε⁻¹ C`, the per-sample information density of the outputs.
    pub fn output_information(&self) -> DMatrix<f64> {
        let cw = self.whitened_output();
        cw.transpose() * cw
    }
}

/// Maximum real part over the eigenvalues of `A`; negative means stable.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> Result<f64> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            op: "spectral_abscissa",
        });
    }
    linalg::max_real_eigenvalue(a)
}

fn require_stable(sys: &LtiSystem, op: &'static str) -> Result<()> {
    let abscissa = spectral_abscissa(sys.a())?;
    if abscissa >= -linalg::STABILITY_TOL * sys.a().norm() {
        return Err(Error::Unstable { op, abscissa });
    }
    Ok(())
}

/// Infinite-horizon reachability Gramian `P∞ = ∫₀^∞ e^{At} BBᵀ e^{Aᵀt} dt`,
/// obtained from the Lyapunov equation `A P + P Aᵀ + BBᵀ = 0`.
pub fn reachability_gramian(sys: &LtiSystem) -> Result<DMatrix<f64>> {
    const OP: &str = "reachability_gramian";
    let b = sys.b().ok_or(Error::InvalidArgument {
        op: OP,
        detail: "system has no input port B".into(),
    })?;
    require_stable(sys, OP)?;
    solve_lyapunov(sys.a(), &(b * b.transpose()))
}

/// Noise-weighted observability Gramian
/// `Q_m = ∫₀^∞ e^{Aᵀt} Cᵀ Γ_ε⁻¹ C e^{At} dt`, obtained from
/// `Aᵀ Q + Q A + Cᵀ Γ_ε⁻¹ C = 0`.
pub fn noisy_observability_gramian(sys: &LtiSystem) -> Result<DMatrix<f64>> {
    require_stable(sys, "noisy_observability_gramian")?;
    solve_lyapunov(&sys.a().transpose(), &sys.output_information())
}

/// Time-limited information Gramian
/// `∫_{t₀}^{t₁} e^{Aᵀt} Cᵀ Γ_ε⁻¹ C e^{At} dt`, evaluated as
/// `Φ(t₀)ᵀ Q_m Φ(t₀) - Φ(t₁)ᵀ Q_m Φ(t₁)` with `Φ(t) = e^{At}`.
pub fn time_limited_fisher_gramian(
    sys: &LtiSystem,
    t_start: f64,
    t_end: f64,
) -> Result<DMatrix<f64>> {
    const OP: &str = "time_limited_fisher_gramian";
    if !(t_start >= 0.0 && t_end.is_finite() && t_start.is_finite()) || t_end <= t_start {
        return Err(Error::InvalidArgument {
            op: OP,
            detail: format!("interval [{t_start}, {t_end}] is not a valid observation window"),
        });
    }
    let q_m = noisy_observability_gramian(sys)?;
    let sandwich = |t: f64| -> Result<DMatrix<f64>> {
        if t == 0.0 {
            return Ok(q_m.clone());
        }
        let phi = mat_exp(sys.a(), t)?;
        Ok(phi.transpose() * &q_m * phi)
    };
    let head = sandwich(t_start)?;
    let tail = sandwich(t_end)?;
    Ok(symmetric_part(&(head - tail)))
}

/// The stacked observation operator: block `i` is `C e^{A tᵢ}`.
///
/// The block-diagonal observation covariance is never materialized; its
/// inverse only ever acts per block through `Γ_ε`. Intended for modest
/// numbers of observations — large equispaced schedules are handled by the
/// streaming routines in the inference module.
#[derive(Debug, Clone)]
pub struct ForwardMap {
    pub blocks: Vec<DMatrix<f64>>,
    pub times: Vec<f64>,
}

impl ForwardMap {
    /// Applies the stacked map to an initial state, returning the noiseless
    /// outputs as the columns of a `k x n` matrix.
    pub fn apply(&self, x0: &nalgebra::DVector<f64>) -> DMatrix<f64> {
        let k = self.blocks.first().map_or(0, |b| b.nrows());
        let mut out = DMatrix::zeros(k, self.blocks.len());
        for (i, block) in self.blocks.iter().enumerate() {
            out.set_column(i, &(block * x0));
        }
        out
    }
}

pub(crate) fn validate_times(times: &[f64], op: &'static str) -> Result<()> {
    if times.is_empty() {
        return Err(Error::EmptySchedule);
    }
    if times.iter().any(|t| !t.is_finite() || *t <= 0.0) {
        return Err(Error::InvalidArgument {
            op,
            detail: "observation times must be finite and positive".into(),
        });
    }
    if times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument {
            op,
            detail: "observation times must be strictly increasing".into(),
        });
    }
    Ok(())
}

/// Builds the forward map by repeated propagation: one `e^{Ah}` reused
/// multiplicatively for equispaced times, per-gap exponentials otherwise.
pub fn build_forward_map(sys: &LtiSystem, times: &[f64]) -> Result<ForwardMap> {
    const OP: &str = "build_forward_map";
    validate_times(times, OP)?;
    let d = sys.state_dim();

    let mut gaps = Vec::with_capacity(times.len());
    let mut prev = 0.0;
    for &t in times {
        gaps.push(t - prev);
        prev = t;
    }
    let equispaced = gaps
        .windows(2)
        .all(|w| (w[0] - w[1]).abs() <= 1e-12 * w[0].abs().max(w[1].abs()));

    let mut blocks = Vec::with_capacity(times.len());
    let mut phi = DMatrix::<f64>::identity(d, d);
    if equispaced {
        let e = mat_exp(sys.a(), gaps[0])?;
        for _ in times {
            phi = &e * &phi;
            blocks.push(sys.c() * &phi);
        }
    } else {
        for &gap in &gaps {
            let e = mat_exp(sys.a(), gap)?;
            phi = &e * &phi;
            blocks.push(sys.c() * &phi);
        }
    }
    Ok(ForwardMap {
        blocks,
        times: times.to_vec(),
    })
}
