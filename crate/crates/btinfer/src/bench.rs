//! Benchmark system construction and ingestion: a 1D heat-equation
//! generator and a Matrix Market loader for externally supplied LTI
//! benchmarks.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::lti::LtiSystem;
use crate::mm;

/// Central finite-difference Laplacian on (0, 1) with homogeneous Dirichlet
/// conditions, scaled so the spectral abscissa hits `target_abscissa`.
///
/// The unscaled operator is `(d+1)² tridiag(1, -2, 1)` with eigenvalues
/// `-4(d+1)² sin²(jπ/(2(d+1)))`; the diffusivity follows in closed form from
/// the smallest one. `C` selects the grid node nearest `output_fraction`
/// (ties toward the smaller index); `B` defaults to the identity. The noise
/// covariance is set to the identity and is expected to be replaced by the
/// caller.
pub fn gen_heat(d: usize, output_fraction: f64, target_abscissa: f64) -> Result<LtiSystem> {
    const OP: &str = "gen_heat";
    if d < 3 {
        return Err(Error::InvalidArgument {
            op: OP,
            detail: format!("need at least 3 grid nodes, got {d}"),
        });
    }
    if !output_fraction.is_finite() || output_fraction <= 0.0 || output_fraction >= 1.0 {
        return Err(Error::InvalidArgument {
            op: OP,
            detail: format!("output fraction {output_fraction} must lie in (0, 1)"),
        });
    }
    if !target_abscissa.is_finite() || target_abscissa >= 0.0 {
        return Err(Error::InvalidArgument {
            op: OP,
            detail: format!("target abscissa {target_abscissa} must be negative"),
        });
    }
    let n1 = (d + 1) as f64;
    let raw_abscissa = -4.0 * n1 * n1 * (std::f64::consts::PI / (2.0 * n1)).sin().powi(2);
    let kappa = target_abscissa / raw_abscissa;
    let scale = kappa * n1 * n1;
    let mut a = DMatrix::zeros(d, d);
    for i in 0..d {
        a[(i, i)] = -2.0 * scale;
        if i + 1 < d {
            a[(i, i + 1)] = scale;
            a[(i + 1, i)] = scale;
        }
    }

    // Grid nodes are x_i = i/(d+1) for i = 1..d; pick the nearest one.
    let x = output_fraction * n1;
    let lower = x.floor();
    let node = if x - lower > 0.5 { lower + 1.0 } else { lower } as usize;
    let node = node.clamp(1, d);
    let mut c = DMatrix::zeros(1, d);
    c[(0, node - 1)] = 1.0;

    LtiSystem::new(a, Some(DMatrix::identity(d, d)), c, DMatrix::identity(1, 1))
}

/// Closed-form Dirichlet spectrum of the generated heat operator.
pub fn heat_spectrum(d: usize, target_abscissa: f64) -> Vec<f64> {
    let n1 = (d + 1) as f64;
    let raw_abscissa = -4.0 * n1 * n1 * (std::f64::consts::PI / (2.0 * n1)).sin().powi(2);
    let kappa = target_abscissa / raw_abscissa;
    (1..=d)
        .map(|j| {
            -4.0 * kappa * n1 * n1 * (j as f64 * std::f64::consts::PI / (2.0 * n1)).sin().powi(2)
        })
        .collect()
}

/// Where the measurement-noise covariance comes from when loading a system.
#[derive(Debug, Clone)]
pub enum NoiseSpec {
    /// A Matrix Market file holding the full covariance.
    MatrixFile(PathBuf),
    /// Diagonal covariance entries (variances) given inline.
    DiagonalVariances(Vec<f64>),
}

/// File paths for an externally supplied system.
#[derive(Debug, Clone)]
pub struct SystemPaths {
    pub a: PathBuf,
    pub b: Option<PathBuf>,
    pub c: PathBuf,
    pub noise: NoiseSpec,
}

/// Loads a system from Matrix Market files; dimensions are cross-checked at
/// construction.
pub fn load_system(paths: &SystemPaths) -> Result<LtiSystem> {
    let a = mm::read_matrix(&paths.a)?;
    let b = paths.b.as_ref().map(|p| mm::read_matrix(p)).transpose()?;
    let c = mm::read_matrix(&paths.c)?;
    let noise = match &paths.noise {
        NoiseSpec::MatrixFile(p) => mm::read_matrix(p)?,
        NoiseSpec::DiagonalVariances(vars) => {
            if vars.iter().any(|v| !v.is_finite() || *v <= 0.0) {
                return Err(Error::InvalidArgument {
                    op: "load_system",
                    detail: "diagonal noise variances must be positive".into(),
                });
            }
            DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(vars))
        }
    };
    LtiSystem::new(a, b, c, noise)
}

/// Writes the system matrices as `A.mtx`, `B.mtx`, `C.mtx`, `Gamma_eps.mtx`.
pub fn export_system(sys: &LtiSystem, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    mm::write_matrix(&dir.join("A.mtx"), sys.a())?;
    if let Some(b) = sys.b() {
        mm::write_matrix(&dir.join("B.mtx"), b)?;
    }
    mm::write_matrix(&dir.join("C.mtx"), sys.c())?;
    mm::write_matrix(&dir.join("Gamma_eps.mtx"), sys.noise_cov())?;
    Ok(())
}
