//! Observation schedules, measurement simulation, Fisher information
//! assembly, and the exact full posterior.
//!
//! All randomness flows through ChaCha12 keyed by explicit 64-bit seeds
//! (standard normals via the ziggurat sampler), so every draw replays
//! bit-identically. The stacked observation covariance is block diagonal and
//! is never materialized; its inverse acts per block through `Γ_ε`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{mat_exp, symmetric_part};
use crate::lti::{validate_times, LtiSystem};
use crate::prior::CompatiblePrior;

/// How measurement times are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    /// Times supplied directly.
    Explicit,
    /// `tᵢ = i h` exactly.
    Equispaced,
    /// One time uniform in each subinterval `((i-1)h, ih)`.
    UniformSubinterval,
    /// Poisson point process with intensity `1/h` (i.i.d. exponential gaps).
    Poisson,
}

impl ScheduleKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScheduleKind::Explicit => "explicit",
            ScheduleKind::Equispaced => "equispaced",
            ScheduleKind::UniformSubinterval => "uniform_subinterval",
            ScheduleKind::Poisson => "poisson",
        }
    }
}

/// A materialized observation schedule: strictly increasing positive times.
#[derive(Debug, Clone)]
pub struct ObservationSchedule {
    pub kind: ScheduleKind,
    pub times: Vec<f64>,
    /// Spacing (equispaced) or mean spacing (random kinds / explicit).
    pub h: f64,
    pub n: usize,
    /// Seed used for the random kinds; ignored otherwise.
    pub seed: u64,
}

impl ObservationSchedule {
    /// Wraps explicit times; `h` is set to the mean sampling interval
    /// `t_n / n`.
    pub fn explicit(times: Vec<f64>) -> Result<Self> {
        validate_times(&times, "ObservationSchedule::explicit")?;
        let n = times.len();
        let h = times[n - 1] / n as f64;
        Ok(ObservationSchedule {
            kind: ScheduleKind::Explicit,
            times,
            h,
            n,
            seed: 0,
        })
    }
}

/// Materializes a schedule of `n` observations with spacing parameter `h`;
/// deterministic for a fixed seed.
pub fn sample_schedule(kind: ScheduleKind, h: f64, n: usize, seed: u64) -> Result<ObservationSchedule> {
    const OP: &str = "sample_schedule";
    if !h.is_finite() || h <= 0.0 {
        return Err(Error::InvalidSchedule {
            detail: format!("spacing h = {h} must be positive"),
        });
    }
    if n == 0 {
        return Err(Error::InvalidSchedule {
            detail: "need at least one observation".into(),
        });
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let times = match kind {
        ScheduleKind::Explicit => {
            return Err(Error::InvalidSchedule {
                detail: "explicit schedules are built from a time list".into(),
            })
        }
        ScheduleKind::Equispaced => (1..=n).map(|i| i as f64 * h).collect::<Vec<_>>(),
        ScheduleKind::UniformSubinterval => {
            let mut times = Vec::with_capacity(n);
            for i in 1..=n {
                let lo = (i - 1) as f64 * h;
                let hi = i as f64 * h;
                // Open interval: redraw the measure-zero left endpoint.
                let t = loop {
                    let t = rng.random_range(lo..hi);
                    if t > lo {
                        break t;
                    }
                };
                times.push(t);
            }
            times
        }
        ScheduleKind::Poisson => {
            let exp = Exp::new(1.0 / h).expect("positive rate");
            let mut times = Vec::with_capacity(n);
            let mut t = 0.0;
            for _ in 0..n {
                let gap = loop {
                    let g: f64 = exp.sample(&mut rng);
                    if g > 0.0 {
                        break g;
                    }
                };
                t += gap;
                times.push(t);
            }
            times
        }
    };
    validate_times(&times, OP)?;
    Ok(ObservationSchedule {
        kind,
        times,
        h,
        n,
        seed,
    })
}

/// Whether noise is added to simulated outputs.
#[derive(Debug, Clone, Copy)]
pub enum NoiseSetting {
    /// Exact outputs `m_i = C e^{A tᵢ} x₀`.
    Noiseless,
    /// Adds `εᵢ ~ N(0, Γ_ε)` drawn from the seeded generator.
    Seeded(u64),
}

/// Simulated (or recorded) measurements over a schedule. Observation `i` is
/// the `i`-th column of `values`.
#[derive(Debug, Clone)]
pub struct MeasurementSet {
    pub schedule: ObservationSchedule,
    pub values: DMatrix<f64>,
    pub truth: Option<DVector<f64>>,
    /// Noise seed; `None` for noiseless data.
    pub seed: Option<u64>,
}

impl MeasurementSet {
    pub fn n_observations(&self) -> usize {
        self.values.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.values.nrows()
    }

    /// Writes `time,y_1,...,y_k` rows at full double precision
    /// (17 significant digits).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let k = self.output_dim();
        out.push_str("time");
        for j in 1..=k {
            let _ = write!(out, ",y_{j}");
        }
        out.push('\n');
        for (i, &t) in self.schedule.times.iter().enumerate() {
            let _ = write!(out, "{t:.16e}");
            for j in 0..k {
                let _ = write!(out, ",{:.16e}", self.values[(j, i)]);
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Companion metadata: seeds and schedule parameters, as `key = value`
    /// lines.
    pub fn write_metadata(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let _ = writeln!(out, "kind = \"{}\"", self.schedule.kind.as_str());
        let _ = writeln!(out, "h = {:.16e}", self.schedule.h);
        let _ = writeln!(out, "n = {}", self.schedule.n);
        let _ = writeln!(out, "schedule_seed = {}", self.schedule.seed);
        match self.seed {
            Some(s) => {
                let _ = writeln!(out, "noise_seed = {s}");
            }
            None => {
                let _ = writeln!(out, "noiseless = true");
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// Reads a measurement CSV written by [`MeasurementSet::write_csv`];
/// returns the times and the `k x n` value matrix.
pub fn read_measurements_csv(path: &Path) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let file =
        std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, Ok(line))) if line.trim().is_empty() => continue,
            Some((i, Ok(line))) => break (i, line),
            Some((i, Err(e))) => {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    detail: e.to_string(),
                })
            }
            None => return Err(Error::EmptyMeasurements),
        }
    };
    let fields: Vec<&str> = header.1.split(',').collect();
    if fields.first().map(|f| f.trim()) != Some("time") || fields.len() < 2 {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: header.0 + 1,
            detail: "expected header `time,y_1,...,y_k`".into(),
        });
    }
    let k = fields.len() - 1;
    let mut times = Vec::new();
    let mut cols: Vec<f64> = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            detail: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != k + 1 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                detail: format!("expected {} fields, found {}", k + 1, parts.len()),
            });
        }
        let mut nums = parts.iter().map(|p| p.trim().parse::<f64>());
        let t = nums.next().unwrap().map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            detail: e.to_string(),
        })?;
        times.push(t);
        for v in nums {
            cols.push(v.map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                detail: e.to_string(),
            })?);
        }
    }
    if times.is_empty() {
        return Err(Error::EmptyMeasurements);
    }
    let n = times.len();
    let values = DMatrix::from_fn(k, n, |r, c| cols[c * k + r]);
    Ok((times, values))
}

// ---------------------------------------------------------------------------
// Streaming propagation kernels.
// ---------------------------------------------------------------------------

/// Chunk size for the blocked equispaced kernels.
fn chunk_size(n: usize, d: usize) -> usize {
    n.min(d.max(64))
}

fn matrix_power(e: &DMatrix<f64>, mut p: usize) -> DMatrix<f64> {
    let d = e.nrows();
    let mut base = e.clone();
    let mut acc = DMatrix::identity(d, d);
    while p > 0 {
        if p & 1 == 1 {
            acc = &acc * &base;
        }
        base = &base * &base;
        p >>= 1;
    }
    acc
}

/// Stacked output rows `[C E; C E²; ...; C E^B]` and the chunk propagator
/// `E^B`. Turns length-n equispaced sweeps into O(n k d) work instead of
/// O(n d²).
fn output_stack(c: &DMatrix<f64>, e: &DMatrix<f64>, b: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let (k, d) = (c.nrows(), c.ncols());
    let mut w = DMatrix::zeros(b * k, d);
    let mut rows = c * e;
    w.view_mut((0, 0), (k, d)).copy_from(&rows);
    for j in 1..b {
        rows = &rows * e;
        w.view_mut((j * k, 0), (k, d)).copy_from(&rows);
    }
    (w, matrix_power(e, b))
}

fn per_gap_exponentials(
    sys: &LtiSystem,
    times: &[f64],
) -> Result<Vec<DMatrix<f64>>> {
    let mut cache: HashMap<u64, DMatrix<f64>> = HashMap::new();
    let mut exps = Vec::with_capacity(times.len());
    let mut prev = 0.0;
    for &t in times {
        let gap = t - prev;
        prev = t;
        let e = match cache.get(&gap.to_bits()) {
            Some(e) => e.clone(),
            None => {
                let e = mat_exp(sys.a(), gap)?;
                cache.insert(gap.to_bits(), e.clone());
                e
            }
        };
        exps.push(e);
    }
    Ok(exps)
}

/// Noiseless outputs `C e^{A tᵢ} x₀` as columns of a `k x n` matrix.
fn noiseless_outputs(
    sys: &LtiSystem,
    schedule: &ObservationSchedule,
    x0: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let d = sys.state_dim();
    let k = sys.output_dim();
    let n = schedule.n;
    let mut out = DMatrix::zeros(k, n);
    if schedule.kind == ScheduleKind::Equispaced {
        let e = mat_exp(sys.a(), schedule.h)?;
        let b = chunk_size(n, d);
        let (w, e_b) = output_stack(sys.c(), &e, b);
        let mut x = x0.clone();
        let mut i = 0;
        while i < n {
            let len = b.min(n - i);
            let chunk = &w * &x;
            for j in 0..len {
                out.set_column(i + j, &chunk.rows(j * k, k));
            }
            x = &e_b * x;
            i += len;
        }
    } else {
        let exps = per_gap_exponentials(sys, &schedule.times)?;
        let mut x = x0.clone();
        for (i, e) in exps.iter().enumerate() {
            x = e * x;
            out.set_column(i, &(sys.c() * &x));
        }
    }
    Ok(out)
}

/// Simulates `mᵢ = C e^{A tᵢ} x₀ + εᵢ` over the schedule.
pub fn simulate_measurements(
    sys: &LtiSystem,
    schedule: &ObservationSchedule,
    x0: &DVector<f64>,
    noise: NoiseSetting,
) -> Result<MeasurementSet> {
    const OP: &str = "simulate_measurements";
    if x0.len() != sys.state_dim() {
        return Err(Error::DimensionMismatch {
            op: OP,
            detail: format!(
                "state dimension {} but x0 has length {}",
                sys.state_dim(),
                x0.len()
            ),
        });
    }
    let mut values = noiseless_outputs(sys, schedule, x0)?;
    let seed = match noise {
        NoiseSetting::Noiseless => None,
        NoiseSetting::Seeded(seed) => {
            let k = sys.output_dim();
            let l = sys.noise_cholesky().l();
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            for i in 0..schedule.n {
                let z = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
                let eps = &l * z;
                let mut col = values.column_mut(i);
                col += eps;
            }
            Some(seed)
        }
    };
    Ok(MeasurementSet {
        schedule: schedule.clone(),
        values,
        truth: Some(x0.clone()),
        seed,
    })
}

// ---------------------------------------------------------------------------
// Fisher information.
// ---------------------------------------------------------------------------

/// Strategy for assembling the Fisher information.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FisherMode {
    /// Sum over observations with per-gap propagation.
    Direct,
    /// Doubling recursion on `tᵢ = ih` (O(log n) matrix products).
    Doubling,
    /// Doubling for equispaced schedules with n > 1000, direct otherwise.
    Auto,
}

/// Fisher information `H = Σᵢ e^{Aᵀtᵢ} Cᵀ Γ_ε⁻¹ C e^{Atᵢ}` with automatic
/// mode selection.
pub fn fisher_information(sys: &LtiSystem, schedule: &ObservationSchedule) -> Result<DMatrix<f64>> {
    fisher_information_with_mode(sys, schedule, FisherMode::Auto)
}

pub fn fisher_information_with_mode(
    sys: &LtiSystem,
    schedule: &ObservationSchedule,
    mode: FisherMode,
) -> Result<DMatrix<f64>> {
    if schedule.n == 0 {
        return Err(Error::EmptySchedule);
    }
    let use_doubling = match mode {
        FisherMode::Direct => false,
        FisherMode::Doubling => {
            if schedule.kind != ScheduleKind::Equispaced {
                return Err(Error::InvalidArgument {
                    op: "fisher_information",
                    detail: "doubling requires an equispaced schedule".into(),
                });
            }
            true
        }
        FisherMode::Auto => schedule.kind == ScheduleKind::Equispaced && schedule.n > 1000,
    };
    if use_doubling {
        fisher_equispaced_doubling(sys, schedule.h, schedule.n)
    } else {
        fisher_direct(sys, schedule)
    }
}

fn fisher_direct(sys: &LtiSystem, schedule: &ObservationSchedule) -> Result<DMatrix<f64>> {
    let d = sys.state_dim();
    let exps = per_gap_exponentials(sys, &schedule.times)?;
    let mut rows = sys.whitened_output();
    let mut h = DMatrix::zeros(d, d);
    for e in &exps {
        rows = &rows * e;
        h += rows.tr_mul(&rows);
    }
    Ok(symmetric_part(&h))
}

/// `Σ_{i=1..n} (Eⁱ)ᵀ M Eⁱ` by binary doubling:
/// `H(2m) = H(m) + (Eᵐ)ᵀ H(m) Eᵐ`, plus one direct term for odd bits.
fn fisher_equispaced_doubling(sys: &LtiSystem, h_step: f64, n: usize) -> Result<DMatrix<f64>> {
    let e = mat_exp(sys.a(), h_step)?;
    let m = sys.output_information();
    let mut h = e.transpose() * &m * &e;
    let mut p = e.clone();
    let bits = usize::BITS - n.leading_zeros();
    for shift in (0..bits - 1).rev() {
        h = &h + p.transpose() * &h * &p;
        p = &p * &p;
        if (n >> shift) & 1 == 1 {
            p = &p * &e;
            h = &h + p.transpose() * &m * &p;
        }
    }
    Ok(symmetric_part(&h))
}

/// Whitened data pulled back through the adjoint dynamics:
/// `Gᵀ Γ_obs⁻¹ m = Σᵢ e^{Aᵀtᵢ} Cᵀ Γ_ε⁻¹ mᵢ`, accumulated blockwise.
pub fn accumulate_adjoint(
    sys: &LtiSystem,
    schedule: &ObservationSchedule,
    values: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    const OP: &str = "accumulate_adjoint";
    if values.ncols() != schedule.n || values.nrows() != sys.output_dim() {
        return Err(Error::DimensionMismatch {
            op: OP,
            detail: format!(
                "values are {}x{} for {} outputs and {} observations",
                values.nrows(),
                values.ncols(),
                sys.output_dim(),
                schedule.n
            ),
        });
    }
    if schedule.n == 0 {
        return Err(Error::EmptyMeasurements);
    }
    let d = sys.state_dim();
    let k = sys.output_dim();
    let n = schedule.n;
    // u = Γ_ε⁻¹ m, applied through the Cholesky factorization.
    let u = sys.noise_cholesky().solve(values);

    if schedule.kind == ScheduleKind::Equispaced {
        let e = mat_exp(sys.a(), schedule.h)?;
        let b = chunk_size(n, d);
        let (w, e_b) = output_stack(sys.c(), &e, b);
        let n_chunks = n.div_ceil(b);
        let mut v = DVector::zeros(d);
        for q in (0..n_chunks).rev() {
            let start = q * b;
            let len = b.min(n - start);
            let mut stacked = DVector::zeros(len * k);
            for j in 0..len {
                stacked.rows_mut(j * k, k).copy_from(&u.column(start + j));
            }
            let s_q = w.rows(0, len * k).tr_mul(&stacked);
            if q + 1 < n_chunks {
                v = e_b.tr_mul(&v) + s_q;
            } else {
                v = s_q;
            }
        }
        Ok(v)
    } else {
        let exps = per_gap_exponentials(sys, &schedule.times)?;
        let mut v = DVector::zeros(d);
        for i in (0..n).rev() {
            v += sys.c().tr_mul(&u.column(i).clone_owned());
            v = exps[i].tr_mul(&v);
        }
        Ok(v)
    }
}

// ---------------------------------------------------------------------------
// Posterior.
// ---------------------------------------------------------------------------

/// A Gaussian posterior (exact or approximate) for the initial condition.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub method: String,
    /// `None` for the full posterior, `Some(r)` for rank-r approximations.
    pub rank: Option<usize>,
}

/// Assembles a posterior from a Fisher information (exact or approximate)
/// and the adjoint data vector `z = Gᵀ Γ_obs⁻¹ m`.
///
/// Uses the factored sandwich form `Γ_pos = R (I + Rᵀ H R)⁻¹ Rᵀ` with
/// `Γ_pr = RRᵀ`, which avoids inverting a possibly ill-conditioned prior.
pub fn posterior_from_parts(
    prior: &CompatiblePrior,
    h: &DMatrix<f64>,
    z: &DVector<f64>,
    method: impl Into<String>,
    rank: Option<usize>,
) -> Result<Posterior> {
    const OP: &str = "posterior_from_parts";
    let d = prior.dim();
    if h.nrows() != d || h.ncols() != d || z.len() != d {
        return Err(Error::DimensionMismatch {
            op: OP,
            detail: format!(
                "prior dimension {} with H {}x{} and z of length {}",
                d,
                h.nrows(),
                h.ncols(),
                z.len()
            ),
        });
    }
    let r = &prior.factor.factor;
    let inner = symmetric_part(&(r.tr_mul(&(h * r)))) + DMatrix::identity(d, d);
    let chol = nalgebra::Cholesky::new(inner).ok_or(Error::NotPositiveDefinite { op: OP })?;
    let cov = symmetric_part(&(r * chol.solve(&r.transpose())));
    let mean = r * chol.solve(&r.tr_mul(z));
    Ok(Posterior {
        mean,
        cov,
        method: method.into(),
        rank,
    })
}

/// The posterior covariance as an implicit update of the prior: returns the
/// factor `K` with `Γ_pos = Γ_pr - K Kᵀ` and `rank(K) <= rank(H)`.
///
/// The dense covariance from [`posterior_from_parts`] is authoritative at
/// benchmark scale; this form carries the same information in `d x rank(H)`
/// storage when the information matrix is low-rank.
pub fn posterior_prior_update(
    prior: &CompatiblePrior,
    h: &DMatrix<f64>,
) -> Result<crate::linalg::GramianFactor> {
    const OP: &str = "posterior_prior_update";
    let d = prior.dim();
    if h.nrows() != d || h.ncols() != d {
        return Err(Error::DimensionMismatch {
            op: OP,
            detail: format!("H is {}x{} for prior dimension {}", h.nrows(), h.ncols(), d),
        });
    }
    let r = &prior.factor.factor;
    let g = symmetric_part(&r.tr_mul(&(h * r)));
    let inner = &g + DMatrix::identity(d, d);
    let chol = nalgebra::Cholesky::new(inner).ok_or(Error::NotPositiveDefinite { op: OP })?;
    // Γ_pr - Γ_pos = R (I - (I + G)⁻¹) Rᵀ = R M Rᵀ with M PSD of rank(G).
    let m = symmetric_part(&chol.solve(&g));
    let factor = crate::linalg::spsd_sqrt_factor(&m, crate::linalg::DEFAULT_CLIP_TOL)?;
    Ok(crate::linalg::GramianFactor {
        factor: r * factor.factor,
        rank: factor.rank,
        clip_tol: factor.clip_tol,
    })
}

/// Exact posterior for the measurements: Fisher information and adjoint data
/// are assembled on the measurement schedule, then combined with the prior.
pub fn full_posterior(
    prior: &CompatiblePrior,
    sys: &LtiSystem,
    measurements: &MeasurementSet,
) -> Result<Posterior> {
    let h = fisher_information(sys, &measurements.schedule)?;
    let z = accumulate_adjoint(sys, &measurements.schedule, &measurements.values)?;
    posterior_from_parts(prior, &h, &z, "full", None)
}
