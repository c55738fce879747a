//! Configuration-driven experiment pipeline: build or load a system,
//! construct a compatible prior, draw a truth, simulate measurements,
//! compute the exact posterior once, then score every requested
//! (rank, method) approximation by relative mean error and Förstner
//! covariance distance. Results land in `results.csv`, `spectra.csv`, a
//! `manifest.toml` echoing the configuration and seeds, and a `plot.py`
//! rendering script.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use btinfer::bench::gen_heat;
use btinfer::inference::{
    accumulate_adjoint, fisher_information_with_mode, full_posterior, sample_schedule,
    simulate_measurements, MeasurementSet, NoiseSetting, ObservationSchedule, Posterior,
};
use btinfer::lti::{noisy_observability_gramian, spectral_abscissa, LtiSystem};
use btinfer::optimal::{
    forstner_distance, olr_mean, olru_covariance, olru_mean, spantini_eigenpairs,
    PencilDecomposition,
};
use btinfer::prior::{make_compatible, spin_up_prior, CompatiblePrior, COMPAT_TOL};
use btinfer::reduction::{bt_h_core, bt_posterior, bt_q_core, project, BalancedCore};

use crate::config::{
    BenchmarkSource, ExperimentConfig, Method, PriorKindConfig,
};
use crate::error::{stage, CliError};

/// One scored (rank, method) combination.
#[derive(Debug, Clone)]
pub struct RankRow {
    pub r: usize,
    pub method: Method,
    pub mean_rel_err: f64,
    /// Absent for mean-only methods.
    pub forstner_err: Option<f64>,
    /// Spectral abscissa of the reduced dynamics, for the reduced methods.
    pub reduced_abscissa: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SpectrumRow {
    pub i: usize,
    pub tau_ratio: f64,
    pub delta_ratio: f64,
}

/// Everything one replicate produces.
#[derive(Debug)]
pub struct ExperimentResult {
    pub rows: Vec<RankRow>,
    pub spectra: Vec<SpectrumRow>,
    /// `‖h·H - Q_m‖_F / ‖Q_m‖_F`, the sum-vs-integral agreement diagnostic.
    pub rel_frob_diff: f64,
    pub abscissa: f64,
    pub bt_q_usable_rank: usize,
    pub bt_h_usable_rank: Option<usize>,
    /// Requested ranks a reduced method could not reach (beyond its usable
    /// rank); recorded instead of failing the run.
    pub unavailable: Vec<(Method, usize)>,
    /// Ranks where the pencil eigenvalues tie at the truncation boundary.
    pub tie_warnings: Vec<usize>,
}

/// Builds the system described by the benchmark section (unit noise; the
/// noise stage replaces it).
pub fn build_system(config: &ExperimentConfig) -> Result<LtiSystem, CliError> {
    match config.benchmark.source {
        BenchmarkSource::GeneratedHeat => {
            let d = config.benchmark.d.expect("validated");
            let fraction = config.benchmark.output_fraction.unwrap_or(2.0 / 3.0);
            let abscissa = config.benchmark.target_abscissa.unwrap_or(-0.1);
            gen_heat(d, fraction, abscissa).map_err(stage("system"))
        }
        BenchmarkSource::Files => {
            // Unit noise placeholder; the noise stage installs the
            // configured Γ_ε.
            let a = btinfer::mm::read_matrix(config.benchmark.a_path.as_ref().expect("validated"))
                .map_err(stage("system"))?;
            let b = config
                .benchmark
                .b_path
                .as_ref()
                .map(|p| btinfer::mm::read_matrix(p))
                .transpose()
                .map_err(stage("system"))?;
            let c = btinfer::mm::read_matrix(config.benchmark.c_path.as_ref().expect("validated"))
                .map_err(stage("system"))?;
            let k = c.nrows();
            LtiSystem::new(a, b, c, DMatrix::identity(k, k)).map_err(stage("system"))
        }
    }
}

/// Builds the prior described by the prior section.
pub fn build_prior(config: &ExperimentConfig, sys: &LtiSystem) -> Result<CompatiblePrior, CliError> {
    let d = sys.state_dim();
    match config.prior.kind {
        PriorKindConfig::SpinUp => {
            let b = sys.b().ok_or(CliError::Config(
                "prior.kind = spin_up requires the system to provide B".into(),
            ))?;
            spin_up_prior(sys.a(), b, config.prior.ridge).map_err(stage("prior"))
        }
        PriorKindConfig::SpinUpIdentity => {
            spin_up_prior(sys.a(), &DMatrix::identity(d, d), config.prior.ridge)
                .map_err(stage("prior"))
        }
        PriorKindConfig::MakeCompatible => {
            let path = config.prior.gamma0_path.as_ref().expect("validated");
            let gamma0 = btinfer::mm::read_matrix(path).map_err(stage("prior"))?;
            let (prior, _, _) =
                make_compatible(sys.a(), &gamma0, COMPAT_TOL).map_err(stage("prior"))?;
            Ok(prior)
        }
    }
}

/// Per-channel noise calibration: σ is `fraction` of the max noiseless
/// output magnitude of the seeded truth over the schedule.
pub fn calibrate_noise(
    sys: &LtiSystem,
    schedule: &ObservationSchedule,
    truth: &DVector<f64>,
    fraction: f64,
) -> Result<DMatrix<f64>, CliError> {
    let noiseless = simulate_measurements(sys, schedule, truth, NoiseSetting::Noiseless)
        .map_err(stage("noise"))?;
    let k = sys.output_dim();
    let mut vars = Vec::with_capacity(k);
    for ch in 0..k {
        let max_mag = (0..schedule.n)
            .map(|i| noiseless.values[(ch, i)].abs())
            .fold(0.0f64, f64::max);
        if max_mag == 0.0 {
            return Err(CliError::Stage {
                stage: "noise",
                source: btinfer::Error::InvalidArgument {
                    op: "calibrate_noise",
                    detail: format!("output channel {} is identically zero", ch + 1),
                },
            });
        }
        vars.push((fraction * max_mag).powi(2));
    }
    Ok(DMatrix::from_diagonal(&DVector::from_vec(vars)))
}

/// Resolves the configured noise covariance: explicit sigmas, a covariance
/// file, or the calibration rule applied to the given truth.
pub fn resolve_noise(
    config: &ExperimentConfig,
    sys: &LtiSystem,
    schedule: &ObservationSchedule,
    truth: &DVector<f64>,
) -> Result<DMatrix<f64>, CliError> {
    if let Some(sigma) = &config.noise.sigma {
        if sigma.len() != sys.output_dim() {
            return Err(CliError::Config(format!(
                "noise.sigma has {} entries for {} output channels",
                sigma.len(),
                sys.output_dim()
            )));
        }
        let vars: Vec<f64> = sigma.iter().map(|s| s * s).collect();
        return Ok(DMatrix::from_diagonal(&DVector::from_vec(vars)));
    }
    if let Some(path) = &config.noise.matrix_path {
        return btinfer::mm::read_matrix(path).map_err(stage("noise"));
    }
    let fraction = config.noise.fraction.expect("validated");
    calibrate_noise(sys, schedule, truth, fraction)
}

fn mean_rel_err(candidate: &DVector<f64>, reference: &DVector<f64>) -> f64 {
    let denom = reference.norm();
    if denom == 0.0 {
        (candidate - reference).norm()
    } else {
        (candidate - reference).norm() / denom
    }
}

struct ReplicateContext<'a> {
    config: &'a ExperimentConfig,
    sys: LtiSystem,
    prior: &'a CompatiblePrior,
    measurements: MeasurementSet,
    posterior: Posterior,
    adjoint: DVector<f64>,
    pencil: PencilDecomposition,
    core_q: BalancedCore,
    core_h: Option<BalancedCore>,
    rel_frob_diff: f64,
    abscissa: f64,
}

/// Rows produced at one rank plus the (method, rank) pairs that were
/// unavailable there.
type ScoredRank = (Vec<RankRow>, Vec<(Method, usize)>);

fn score_rank(ctx: &ReplicateContext, r: usize) -> Result<ScoredRank, CliError> {
    let mut rows = Vec::new();
    let mut unavailable = Vec::new();
    for &method in &ctx.config.methods.enabled {
        match method {
            Method::Full => {
                rows.push(RankRow {
                    r,
                    method,
                    mean_rel_err: 0.0,
                    forstner_err: Some(forstner_distance(&ctx.posterior.cov, &ctx.posterior.cov).map_err(stage("score"))?),
                    reduced_abscissa: None,
                });
            }
            Method::Olru => {
                let cov = olru_covariance(ctx.prior, &ctx.pencil, r).map_err(stage("score"))?;
                let mean = olru_mean(ctx.prior, &ctx.pencil, r, &ctx.adjoint)
                    .map_err(stage("score"))?;
                rows.push(RankRow {
                    r,
                    method,
                    mean_rel_err: mean_rel_err(&mean, &ctx.posterior.mean),
                    forstner_err: Some(
                        forstner_distance(&ctx.posterior.cov, &cov).map_err(stage("score"))?,
                    ),
                    reduced_abscissa: None,
                });
            }
            Method::Olr => {
                let mean =
                    olr_mean(ctx.prior, &ctx.pencil, r, &ctx.adjoint).map_err(stage("score"))?;
                rows.push(RankRow {
                    r,
                    method,
                    mean_rel_err: mean_rel_err(&mean, &ctx.posterior.mean),
                    forstner_err: None,
                    reduced_abscissa: None,
                });
            }
            Method::BtQ | Method::BtH => {
                let core = match method {
                    Method::BtQ => &ctx.core_q,
                    _ => match &ctx.core_h {
                        Some(core) => core,
                        None => {
                            unavailable.push((method, r));
                            continue;
                        }
                    },
                };
                if r > core.usable_rank() {
                    unavailable.push((method, r));
                    continue;
                }
                let bases = core.bases(r).map_err(stage("score"))?;
                let red = project(bases, ctx.sys.a(), ctx.sys.c(), ctx.sys.b())
                    .map_err(stage("score"))?;
                let post = bt_posterior(&red, ctx.prior, &ctx.sys, &ctx.measurements)
                    .map_err(stage("score"))?;
                rows.push(RankRow {
                    r,
                    method,
                    mean_rel_err: mean_rel_err(&post.mean, &ctx.posterior.mean),
                    forstner_err: Some(
                        forstner_distance(&ctx.posterior.cov, &post.cov)
                            .map_err(stage("score"))?,
                    ),
                    reduced_abscissa: Some(red.reduced_abscissa),
                });
            }
        }
    }
    Ok((rows, unavailable))
}

/// Runs one replicate of the experiment (shared system and prior; truth,
/// noise, and everything downstream are replicate-specific).
fn run_replicate(
    config: &ExperimentConfig,
    base_sys: &LtiSystem,
    prior: &CompatiblePrior,
    schedule: &ObservationSchedule,
    truth_seed: u64,
    noise_seed: u64,
) -> Result<ExperimentResult, CliError> {
    let truth = prior.sample(truth_seed);
    let noise_cov = resolve_noise(config, base_sys, schedule, &truth)?;
    let sys = base_sys.clone().with_noise_cov(noise_cov).map_err(stage("noise"))?;

    let measurements = simulate_measurements(&sys, schedule, &truth, NoiseSetting::Seeded(noise_seed))
        .map_err(stage("measurements"))?;

    let fisher_mode = config.fisher.mode.to_mode();
    let h = fisher_information_with_mode(&sys, schedule, fisher_mode).map_err(stage("fisher"))?;
    let q_m = noisy_observability_gramian(&sys).map_err(stage("fisher"))?;
    let rel_frob_diff = (&h * schedule.h - &q_m).norm() / q_m.norm();
    let abscissa = spectral_abscissa(sys.a()).map_err(stage("fisher"))?;

    let adjoint =
        accumulate_adjoint(&sys, schedule, &measurements.values).map_err(stage("posterior"))?;
    let posterior = full_posterior(prior, &sys, &measurements).map_err(stage("posterior"))?;

    let pencil = spantini_eigenpairs(&h, prior).map_err(stage("pencils"))?;
    let core_q = bt_q_core(&sys, prior).map_err(stage("pencils"))?;
    let needs_bt_h = config.methods.enabled.contains(&Method::BtH);
    let core_h = if needs_bt_h {
        Some(bt_h_core(&sys, prior, schedule).map_err(stage("pencils"))?)
    } else {
        None
    };

    let d = sys.state_dim();
    let ranks = config.rank_grid(d)?;

    let ctx = ReplicateContext {
        config,
        sys,
        prior,
        measurements,
        posterior,
        adjoint,
        pencil,
        core_q,
        core_h,
        rel_frob_diff,
        abscissa,
    };

    // Per-rank evaluations are independent and pure; results are collected
    // in rank order so output is identical across thread counts.
    let scored: Result<Vec<_>, CliError> =
        ranks.par_iter().map(|&r| score_rank(&ctx, r)).collect();
    let scored = scored?;
    let mut rows = Vec::new();
    let mut unavailable = Vec::new();
    for (mut r_rows, mut r_unavail) in scored {
        rows.append(&mut r_rows);
        unavailable.append(&mut r_unavail);
    }

    let tau = ctx.pencil.tau();
    let delta = ctx.core_q.hankel_spectrum();
    let tau_top = tau.first().copied().unwrap_or(0.0);
    let delta_top = delta.first().copied().unwrap_or(0.0);
    let spectra: Vec<SpectrumRow> = (0..d)
        .map(|i| SpectrumRow {
            i: i + 1,
            tau_ratio: if tau_top > 0.0 { tau[i] / tau_top } else { 0.0 },
            delta_ratio: if i < delta.len() && delta_top > 0.0 {
                delta[i] / delta_top
            } else {
                0.0
            },
        })
        .collect();

    let tie_warnings: Vec<usize> = ranks
        .iter()
        .copied()
        .filter(|&r| ctx.pencil.truncation_tie(r))
        .collect();

    Ok(ExperimentResult {
        rows,
        spectra,
        rel_frob_diff: ctx.rel_frob_diff,
        abscissa: ctx.abscissa,
        bt_q_usable_rank: ctx.core_q.usable_rank(),
        bt_h_usable_rank: ctx.core_h.as_ref().map(|c| c.usable_rank()),
        unavailable,
        tie_warnings,
    })
}

/// Runs the configured experiment and writes all outputs under the output
/// directory (replicates beyond the first land in `rep_NNN` subdirectories).
/// Returns the first replicate's result.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult, CliError> {
    config.validate()?;
    let sys = build_system(config)?;
    let prior = build_prior(config, &sys)?;
    let schedule = sample_schedule(
        config.schedule.kind.to_kind(),
        config.schedule.h,
        config.schedule.n,
        config.schedule.seed,
    )
    .map_err(stage("schedule"))?;

    let out_root = &config.output.dir;
    let mut first = None;
    for rep in 0..config.replicates.n {
        let truth_seed = config.seeds.truth_seed.wrapping_add(rep as u64);
        let noise_seed = config.seeds.noise_seed.wrapping_add(rep as u64);
        let result = run_replicate(config, &sys, &prior, &schedule, truth_seed, noise_seed)?;
        let dir = if config.replicates.n == 1 {
            out_root.clone()
        } else {
            out_root.join(format!("rep_{rep:03}"))
        };
        write_outputs(config, &result, &dir, truth_seed, noise_seed)?;
        if rep == 0 {
            first = Some(result);
        }
    }
    Ok(first.expect("at least one replicate"))
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.16e}"),
        None => String::new(),
    }
}

/// Writes `results.csv`, `spectra.csv`, `manifest.toml`, and `plot.py`.
pub fn write_outputs(
    config: &ExperimentConfig,
    result: &ExperimentResult,
    dir: &Path,
    truth_seed: u64,
    noise_seed: u64,
) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display().to_string(), e))?;

    let mut results = String::from("r,method,mean_rel_err,forstner_err,reduced_abscissa\n");
    for row in &result.rows {
        let _ = writeln!(
            results,
            "{},{},{:.16e},{},{}",
            row.r,
            row.method.as_str(),
            row.mean_rel_err,
            fmt_opt(row.forstner_err),
            fmt_opt(row.reduced_abscissa),
        );
    }
    let path = dir.join("results.csv");
    std::fs::write(&path, results).map_err(|e| CliError::io(path.display().to_string(), e))?;

    let mut spectra = String::from("i,tau_over_tau1,delta_over_delta1\n");
    for row in &result.spectra {
        let _ = writeln!(
            spectra,
            "{},{:.16e},{:.16e}",
            row.i, row.tau_ratio, row.delta_ratio
        );
    }
    let path = dir.join("spectra.csv");
    std::fs::write(&path, spectra).map_err(|e| CliError::io(path.display().to_string(), e))?;

    let mut manifest = String::new();
    let _ = writeln!(manifest, "version = \"{}\"", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(manifest, "truth_seed = {truth_seed}");
    let _ = writeln!(manifest, "noise_seed = {noise_seed}");
    let _ = writeln!(manifest, "schedule_seed = {}", config.schedule.seed);
    let _ = writeln!(manifest, "rel_frob_diff = {:.16e}", result.rel_frob_diff);
    let _ = writeln!(manifest, "abscissa = {:.16e}", result.abscissa);
    let _ = writeln!(manifest, "bt_q_usable_rank = {}", result.bt_q_usable_rank);
    if let Some(rank) = result.bt_h_usable_rank {
        let _ = writeln!(manifest, "bt_h_usable_rank = {rank}");
    }
    if !result.unavailable.is_empty() {
        let list: Vec<String> = result
            .unavailable
            .iter()
            .map(|(m, r)| format!("\"{} at r = {}\"", m.as_str(), r))
            .collect();
        let _ = writeln!(manifest, "unavailable = [{}]", list.join(", "));
    }
    if !result.tie_warnings.is_empty() {
        let list: Vec<String> = result.tie_warnings.iter().map(|r| r.to_string()).collect();
        let _ = writeln!(manifest, "tie_warning_ranks = [{}]", list.join(", "));
    }
    let _ = writeln!(manifest, "\n[config]");
    let echoed = toml::to_string(config)
        .map_err(|e| CliError::Config(format!("cannot echo config: {e}")))?;
    // Nest the echoed config one level down.
    for line in echoed.lines() {
        if let Some(section) = line.strip_prefix('[') {
            let _ = writeln!(manifest, "[config.{section}");
        } else {
            let _ = writeln!(manifest, "{line}");
        }
    }
    let path = dir.join("manifest.toml");
    std::fs::write(&path, manifest).map_err(|e| CliError::io(path.display().to_string(), e))?;

    let path = dir.join("plot.py");
    std::fs::write(&path, PLOT_SCRIPT).map_err(|e| CliError::io(path.display().to_string(), e))?;
    Ok(())
}

/// Rendering is an external step: the emitted script reads the CSVs next to
/// it and draws the spectra / mean-error / covariance-error panels.
const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Renders results.csv and spectra.csv into a three-panel figure."""
import csv
import os.path as osp

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = osp.dirname(osp.abspath(__file__))

spectra = {"i": [], "tau": [], "delta": []}
with open(osp.join(here, "spectra.csv")) as f:
    for row in csv.DictReader(f):
        spectra["i"].append(int(row["i"]))
        spectra["tau"].append(float(row["tau_over_tau1"]))
        spectra["delta"].append(float(row["delta_over_delta1"]))

series = {}
with open(osp.join(here, "results.csv")) as f:
    for row in csv.DictReader(f):
        m = row["method"]
        series.setdefault(m, {"r": [], "mean": [], "forstner": []})
        series[m]["r"].append(int(row["r"]))
        series[m]["mean"].append(float(row["mean_rel_err"]))
        series[m]["forstner"].append(
            float(row["forstner_err"]) if row["forstner_err"] else None
        )

fig, axes = plt.subplots(1, 3, figsize=(13, 3.8))
axes[0].semilogy(spectra["i"], spectra["tau"], "o-", ms=3, label=r"$\tau_i/\tau_1$")
axes[0].semilogy(spectra["i"], spectra["delta"], "s-", ms=3, label=r"$\delta_i/\delta_1$")
axes[0].set_xlabel("index $i$")
axes[0].set_title("normalized pencil spectra")
axes[0].legend()

for m, data in sorted(series.items()):
    axes[1].semilogy(data["r"], data["mean"], "o-", ms=3, label=m)
axes[1].set_xlabel("rank $r$")
axes[1].set_title("relative posterior mean error")
axes[1].legend()

for m, data in sorted(series.items()):
    pts = [(r, v) for r, v in zip(data["r"], data["forstner"]) if v is not None]
    if pts:
        axes[2].semilogy([p[0] for p in pts], [max(p[1], 1e-300) for p in pts],
                         "o-", ms=3, label=m)
axes[2].set_xlabel("rank $r$")
axes[2].set_title("posterior covariance error (Forstner)")
axes[2].legend()

fig.tight_layout()
fig.savefig(osp.join(here, "figure.png"), dpi=150)
print("wrote", osp.join(here, "figure.png"))
"#;
