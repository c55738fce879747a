//! Command-line interface: Gramian export, prior construction, model
//! reduction, posterior inference from measurement CSVs, experiment runs,
//! and heat-benchmark generation.
//!
//! Failures print one line per error, `<category>: <message>`, and exit
//! nonzero; usage errors exit 2.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

use btinfer::inference::{
    accumulate_adjoint, fisher_information_with_mode, full_posterior, read_measurements_csv,
    sample_schedule, MeasurementSet, ObservationSchedule,
};
use btinfer::lti::{noisy_observability_gramian, reachability_gramian, spectral_abscissa};
use btinfer::prior::PriorProvenance;
use btinfer::reduction::{bt_h_core, bt_q_core, export_reduction, project};

use btinfer_cli::config::{ExperimentConfig, PriorKindConfig};
use btinfer_cli::error::{stage, CliError};
use btinfer_cli::experiment::{build_prior, build_system, run_experiment};

#[derive(Parser)]
#[command(
    name = "btinfer",
    version,
    about = "Balanced truncation for Bayesian inference of LTI initial conditions"
)]
struct Cli {
    /// TOML configuration file (see README for the schema).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides the config's output.dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Master seed override: schedule, truth, and noise seeds become
    /// seed, seed+1, seed+2.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for per-rank evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute and export the reachability Gramian, the noise-weighted
    /// observability Gramian, and the Fisher information of the configured
    /// schedule.
    Gramian,
    /// Construct a dynamics-compatible prior and export its covariance and
    /// factor.
    MakePrior,
    /// Export a balanced reduction (bases, operators, Hankel values).
    Reduce {
        /// Balancing pencil.
        #[arg(long, value_enum)]
        method: ReduceMethod,
        /// Truncation order.
        #[arg(long)]
        rank: usize,
    },
    /// Compute the posterior from a measurement CSV (`time,y_1,...,y_k`).
    Infer {
        /// Measurement CSV path.
        #[arg(long)]
        measurements: PathBuf,
    },
    /// Run a configured error-vs-rank experiment.
    Experiment,
    /// Generate the 1D heat benchmark and write its Matrix Market files.
    GenHeat {
        /// State dimension (number of interior grid nodes).
        #[arg(long, default_value_t = 200)]
        d: usize,
        /// Output location as a fraction of the rod length.
        #[arg(long, default_value_t = 2.0 / 3.0)]
        output_fraction: f64,
        /// Spectral abscissa the generated operator is calibrated to.
        #[arg(long, default_value_t = -0.1, allow_hyphen_values = true)]
        target_abscissa: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ReduceMethod {
    BtQ,
    BtH,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        // A best-effort global pool; later calls with a pool already built
        // keep the existing one.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
    let mut config = ExperimentConfig::from_path(path)?;
    if let Some(seed) = cli.seed {
        config.override_master_seed(seed);
    }
    if let Some(out) = &cli.out {
        config.output.dir = out.clone();
    }
    Ok(config)
}

fn out_dir(cli: &Cli, config: Option<&ExperimentConfig>) -> Result<PathBuf, CliError> {
    if let Some(out) = &cli.out {
        return Ok(out.clone());
    }
    if let Some(config) = config {
        return Ok(config.output.dir.clone());
    }
    Err(CliError::Config("--out <dir> is required".into()))
}

fn ensure_dir(dir: &PathBuf) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display().to_string(), e))
}

fn write_text(path: &PathBuf, text: String) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path.display().to_string(), e))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::GenHeat {
            d,
            output_fraction,
            target_abscissa,
        } => {
            let dir = out_dir(&cli, None)?;
            let sys = btinfer::bench::gen_heat(*d, *output_fraction, *target_abscissa)?;
            ensure_dir(&dir)?;
            btinfer::mm::write_matrix(&dir.join("A.mtx"), sys.a())?;
            btinfer::mm::write_matrix(&dir.join("B.mtx"), sys.b().expect("identity port"))?;
            btinfer::mm::write_matrix(&dir.join("C.mtx"), sys.c())?;
            let abscissa = spectral_abscissa(sys.a())?;
            let mut manifest = String::new();
            let _ = writeln!(manifest, "benchmark = \"heat\"");
            let _ = writeln!(manifest, "d = {d}");
            let _ = writeln!(manifest, "output_fraction = {output_fraction:.16e}");
            let _ = writeln!(manifest, "target_abscissa = {target_abscissa:.16e}");
            let _ = writeln!(manifest, "abscissa = {abscissa:.16e}");
            write_text(&dir.join("manifest.toml"), manifest)?;
            println!("wrote heat benchmark (d = {d}) to {}", dir.display());
            Ok(())
        }
        Command::Experiment => {
            let config = load_config(&cli)?;
            let result = run_experiment(&config)?;
            println!(
                "experiment '{}' complete: {} rows, rel_frob_diff = {:.3e}, outputs in {}",
                config.benchmark.name,
                result.rows.len(),
                result.rel_frob_diff,
                config.output.dir.display()
            );
            Ok(())
        }
        Command::Gramian => {
            let config = load_config(&cli)?;
            let dir = out_dir(&cli, Some(&config))?;
            let sys = build_system(&config)?;
            let prior = build_prior(&config, &sys)?;
            let schedule = configured_schedule(&config)?;
            let truth = prior.sample(config.seeds.truth_seed);
            let noise =
                btinfer_cli::experiment::resolve_noise(&config, &sys, &schedule, &truth)?;
            let sys = sys.with_noise_cov(noise).map_err(stage("noise"))?;

            ensure_dir(&dir)?;
            if sys.b().is_some() {
                let p_inf = reachability_gramian(&sys).map_err(stage("gramian"))?;
                btinfer::mm::write_matrix(&dir.join("p_inf.mtx"), &p_inf)?;
            }
            let q_m = noisy_observability_gramian(&sys).map_err(stage("gramian"))?;
            let h = fisher_information_with_mode(&sys, &schedule, config.fisher.mode.to_mode())
                .map_err(stage("gramian"))?;
            btinfer::mm::write_matrix(&dir.join("q_m.mtx"), &q_m)?;
            btinfer::mm::write_matrix(&dir.join("h.mtx"), &h)?;
            let rel = (&h * schedule.h - &q_m).norm() / q_m.norm();
            let mut manifest = String::new();
            let _ = writeln!(manifest, "rel_frob_diff = {rel:.16e}");
            let _ = writeln!(manifest, "h = {:.16e}", schedule.h);
            let _ = writeln!(manifest, "n = {}", schedule.n);
            write_text(&dir.join("manifest.toml"), manifest)?;
            println!("wrote Gramians to {} (rel_frob_diff = {rel:.3e})", dir.display());
            Ok(())
        }
        Command::MakePrior => {
            let config = load_config(&cli)?;
            let dir = out_dir(&cli, Some(&config))?;
            let sys = build_system(&config)?;
            let prior = build_prior(&config, &sys)?;
            ensure_dir(&dir)?;
            btinfer::mm::write_matrix(&dir.join("gamma_pr.mtx"), &prior.cov)?;
            btinfer::mm::write_matrix(&dir.join("prior_factor.mtx"), &prior.factor.factor)?;
            if config.prior.kind == PriorKindConfig::MakeCompatible {
                let gamma0 = btinfer::mm::read_matrix(
                    config.prior.gamma0_path.as_ref().expect("validated"),
                )?;
                let delta = &prior.cov - gamma0;
                btinfer::mm::write_matrix(&dir.join("delta.mtx"), &delta)?;
            }
            let mut manifest = String::new();
            let provenance = match prior.provenance {
                PriorProvenance::SpinUp => "spin_up",
                PriorProvenance::SpinUpRidged => "spin_up_ridged",
                PriorProvenance::Modified => "modified",
                PriorProvenance::UserAsserted => "user_asserted",
            };
            let _ = writeln!(manifest, "provenance = \"{provenance}\"");
            let _ = writeln!(
                manifest,
                "residual_abscissa = {:.16e}",
                prior.residual_abscissa
            );
            write_text(&dir.join("manifest.toml"), manifest)?;
            println!(
                "wrote prior ({provenance}, residual abscissa {:.3e}) to {}",
                prior.residual_abscissa,
                dir.display()
            );
            Ok(())
        }
        Command::Reduce { method, rank } => {
            let config = load_config(&cli)?;
            let dir = out_dir(&cli, Some(&config))?;
            let sys = build_system(&config)?;
            let prior = build_prior(&config, &sys)?;
            let schedule = configured_schedule(&config)?;
            let truth = prior.sample(config.seeds.truth_seed);
            let noise =
                btinfer_cli::experiment::resolve_noise(&config, &sys, &schedule, &truth)?;
            let sys = sys.with_noise_cov(noise).map_err(stage("noise"))?;
            let core = match method {
                ReduceMethod::BtQ => bt_q_core(&sys, &prior).map_err(stage("reduce"))?,
                ReduceMethod::BtH => {
                    bt_h_core(&sys, &prior, &schedule).map_err(stage("reduce"))?
                }
            };
            let bases = core.bases(*rank).map_err(stage("reduce"))?;
            let reduction =
                project(bases, sys.a(), sys.c(), sys.b()).map_err(stage("reduce"))?;
            export_reduction(&reduction, &dir)?;
            println!(
                "wrote order-{rank} reduction (abscissa {:.3e}) to {}",
                reduction.reduced_abscissa,
                dir.display()
            );
            Ok(())
        }
        Command::Infer { measurements } => {
            let config = load_config(&cli)?;
            let dir = out_dir(&cli, Some(&config))?;
            let sys = build_system(&config)?;
            let prior = build_prior(&config, &sys)?;
            let (times, values) = read_measurements_csv(measurements)?;
            let schedule = ObservationSchedule::explicit(times).map_err(stage("infer"))?;
            if values.nrows() != sys.output_dim() {
                return Err(CliError::Config(format!(
                    "measurements have {} channels but the system has {} outputs",
                    values.nrows(),
                    sys.output_dim()
                )));
            }
            // Calibration-style noise needs a synthetic truth; recorded data
            // requires an explicit noise level.
            let noise: DMatrix<f64> = if config.noise.fraction.is_some() {
                return Err(CliError::Config(
                    "infer requires noise.sigma or noise.matrix_path, not a calibration rule"
                        .into(),
                ));
            } else {
                let truth = prior.sample(config.seeds.truth_seed);
                btinfer_cli::experiment::resolve_noise(&config, &sys, &schedule, &truth)?
            };
            let sys = sys.with_noise_cov(noise).map_err(stage("noise"))?;
            let mset = MeasurementSet {
                schedule: schedule.clone(),
                values,
                truth: None,
                seed: None,
            };
            let posterior = full_posterior(&prior, &sys, &mset).map_err(stage("infer"))?;
            let z = accumulate_adjoint(&sys, &schedule, &mset.values).map_err(stage("infer"))?;
            ensure_dir(&dir)?;
            let mean = DMatrix::from_fn(posterior.mean.len(), 1, |i, _| posterior.mean[i]);
            btinfer::mm::write_matrix(&dir.join("posterior_mean.mtx"), &mean)?;
            btinfer::mm::write_matrix(&dir.join("posterior_cov.mtx"), &posterior.cov)?;
            let adjoint = DMatrix::from_fn(z.len(), 1, |i, _| z[i]);
            btinfer::mm::write_matrix(&dir.join("adjoint_data.mtx"), &adjoint)?;
            println!(
                "wrote posterior over {} observations to {}",
                mset.schedule.n,
                dir.display()
            );
            Ok(())
        }
    }
}

fn configured_schedule(config: &ExperimentConfig) -> Result<ObservationSchedule, CliError> {
    sample_schedule(
        config.schedule.kind.to_kind(),
        config.schedule.h,
        config.schedule.n,
        config.schedule.seed,
    )
    .map_err(stage("schedule"))
}
