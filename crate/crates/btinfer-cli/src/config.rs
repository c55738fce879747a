//! TOML experiment configuration: `key = value` entries grouped in sections,
//! unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub benchmark: BenchmarkSection,
    pub schedule: ScheduleSection,
    pub noise: NoiseSection,
    pub prior: PriorSection,
    #[serde(default)]
    pub ranks: RanksSection,
    #[serde(default)]
    pub methods: MethodsSection,
    #[serde(default)]
    pub seeds: SeedsSection,
    #[serde(default)]
    pub fisher: FisherSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub replicates: ReplicatesSection,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSection {
    pub name: String,
    pub source: BenchmarkSource,
    // generated_heat parameters
    pub d: Option<usize>,
    pub output_fraction: Option<f64>,
    pub target_abscissa: Option<f64>,
    // file-backed parameters
    pub a_path: Option<PathBuf>,
    pub b_path: Option<PathBuf>,
    pub c_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkSource {
    GeneratedHeat,
    Files,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub kind: ScheduleKindConfig,
    pub h: f64,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKindConfig {
    Equispaced,
    UniformSubinterval,
    Poisson,
}

impl ScheduleKindConfig {
    pub fn to_kind(self) -> btinfer::inference::ScheduleKind {
        match self {
            ScheduleKindConfig::Equispaced => btinfer::inference::ScheduleKind::Equispaced,
            ScheduleKindConfig::UniformSubinterval => {
                btinfer::inference::ScheduleKind::UniformSubinterval
            }
            ScheduleKindConfig::Poisson => btinfer::inference::ScheduleKind::Poisson,
        }
    }
}

/// Exactly one of the three specifications must be present.
#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    /// Per-channel standard deviations; `Γ_ε = diag(σ²)`.
    pub sigma: Option<Vec<f64>>,
    /// Calibration rule: σ per channel is this fraction of the max
    /// noiseless output magnitude of the drawn truth.
    pub fraction: Option<f64>,
    /// Full covariance from a Matrix Market file.
    pub matrix_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSection {
    pub kind: PriorKindConfig,
    pub gamma0_path: Option<PathBuf>,
    pub ridge: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKindConfig {
    /// Stationary covariance driven through the system's input port.
    SpinUp,
    /// Stationary covariance driven through an identity port.
    SpinUpIdentity,
    /// Nearest-NSD compatibility repair of a covariance file.
    MakeCompatible,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RanksSection {
    /// Explicit rank grid; when absent, 1..=20 then 25, 30, ..., 60,
    /// capped at the state dimension.
    pub values: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MethodsSection {
    pub enabled: Vec<Method>,
}

impl Default for MethodsSection {
    fn default() -> Self {
        MethodsSection {
            enabled: vec![Method::BtQ, Method::BtH, Method::Olr, Method::Olru],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    BtQ,
    BtH,
    Olr,
    Olru,
    Full,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::BtQ => "bt-q",
            Method::BtH => "bt-h",
            Method::Olr => "olr",
            Method::Olru => "olru",
            Method::Full => "full",
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SeedsSection {
    pub truth_seed: u64,
    pub noise_seed: u64,
}

impl Default for SeedsSection {
    fn default() -> Self {
        SeedsSection {
            truth_seed: 0,
            noise_seed: 1,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FisherSection {
    #[serde(default)]
    pub mode: FisherModeConfig,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FisherModeConfig {
    Direct,
    Doubling,
    #[default]
    Auto,
}

impl FisherModeConfig {
    pub fn to_mode(self) -> btinfer::inference::FisherMode {
        match self {
            FisherModeConfig::Direct => btinfer::inference::FisherMode::Direct,
            FisherModeConfig::Doubling => btinfer::inference::FisherMode::Doubling,
            FisherModeConfig::Auto => btinfer::inference::FisherMode::Auto,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ReplicatesSection {
    pub n: usize,
}

impl Default for ReplicatesSection {
    fn default() -> Self {
        ReplicatesSection { n: 1 }
    }
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let config: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        match self.benchmark.source {
            BenchmarkSource::GeneratedHeat => {
                if self.benchmark.d.is_none() {
                    return Err(CliError::Config(
                        "benchmark.d is required for generated_heat".into(),
                    ));
                }
            }
            BenchmarkSource::Files => {
                if self.benchmark.a_path.is_none() || self.benchmark.c_path.is_none() {
                    return Err(CliError::Config(
                        "benchmark.a_path and benchmark.c_path are required for files".into(),
                    ));
                }
            }
        }
        let noise_specs = [
            self.noise.sigma.is_some(),
            self.noise.fraction.is_some(),
            self.noise.matrix_path.is_some(),
        ]
        .iter()
        .filter(|b| **b)
        .count();
        if noise_specs != 1 {
            return Err(CliError::Config(
                "exactly one of noise.sigma, noise.fraction, noise.matrix_path is required".into(),
            ));
        }
        if let Some(f) = self.noise.fraction {
            if !f.is_finite() || f <= 0.0 || f >= 1.0 {
                return Err(CliError::Config(format!(
                    "noise.fraction = {f} must lie in (0, 1)"
                )));
            }
        }
        if self.methods.enabled.is_empty() {
            return Err(CliError::Config("methods.enabled must be nonempty".into()));
        }
        if self.prior.kind == PriorKindConfig::MakeCompatible && self.prior.gamma0_path.is_none() {
            return Err(CliError::Config(
                "prior.gamma0_path is required for make_compatible".into(),
            ));
        }
        if let Some(values) = &self.ranks.values {
            if values.is_empty() || values.contains(&0) {
                return Err(CliError::Config(
                    "ranks.values must be nonempty positive integers".into(),
                ));
            }
        }
        if self.replicates.n == 0 {
            return Err(CliError::Config("replicates.n must be at least 1".into()));
        }
        if !self.schedule.h.is_finite() || self.schedule.h <= 0.0 || self.schedule.n == 0 {
            return Err(CliError::Config(
                "schedule.h must be positive and schedule.n at least 1".into(),
            ));
        }
        Ok(())
    }

    /// The rank grid: explicit values, or 1..=20 then 25, 30, ..., 60,
    /// capped at the state dimension.
    pub fn rank_grid(&self, d: usize) -> Result<Vec<usize>, CliError> {
        match &self.ranks.values {
            Some(values) => {
                let mut grid = values.clone();
                grid.sort_unstable();
                grid.dedup();
                if grid.iter().any(|&r| r > d) {
                    return Err(CliError::Config(format!(
                        "ranks.values contains an entry above the state dimension {d}"
                    )));
                }
                Ok(grid)
            }
            None => {
                let mut grid: Vec<usize> = (1..=20.min(d)).collect();
                let mut r = 25;
                while r <= 60.min(d) {
                    grid.push(r);
                    r += 5;
                }
                Ok(grid)
            }
        }
    }

    /// Applies the global `--seed` override: schedule, truth, and noise
    /// seeds become `seed`, `seed+1`, `seed+2`.
    pub fn override_master_seed(&mut self, seed: u64) {
        self.schedule.seed = seed;
        self.seeds.truth_seed = seed.wrapping_add(1);
        self.seeds.noise_seed = seed.wrapping_add(2);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEAT: &str = r#"
[benchmark]
name = "heat"
source = "generated_heat"
d = 20
output_fraction = 0.6666666666666666
target_abscissa = -0.1

[schedule]
kind = "equispaced"
h = 0.1
n = 100
seed = 0

[noise]
sigma = [0.008]

[prior]
kind = "spin_up_identity"

[methods]
enabled = ["bt-q", "olru"]

[seeds]
truth_seed = 1
noise_seed = 2

[output]
dir = "out"
"#;

    #[test]
    fn parses_minimal_config() {
        let config: ExperimentConfig = toml::from_str(HEAT).unwrap();
        config.validate().unwrap();
        assert_eq!(config.benchmark.d, Some(20));
        assert_eq!(config.fisher.mode, FisherModeConfig::Auto);
        assert_eq!(config.replicates.n, 1);
        assert_eq!(config.rank_grid(20).unwrap().len(), 20);
        assert_eq!(
            config.rank_grid(64).unwrap(),
            (1..=20).chain([25, 30, 35, 40, 45, 50, 55, 60]).collect::<Vec<_>>()
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = HEAT.replace("[output]", "[output]\ntypo_key = 3");
        let parsed: Result<ExperimentConfig, _> = toml::from_str(&bad);
        assert!(parsed.is_err());
    }

    #[test]
    fn noise_must_be_specified_exactly_once() {
        let bad = HEAT.replace("sigma = [0.008]", "sigma = [0.008]\nfraction = 0.1");
        let config: ExperimentConfig = toml::from_str(&bad).unwrap();
        assert!(config.validate().is_err());
        let none = HEAT.replace("sigma = [0.008]", "");
        let config: ExperimentConfig = toml::from_str(&none).unwrap();
        assert!(config.validate().is_err());
    }
}
