use std::path::{Path, PathBuf};

use romforge_core::pipeline::{EvalOptions, OfflineConfig, ReductionConfig};
use romforge_core::snapshots::{DatasetConfig, SamplerConfig};
use romforge_core::solvers::{AdvectionConfig, CavityConfig, HeatConfig, Interpolation, ProblemConfig};
use romforge_core::stepper::StepperConfig;
use romforge_core::ProblemTag;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SEED_ENV: &str = "ROMFORGE_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub tag: ProblemTag,
    pub grid: Option<usize>,
    pub dt: Option<f64>,
    pub n_steps: Option<usize>,
    #[serde(default = "one")]
    pub stride: usize,
    pub resample: Option<usize>,
    pub interpolation: Option<Interpolation>,
    pub startup_steps: Option<usize>,
    pub donor_cell: Option<f64>,
    pub tolerance: Option<f64>,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub n_train: usize,
    #[serde(default = "fifteen")]
    pub n_test: usize,
    #[serde(default)]
    pub seed: u64,
    pub bounds: Option<Vec<[f64; 2]>>,
}

fn fifteen() -> usize {
    15
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub probes: Option<Vec<usize>>,
    pub output_dir: PathBuf,
    pub timing_repeats: usize,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            probes: None,
            output_dir: PathBuf::from("romforge-out"),
            timing_repeats: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSection,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub reduction: ReductionConfig,
    /// `n_latent` and `n_params` are derived from the reduction and problem.
    #[serde(default)]
    pub stepper: StepperConfig,
    #[serde(default)]
    pub evaluation: EvaluationSection,
}

fn unsupported(tag: ProblemTag, key: &str) -> CliError {
    CliError::Validation(format!("problem.{key} is not an option of the {} problem", tag.as_str()))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {}", e.to_string().trim_end())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Replaces every seed in the configuration.
    pub fn override_seed(&mut self, seed: u64) {
        self.dataset.seed = seed;
        self.reduction.seed = seed;
        self.stepper.seed = seed;
    }

    /// Applies `--seed`, falling back to the environment override.
    pub fn apply_seed(&mut self, flag: Option<u64>) -> Result<(), CliError> {
        let env = match std::env::var(SEED_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse::<u64>()
                    .map_err(|_| CliError::Validation(format!("{SEED_ENV}={v} is not an unsigned integer")))?,
            ),
            Err(_) => None,
        };
        if let Some(s) = flag.or(env) {
            self.override_seed(s);
        }
        Ok(())
    }

    pub fn problem_config(&self) -> Result<ProblemConfig, CliError> {
        let p = &self.problem;
        let tag = p.tag;
        let cfg = match tag {
            ProblemTag::Heat => {
                if p.interpolation.is_some() {
                    return Err(unsupported(tag, "interpolation"));
                }
                if p.donor_cell.is_some() {
                    return Err(unsupported(tag, "donor_cell"));
                }
                let d = HeatConfig::default();
                ProblemConfig::Heat(HeatConfig {
                    grid: p.grid.unwrap_or(d.grid),
                    dt: p.dt.unwrap_or(d.dt),
                    n_steps: p.n_steps.unwrap_or(d.n_steps),
                    startup_steps: p.startup_steps.unwrap_or(d.startup_steps),
                    tolerance: p.tolerance.unwrap_or(d.tolerance),
                })
            }
            ProblemTag::Advection => {
                for (set, key) in [
                    (p.startup_steps.is_some(), "startup_steps"),
                    (p.donor_cell.is_some(), "donor_cell"),
                    (p.tolerance.is_some(), "tolerance"),
                ] {
                    if set {
                        return Err(unsupported(tag, key));
                    }
                }
                let d = AdvectionConfig::default();
                ProblemConfig::Advection(AdvectionConfig {
                    grid: p.grid.unwrap_or(d.grid),
                    dt: p.dt.unwrap_or(d.dt),
                    n_steps: p.n_steps.unwrap_or(d.n_steps),
                    interpolation: p.interpolation.unwrap_or(d.interpolation),
                })
            }
            ProblemTag::Cavity => {
                if p.interpolation.is_some() {
                    return Err(unsupported(tag, "interpolation"));
                }
                if p.startup_steps.is_some() {
                    return Err(unsupported(tag, "startup_steps"));
                }
                let d = CavityConfig::default();
                ProblemConfig::Cavity(CavityConfig {
                    grid: p.grid.unwrap_or(d.grid),
                    dt: p.dt.unwrap_or(d.dt),
                    n_steps: p.n_steps.unwrap_or(d.n_steps),
                    donor_cell: p.donor_cell.unwrap_or(d.donor_cell),
                    tolerance: p.tolerance.unwrap_or(d.tolerance),
                })
            }
        };
        Ok(cfg)
    }

    /// The pipeline configuration, validated before any work starts.
    pub fn offline(&self) -> Result<OfflineConfig, CliError> {
        let cfg = OfflineConfig {
            problem: self.problem_config()?,
            sampler: SamplerConfig {
                n_train: self.dataset.n_train,
                n_test: self.dataset.n_test,
                seed: self.dataset.seed,
                bounds: self.dataset.bounds.clone(),
            },
            dataset: DatasetConfig {
                stride: self.problem.stride,
                resample: self.problem.resample,
            },
            reduction: self.reduction.clone(),
            stepper: self.stepper.clone(),
            eval: EvalOptions {
                probes: self.evaluation.probes.clone(),
            },
        };
        cfg.validate()?;
        cfg.sampler.sampling_box(cfg.problem.tag())?;
        if self.evaluation.timing_repeats < 3 {
            return Err(CliError::Validation("evaluation.timing_repeats must be at least 3".into()));
        }
        if let Some(r) = self.problem.resample {
            if r < 8 {
                return Err(CliError::Validation("problem.resample must be at least 8".into()));
            }
        }
        Ok(cfg)
    }
}
