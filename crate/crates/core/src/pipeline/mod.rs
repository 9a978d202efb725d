//! Offline training and tuning, online prediction, evaluation and timing.

pub mod eval;
pub mod timing;
pub mod tune;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use eval::{evaluate, online_predict, EvalOptions, EvalReport, LatentSource, OnlinePrediction, RolloutFailure};
pub use timing::{median, timing_report, OfflineTimings, TimingReport};
pub use tune::{default_update, offline_tune, TuneConfig, TuneOutcome, TuneRecord, TuneState, SUPPORTED_MEMORY};

use crate::error::{CoreError, Result, StageExt};
use crate::reduction::{
    cae_fit, encode_dataset, pod_fit, reconstruction_error, CaeConfig, CaeTraining, ErrorCurve, Reducer,
};
use crate::snapshots::{build_dataset, sample_parameters, DatasetConfig, SamplerConfig, SnapshotSet};
use crate::solvers::ProblemConfig;
use crate::stepper::{train_stepper, StepperConfig, StepperModel, StepperTraining};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReductionMethod {
    Pod,
    Cae,
}

impl std::fmt::Display for ReductionMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ReductionMethod::Pod => "pod",
            ReductionMethod::Cae => "cae",
        })
    }
}

/// Reduction choice; the training fields apply to the autoencoder only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReductionConfig {
    pub method: ReductionMethod,
    pub n_latent: usize,
    pub alpha: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub filters: Vec<usize>,
    pub kernel: usize,
    pub batch_norm: bool,
    pub validation_fraction: f64,
    pub max_snapshots: Option<usize>,
}

impl Default for ReductionConfig {
    fn default() -> Self {
        let c = CaeConfig::default();
        Self {
            method: ReductionMethod::Cae,
            n_latent: c.n_latent,
            alpha: c.alpha,
            epochs: c.epochs,
            batch_size: c.batch_size,
            learning_rate: c.learning_rate,
            seed: c.seed,
            filters: c.filters,
            kernel: c.kernel,
            batch_norm: c.batch_norm,
            validation_fraction: c.validation_fraction,
            max_snapshots: c.max_snapshots,
        }
    }
}

impl ReductionConfig {
    pub fn cae_config(&self) -> CaeConfig {
        CaeConfig {
            n_latent: self.n_latent,
            alpha: self.alpha,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: self.seed,
            filters: self.filters.clone(),
            kernel: self.kernel,
            batch_norm: self.batch_norm,
            validation_fraction: self.validation_fraction,
            max_snapshots: self.max_snapshots,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_latent == 0 {
            return Err(CoreError::config("reduction.n_latent must be positive"));
        }
        if self.method == ReductionMethod::Cae {
            self.cae_config().validate()?;
        }
        Ok(())
    }
}

/// Everything the offline stage needs.
#[derive(Clone, Debug, PartialEq)]
pub struct OfflineConfig {
    pub problem: ProblemConfig,
    pub sampler: SamplerConfig,
    pub dataset: DatasetConfig,
    pub reduction: ReductionConfig,
    pub stepper: StepperConfig,
    pub eval: EvalOptions,
}

impl OfflineConfig {
    pub fn validate(&self) -> Result<()> {
        self.problem.validate()?;
        self.sampler.validate()?;
        if self.dataset.stride == 0 {
            return Err(CoreError::config("problem.stride must be at least 1"));
        }
        self.reduction.validate()?;
        self.stepper_config().validate()
    }

    /// Stepper configuration with the latent and parameter widths filled in.
    pub fn stepper_config(&self) -> StepperConfig {
        StepperConfig {
            n_latent: self.reduction.n_latent,
            n_params: self.problem.tag().n_params(),
            ..self.stepper.clone()
        }
    }
}

/// Algorithm steps 1 and 2: sample parameters and solve every trajectory.
pub fn generate_dataset(
    cfg: &OfflineConfig,
    progress: Option<&(dyn Fn(usize, usize) + Sync)>,
) -> Result<SnapshotSet> {
    let samples = sample_parameters(&cfg.sampler, cfg.problem.tag())?;
    build_dataset(&cfg.problem, &samples, &cfg.dataset, cfg.sampler.seed, progress)
}

/// Fits POD or the autoencoder on the training split.
pub fn fit_reduction(set: &SnapshotSet, cfg: &ReductionConfig) -> Result<(Box<dyn Reducer>, Option<CaeTraining>)> {
    cfg.validate()?;
    match cfg.method {
        ReductionMethod::Pod => Ok((Box::new(pod_fit(set, cfg.n_latent)?), None)),
        ReductionMethod::Cae => {
            let (m, h) = cae_fit(set, &cfg.cae_config())?;
            Ok((Box::new(m), Some(h)))
        }
    }
}

/// Encodes the training trajectories and trains the stepper on them.
pub fn fit_stepper(
    reducer: &dyn Reducer,
    set: &SnapshotSet,
    cfg: &StepperConfig,
) -> Result<(StepperModel, StepperTraining)> {
    reducer.check_dataset(set)?;
    if cfg.n_latent != reducer.n_latent() {
        return Err(CoreError::mismatch("latent dimension", reducer.n_latent(), cfg.n_latent));
    }
    let latent = encode_dataset(reducer, &set.train())?;
    train_stepper(StepperModel::new(cfg.clone())?, &latent)
}

pub struct OfflineResult {
    pub dataset: SnapshotSet,
    pub reducer: Box<dyn Reducer>,
    pub cae_history: Option<CaeTraining>,
    pub stepper: StepperModel,
    pub stepper_history: StepperTraining,
    /// Reconstruction error of the reducer alone on the test split.
    pub reconstruction: ErrorCurve,
    pub report: EvalReport,
    pub timings: OfflineTimings,
}

/// Runs the full offline training: dataset, reduction, stepper and
/// held-out evaluation. Errors carry the failing stage name.
pub fn offline_train(cfg: &OfflineConfig) -> Result<OfflineResult> {
    cfg.validate()?;
    let t0 = Instant::now();
    let dataset = generate_dataset(cfg, None).stage("dataset")?;
    let t1 = Instant::now();
    let (reducer, cae_history) = fit_reduction(&dataset, &cfg.reduction).stage("reduction")?;
    let t2 = Instant::now();
    let (stepper, stepper_history) = fit_stepper(reducer.as_ref(), &dataset, &cfg.stepper_config()).stage("stepper")?;
    let t3 = Instant::now();
    dataset.assert_disjoint().stage("evaluation")?;
    let test = dataset.test();
    let reconstruction = reconstruction_error(reducer.as_ref(), &test).stage("evaluation")?;
    let report = evaluate(
        reducer.as_ref(),
        LatentSource::Stepper(&stepper),
        &test,
        Some(&dataset.train()),
        &cfg.eval,
    )
    .stage("evaluation")?;
    let timings = OfflineTimings {
        dataset_seconds: (t1 - t0).as_secs_f64(),
        reduction_seconds: (t2 - t1).as_secs_f64(),
        stepper_seconds: (t3 - t2).as_secs_f64(),
    };
    Ok(OfflineResult {
        dataset,
        reducer,
        cae_history,
        stepper,
        stepper_history,
        reconstruction,
        report,
        timings,
    })
}
